"""Domain classifier, adapter registry and the hard / soft / random routing policies."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from catchvqa.backbone import patchify
from catchvqa.container import read_container, write_container
from catchvqa.domains import DomainId
from catchvqa.errors import ConfigError, HookLookupError, StateError
from catchvqa.hooks import ADAPTER_SLOT
from catchvqa.tensor import (
    AdamW,
    ParameterStore,
    Tensor,
    add,
    as_tensor,
    gelu,
    linear,
    mul,
    softmax_cross_entropy,
)

POLICIES = ("hard", "soft", "random")


# ---------------------------------------------------------------- classifier


class DomainClassifier:
    """Patch-mean pooling -> Linear -> GELU -> Linear -> K logits."""

    def __init__(self, domains, image_size=32, patch_size=8, hidden=32, seed=0, init_std=0.1):
        self.domains = list(domains)
        self.image_size = image_size
        self.patch_size = patch_size
        self.hidden = hidden
        rng = np.random.default_rng(seed)
        k = len(self.domains)
        d_in = patch_size * patch_size
        self.params = ParameterStore()
        self.params.new("clf.fc1.weight", rng.normal(0.0, init_std, size=(d_in, hidden)))
        self.params.new("clf.fc1.bias", np.zeros(hidden))
        self.params.new("clf.fc2.weight", rng.normal(0.0, init_std, size=(hidden, k)))
        self.params.new("clf.fc2.bias", np.zeros(k))

    @property
    def num_domains(self):
        return len(self.domains)

    def _t(self, name):
        return self.params[name].tensor

    def features(self, images):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        s = self.image_size
        if images.ndim != 3 or images.shape[1:] != (s, s):
            raise ConfigError(f"classifier expects {s}x{s} images, got shape {images.shape}")
        return patchify(images, self.patch_size).mean(axis=1) - 0.5

    def embed(self, images):
        """Penultimate representation [B, hidden]."""
        x = Tensor(self.features(images))
        return gelu(linear(x, self._t("clf.fc1.weight"), self._t("clf.fc1.bias")))

    def logits(self, images):
        return linear(self.embed(images), self._t("clf.fc2.weight"), self._t("clf.fc2.bias"))

    def classify(self, images):
        """Softmax probabilities; [K] for one image, [B, K] for a batch."""
        single = np.ndim(images) == 2
        z = self.logits(images).data
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return p[0] if single else p

    def freeze(self):
        self.params.freeze()

    def checksum(self):
        return self.params.checksum()

    def save(self, path):
        meta = {
            "kind": "classifier",
            "domains": [[d.index, d.name] for d in self.domains],
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "hidden": self.hidden,
        }
        return write_container(path, self.params.state_dict(), meta)

    @classmethod
    def load(cls, path):
        tensors, meta, _ = read_container(path)
        if meta.get("kind") != "classifier":
            raise ConfigError(f"{path} is not a classifier checkpoint")
        clf = cls([DomainId(i, n) for i, n in meta["domains"]], meta["image_size"], meta["patch_size"], meta["hidden"])
        clf.params.load_state_dict(tensors)
        clf.freeze()
        return clf


def train_classifier(dataset, domains=None, epochs=5, lr=1e-3, batch_size=64, seed=0, hidden=32, log=None):
    """Cross-entropy training on image-only input; returned frozen."""
    domains = list(domains or dataset.domains())
    if len(domains) < 2:
        raise ConfigError("domain classifier needs at least 2 domains")
    pos = {d: k for k, d in enumerate(domains)}
    keep = [i for i, s in enumerate(dataset) if s.domain in pos]
    images = dataset.images[keep]
    labels = np.array([pos[dataset[i].domain] for i in keep], dtype=np.int64)
    clf = DomainClassifier(domains, hidden=hidden, seed=seed)
    opt = AdamW(clf.params.trainable(), lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(labels))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss = softmax_cross_entropy(clf.logits(images[idx]), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(order))
        if log is not None:
            log({"stage": "classifier", "epoch": epoch, "train_loss": history[-1]})
    clf.freeze()
    clf.history = history
    return clf


def classifier_accuracy(clf, dataset):
    pos = {d: k for k, d in enumerate(clf.domains)}
    pred = clf.classify(dataset.images).argmax(axis=1)
    gold = np.array([pos[s.domain] for s in dataset])
    return float((pred == gold).mean())


def compute_prototypes(clf, dataset):
    """Mean penultimate embedding per classifier domain over ``dataset``."""
    emb = clf.embed(dataset.images).data
    dom = [s.domain for s in dataset]
    protos = OrderedDict()
    for d in clf.domains:
        rows = [i for i, x in enumerate(dom) if x == d]
        if not rows:
            raise StateError(f"no samples of domain {d.name} to build a prototype")
        protos[d.name] = emb[rows].mean(axis=0)
    return protos


# ---------------------------------------------------------------- registry


class AdapterRegistry:
    """Domain -> AdapterPair, plus soft-routing prototypes and an optional default domain."""

    def __init__(self, pairs=(), default_domain=None, prototypes=None):
        self._pairs = OrderedDict()
        for p in pairs:
            self.add(p)
        self.default_domain = default_domain
        self.prototypes = OrderedDict(prototypes or {})

    def add(self, pair):
        if pair.domain in self._pairs:
            raise ConfigError(f"registry already holds domain {pair.domain.name}")
        if self._pairs:
            ref = next(iter(self._pairs.values())).config
            if (ref.d_q, ref.d_v) != (pair.config.d_q, pair.config.d_v):
                raise ConfigError("all adapter pairs must share backbone widths")
        self._pairs[pair.domain] = pair

    def get(self, domain):
        if isinstance(domain, str):
            for d in self._pairs:
                if d.name == domain:
                    return self._pairs[d]
        elif domain in self._pairs:
            return self._pairs[domain]
        known = ", ".join(d.name for d in self._pairs)
        raise HookLookupError(f"no adapters registered for domain {domain!s}; registered: {known}")

    def __contains__(self, domain):
        return domain in self._pairs

    def __len__(self):
        return len(self._pairs)

    def domains(self):
        return list(self._pairs)

    def pairs(self):
        return list(self._pairs.values())

    def prototype_matrix(self, domains):
        missing = [d.name for d in domains if d.name not in self.prototypes]
        if missing:
            raise StateError(f"registry has no prototypes for {missing}; compute them before soft routing")
        return np.stack([self.prototypes[d.name] for d in domains])

    def save_manifest(self, path, adapter_paths, classifier_path):
        manifest = {
            "domains": [[d.index, d.name] for d in self._pairs],
            "adapters": {d.name: str(adapter_paths[d.name]) for d in self._pairs},
            "classifier": str(classifier_path) if classifier_path else None,
            "default_domain": self.default_domain.name if self.default_domain else None,
            "prototypes": {k: [float(x) for x in v] for k, v in self.prototypes.items()},
        }
        Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest

    @classmethod
    def load_manifest(cls, path, backbone_config=None):
        from catchvqa.adapters import load_adapter

        path = Path(path)
        manifest = json.loads(path.read_text())
        pairs = []
        for index, name in manifest["domains"]:
            p = Path(manifest["adapters"][name])
            if not p.is_absolute():
                p = path.parent / p
            pairs.append(load_adapter(p, backbone_config))
        reg = cls(pairs, prototypes={k: np.array(v) for k, v in manifest["prototypes"].items()})
        if manifest.get("default_domain"):
            reg.default_domain = reg.get(manifest["default_domain"]).domain
        return reg, manifest


# ---------------------------------------------------------------- decisions


@dataclass
class RoutingDecision:
    policy: str
    probabilities: np.ndarray
    selected: DomainId | None = None
    weights: np.ndarray | None = None

    def weight_vector(self, domains):
        if self.weights is not None:
            return np.asarray(self.weights, dtype=np.float64)
        w = np.zeros(len(domains))
        w[domains.index(self.selected)] = 1.0
        return w


def _softmax(v):
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max()
    e = np.exp(z)
    return e / e.sum()


def route_hard(probs, domains=None):
    probs = np.asarray(probs, dtype=np.float64)
    k = int(np.argmax(probs))  # first maximum: lowest index wins ties
    selected = domains[k] if domains is not None else k
    return RoutingDecision("hard", probs, selected=selected)


def soft_weights(similarities, temperature=1.0):
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    return _softmax(np.asarray(similarities, dtype=np.float64) / temperature)


def route_soft(probs, similarities, temperature=1.0):
    """Weights = softmax(similarity / temperature); similarity is minus squared prototype distance."""
    return RoutingDecision("soft", np.asarray(probs, dtype=np.float64), weights=soft_weights(similarities, temperature))


def route_random(k, rng, domains=None):
    if k < 1:
        raise ConfigError("need at least one domain")
    i = int(rng.integers(k))
    probs = np.full(k, 1.0 / k)
    return RoutingDecision("random", probs, selected=domains[i] if domains is not None else i)


def prototype_similarities(clf, images, prototypes):
    """-||embed(x) - prototype_k||^2 for every image and prototype row: [B, K]."""
    emb = clf.embed(images).data
    diff = emb[:, None, :] - prototypes[None, :, :]
    return -(diff * diff).sum(axis=2)


class Router:
    """Binds a classifier to a registry and produces per-image routing decisions.

    Besides the three published policies it supports ``oracle`` (gold domain)
    and ``fixed`` (registry default domain for every input).
    """

    def __init__(self, classifier, registry):
        self.classifier = classifier
        self.registry = registry
        missing = [d.name for d in classifier.domains if d not in registry]
        if missing:
            raise ConfigError(f"classifier domains without adapters: {missing}")

    @property
    def domains(self):
        return self.classifier.domains

    def decide(self, images, policy="hard", temperature=1.0, rng=None, gold=None):
        probs = self.classifier.classify(np.asarray(images))
        if probs.ndim == 1:
            probs = probs[None]
        doms = self.domains
        if policy == "hard":
            return [route_hard(p, doms) for p in probs]
        if policy == "soft":
            protos = self.registry.prototype_matrix(doms)
            sims = prototype_similarities(self.classifier, images, protos)
            return [route_soft(p, s, temperature) for p, s in zip(probs, sims)]
        if policy == "random":
            if rng is None:
                raise ConfigError("random routing needs an rng")
            return [route_random(len(doms), rng, doms) for _ in probs]
        if policy == "oracle":
            return [RoutingDecision("oracle", p, selected=g) for p, g in zip(probs, gold)]
        if policy == "fixed":
            if self.registry.default_domain is None:
                raise StateError("fixed routing needs registry.default_domain")
            return [RoutingDecision("fixed", p, selected=self.registry.default_domain) for p in probs]
        raise ConfigError(f"unknown routing policy {policy!r}")


# ---------------------------------------------------------------- output mixing


class AdapterMixture:
    """Per-sample convex mix of adapter *outputs*: prefixes and visual deltas.

    ``weights`` is [B, K] over ``pairs``. Columns that are zero for the whole
    batch are skipped; a one-hot row reproduces the single adapter exactly.
    """

    def __init__(self, pairs, weights, use_prompt=True, use_visual=True):
        self.pairs = list(pairs)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.active = [k for k in range(len(self.pairs)) if np.any(self.weights[:, k] != 0.0)]
        self.use_prompt = use_prompt
        self.use_visual = use_visual

    def _w(self, k, ndim):
        return self.weights[:, k].reshape((-1,) + (1,) * (ndim - 1))

    def prefix(self):
        if not self.use_prompt or not self.active:
            return None
        out = None
        for k in self.active:
            p = self.pairs[k].prompt.prefix_tensor()
            term = mul(p, self._w(k, 3))
            out = term if out is None else add(out, term)
        return out

    def layers(self):
        if not self.use_visual:
            return []
        return sorted({layer for k in self.active for layer in self.pairs[k].visual.layers})

    def hook(self, layer):
        def transform(h):
            out = None
            for k in self.active:
                vis = self.pairs[k].visual
                if layer not in vis.layers:
                    continue
                term = mul(vis.delta(layer, h), self._w(k, 3))
                out = term if out is None else add(out, term)
            return out if out is not None else as_tensor(np.zeros(h.shape))

        return transform

    def install(self, backbone):
        """Register hooks + bind prefix; returns a callable that undoes both."""
        engine = backbone.hooks
        engine.clear(ADAPTER_SLOT)
        handles = [engine.register(backbone.vision_site(l), self.hook(l)) for l in self.layers()]
        backbone.bind_prefix(self.prefix())

        def uninstall():
            for h in handles:
                h.remove()
            backbone.bind_prefix(None)

        return uninstall
