"""Per-domain Prompt Adapter (trainable prefix rows) and Visual Adapter
(bottleneck residual MLP at selected vision blocks)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from catchvqa.container import read_container, write_container
from catchvqa.domains import DomainId
from catchvqa.errors import ConfigError, ContractError, ShapeError
from catchvqa.tensor import (
    ParameterStore,
    add,
    as_tensor,
    broadcast_rows,
    concat,
    gelu,
    matmul,
    relu,
    transpose,
)

ACTIVATIONS = {"gelu": gelu, "relu": relu}


@dataclass(frozen=True)
class AdapterConfig:
    prefix_len: int = 10
    d_q: int = 64
    d_v: int = 64
    bottleneck: int = 16
    layers: tuple = (4, 8)
    activation: str = "gelu"
    use_bias: bool = True
    init_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(x) for x in self.layers))
        if self.prefix_len < 0:
            raise ConfigError("prefix_len must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if len(set(self.layers)) != len(self.layers) or any(x < 1 for x in self.layers):
            raise ConfigError(f"layers must be distinct 1-based indices, got {self.layers}")

    def validate_for(self, backbone_config):
        if self.d_q != backbone_config.d_q or self.d_v != backbone_config.d_v:
            raise ConfigError(
                f"adapter widths d_q={self.d_q}, d_v={self.d_v} do not match backbone "
                f"d_q={backbone_config.d_q}, d_v={backbone_config.d_v}"
            )
        if self.layers and max(self.layers) > backbone_config.vision_layers:
            raise ConfigError(
                f"injection layer {max(self.layers)} beyond {backbone_config.vision_layers} vision layers"
            )

    def to_dict(self):
        d = asdict(self)
        d["layers"] = list(self.layers)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def prepend_prefix(prefix, embeddings):
    """``[prefix; embeddings]`` along the sequence axis; returns (sequence, prefix length).

    ``prefix`` may be None, [l, d] shared across the batch, or [B, l, d].
    """
    if prefix is None:
        return embeddings, 0
    prefix = as_tensor(prefix)
    l = prefix.shape[-2]
    if l == 0:
        return embeddings, 0
    if prefix.shape[-1] != embeddings.shape[-1]:
        raise ShapeError(f"prefix width {prefix.shape[-1]} != embedding width {embeddings.shape[-1]}")
    if embeddings.ndim == 2:
        if prefix.ndim != 2:
            raise ShapeError("batched prefix needs batched embeddings")
        return concat([prefix, embeddings], axis=0), l
    if prefix.ndim == 2:
        prefix = broadcast_rows(prefix, embeddings.shape[0])
    elif prefix.shape[0] != embeddings.shape[0]:
        raise ShapeError(f"prefix batch {prefix.shape[0]} != embedding batch {embeddings.shape[0]}")
    return concat([prefix, embeddings], axis=1), l


class PromptAdapter:
    def __init__(self, domain, store, prefix_len):
        self.domain = domain
        self.l = prefix_len
        self._store = store
        self.name = f"adapter.{domain.name}.prompt.prefix"

    @property
    def prefix(self):
        return self._store[self.name]

    def prefix_tensor(self):
        return self.prefix.tensor

    def forward(self, question_embeddings):
        """[n, d_q] or [B, n, d_q] -> same with l prefix rows prepended."""
        return prepend_prefix(self.prefix_tensor(), question_embeddings)[0]


class VisualAdapter:
    def __init__(self, domain, store, layers, activation, use_bias):
        self.domain = domain
        self.layers = tuple(layers)
        self.activation = activation
        self.use_bias = use_bias
        self._store = store
        self._act = ACTIVATIONS[activation]

    def _p(self, layer, name):
        return self._store[f"adapter.{self.domain.name}.visual.{layer}.{name}"].tensor

    def delta(self, layer, h):
        """``W2 . act(W1 . h + b1) + b2`` for every row of h; the caller adds it to h."""
        if layer not in self.layers:
            raise ContractError(f"layer {layer} not configured for this adapter (layers={self.layers})")
        z = matmul(h, transpose(self._p(layer, "w1"), (1, 0)))
        if self.use_bias:
            z = add(z, self._p(layer, "b1"))
        out = matmul(self._act(z), transpose(self._p(layer, "w2"), (1, 0)))
        if self.use_bias:
            out = add(out, self._p(layer, "b2"))
        return out

    def hook(self, layer):
        if layer not in self.layers:
            raise ContractError(f"layer {layer} not configured for this adapter (layers={self.layers})")
        return lambda h: self.delta(layer, h)


@dataclass
class AdapterPair:
    domain: DomainId
    config: AdapterConfig
    params: ParameterStore = field(repr=False)

    def __post_init__(self):
        self.prompt = PromptAdapter(self.domain, self.params, self.config.prefix_len)
        self.visual = VisualAdapter(
            self.domain, self.params, self.config.layers, self.config.activation, self.config.use_bias
        )

    def num_parameters(self):
        return self.params.num_parameters()

    def checksum(self):
        return self.params.checksum()

    def copy(self):
        return AdapterPair(self.domain, self.config, _clone_store(self.params))


def _clone_store(store):
    out = ParameterStore()
    for p in store:
        out.new(p.name, p.data.copy(), p.trainable)
    return out


def init_adapter_pair(domain, config, seed=0):
    """Prefix and W1 ~ N(0, std^2); W2 and biases zero, so the visual delta starts at exactly 0."""
    rng = np.random.default_rng(seed)
    c = config
    store = ParameterStore()
    base = f"adapter.{domain.name}"
    store.new(f"{base}.prompt.prefix", rng.normal(0.0, c.init_std, size=(c.prefix_len, c.d_q)))
    for layer in c.layers:
        store.new(f"{base}.visual.{layer}.w1", rng.normal(0.0, c.init_std, size=(c.bottleneck, c.d_v)))
        store.new(f"{base}.visual.{layer}.w2", np.zeros((c.d_v, c.bottleneck)))
        if c.use_bias:
            store.new(f"{base}.visual.{layer}.b1", np.zeros(c.bottleneck))
            store.new(f"{base}.visual.{layer}.b2", np.zeros(c.d_v))
    return AdapterPair(domain, config, store)


def save_adapter(pair, path):
    meta = {
        "kind": "adapter",
        "domain": pair.domain.name,
        "domain_index": pair.domain.index,
        "l": pair.config.prefix_len,
        "d_a": pair.config.bottleneck,
        "layers": list(pair.config.layers),
        "activation": pair.config.activation,
        "config": pair.config.to_dict(),
    }
    return write_container(path, pair.params.state_dict(), meta)


def load_adapter(path, backbone_config=None):
    """Read an adapter checkpoint; width mismatches fail before any weight is built."""
    tensors, meta, _ = read_container(path)
    if meta.get("kind") != "adapter":
        raise ConfigError(f"{path} is not an adapter checkpoint")
    config = AdapterConfig.from_dict(meta["config"])
    if backbone_config is not None:
        config.validate_for(backbone_config)
    domain = DomainId(int(meta["domain_index"]), meta["domain"])
    pair = init_adapter_pair(domain, config)
    pair.params.load_state_dict(tensors)
    return pair


def freeze_pair(pair):
    pair.params.freeze()
    return pair


__all__ = [
    "AdapterConfig",
    "AdapterPair",
    "PromptAdapter",
    "VisualAdapter",
    "freeze_pair",
    "init_adapter_pair",
    "load_adapter",
    "prepend_prefix",
    "save_adapter",
]
