"""Miniature vision-language QA model.

Patch-token ViT encoder -> linear projection into the text width -> prefix-LM
decoder. The decoder input is ``[visual tokens; prompt prefix; text tokens]``;
visual and prefix rows form a bidirectional context visible to every text
position, text rows are causally masked among themselves. Only text rows get
position embeddings.

Every vision block output passes through ``hooks.apply("vision.block.<l>")``
(1-based ``l``), which is the only place adapters touch the encoder.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from catchvqa import vocab
from catchvqa.container import read_container, write_container
from catchvqa.errors import ConfigError, ShapeError, StateError
from catchvqa.hooks import HookEngine
from catchvqa.tensor import (
    MASK_VALUE,
    ParameterStore,
    Tensor,
    add,
    concat,
    embedding,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    softmax,
    swap_last,
)


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 32
    patch_size: int = 8
    d_v: int = 64
    vision_layers: int = 12
    d_q: int = 64
    decoder_layers: int = 4
    heads: int = 4
    vocab_size: int = vocab.VOCAB_SIZE
    max_answer_len: int = 8
    max_text_len: int = 16
    mlp_ratio: int = 2
    init_std: float = 0.02
    # patch positions need to be as loud as patch content or the decoder
    # cannot tell which column an object sits in
    vision_pos_std: float = 1.0
    # pixels are standardised before the patch projection
    pixel_mean: float = 0.5
    pixel_std: float = 0.25

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.d_v % self.heads or self.d_q % self.heads:
            raise ConfigError("hidden sizes must be divisible by heads")
        if self.vision_layers < 1 or self.decoder_layers < 1:
            raise ConfigError("need at least one vision and one decoder layer")
        if self.pixel_std <= 0:
            raise ConfigError("pixel_std must be > 0")

    @property
    def num_patches(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@lru_cache(maxsize=64)
def prefix_lm_mask(n_context, n_text):
    """Additive [S, S] mask: context rows see the context; text rows see context + earlier text."""
    s = n_context + n_text
    allowed = np.zeros((s, s), dtype=bool)
    allowed[:, :n_context] = True
    allowed[n_context:, n_context:] = np.tril(np.ones((n_text, n_text), dtype=bool))
    mask = np.where(allowed, 0.0, MASK_VALUE)
    mask.flags.writeable = False
    return mask


def patchify(images, patch_size):
    """[B, H, W] pixel grids -> [B, T, p*p] flattened patches, row-major patch order."""
    b, h, w = images.shape
    g_h, g_w = h // patch_size, w // patch_size
    x = images.reshape(b, g_h, patch_size, g_w, patch_size).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(x.reshape(b, g_h * g_w, patch_size * patch_size))


class Backbone:
    def __init__(self, config=None, seed=0):
        self.config = config or BackboneConfig()
        self.params = ParameterStore()
        self.hooks = HookEngine()
        self.bound_prefix = None
        self._init_params(np.random.default_rng(seed))
        c = self.config
        for layer in range(1, c.vision_layers + 1):
            self.hooks.add_site(self.vision_site(layer), (None, c.num_patches, c.d_v))

    # ------------------------------------------------------------ parameters

    def _init_params(self, rng):
        c = self.config
        std = c.init_std

        def normal(*shape):
            return rng.normal(0.0, std, size=shape)

        p = self.params
        p.new("vision.patch.weight", normal(c.patch_dim, c.d_v))
        p.new("vision.pos", rng.normal(0.0, c.vision_pos_std, size=(c.num_patches, c.d_v)))
        for i in range(1, c.vision_layers + 1):
            self._block_params(f"vision.blocks.{i}", c.d_v, normal)
        p.new("vision.ln_f.gamma", np.ones(c.d_v))
        p.new("vision.ln_f.beta", np.zeros(c.d_v))
        p.new("proj.weight", normal(c.d_v, c.d_q))
        p.new("proj.bias", np.zeros(c.d_q))
        p.new("text.tok", normal(c.vocab_size, c.d_q))
        p.new("text.pos", normal(c.max_text_len, c.d_q))
        for i in range(1, c.decoder_layers + 1):
            self._block_params(f"decoder.blocks.{i}", c.d_q, normal)
        p.new("decoder.ln_f.gamma", np.ones(c.d_q))
        p.new("decoder.ln_f.beta", np.zeros(c.d_q))
        p.new("head.weight", normal(c.d_q, c.vocab_size))
        p.new("head.bias", np.zeros(c.vocab_size))

    def _block_params(self, prefix, d, normal):
        p = self.params
        hidden = d * self.config.mlp_ratio
        for nm in ("ln1", "ln2"):
            p.new(f"{prefix}.{nm}.gamma", np.ones(d))
            p.new(f"{prefix}.{nm}.beta", np.zeros(d))
        for nm in ("q", "k", "v", "o"):
            p.new(f"{prefix}.attn.{nm}.weight", normal(d, d))
            p.new(f"{prefix}.attn.{nm}.bias", np.zeros(d))
        p.new(f"{prefix}.mlp.fc1.weight", normal(d, hidden))
        p.new(f"{prefix}.mlp.fc1.bias", np.zeros(hidden))
        p.new(f"{prefix}.mlp.fc2.weight", normal(hidden, d))
        p.new(f"{prefix}.mlp.fc2.bias", np.zeros(d))

    def freeze(self):
        self.params.freeze()

    @property
    def frozen(self):
        return self.params.all_frozen()

    def checksum(self):
        return self.params.checksum()

    def _t(self, name):
        return self.params[name].tensor

    @staticmethod
    def vision_site(layer):
        return f"vision.block.{layer}"

    # ------------------------------------------------------------ blocks

    def _attention(self, prefix, x, mask):
        b, s, d = x.shape
        h = self.config.heads
        dh = d // h

        def heads(name):
            y = linear(x, self._t(f"{prefix}.attn.{name}.weight"), self._t(f"{prefix}.attn.{name}.bias"))
            return y.reshape(b, s, h, dh).transpose(0, 2, 1, 3)

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = mul(matmul(q, swap_last(k)), 1.0 / math.sqrt(dh))
        if mask is not None:
            scores = add(scores, mask)
        out = matmul(softmax(scores), v).transpose(0, 2, 1, 3).reshape(b, s, d)
        return linear(out, self._t(f"{prefix}.attn.o.weight"), self._t(f"{prefix}.attn.o.bias"))

    def _block(self, prefix, x, mask=None):
        t = self._t
        a = layer_norm(x, t(f"{prefix}.ln1.gamma"), t(f"{prefix}.ln1.beta"))
        x = add(x, self._attention(prefix, a, mask))
        m = layer_norm(x, t(f"{prefix}.ln2.gamma"), t(f"{prefix}.ln2.beta"))
        m = gelu(linear(m, t(f"{prefix}.mlp.fc1.weight"), t(f"{prefix}.mlp.fc1.bias")))
        m = linear(m, t(f"{prefix}.mlp.fc2.weight"), t(f"{prefix}.mlp.fc2.bias"))
        return add(x, m)

    # ------------------------------------------------------------ vision

    def _images(self, images):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        s = self.config.image_size
        if images.ndim != 3 or images.shape[1:] != (s, s):
            raise ConfigError(f"expected images of size {s}x{s}, got array of shape {images.shape}")
        return images

    def embed_patches(self, images):
        """[B, H, W] (or one [H, W]) -> [B, T, d_v]: patch projection + position embeddings."""
        images = self._images(images)
        c = self.config
        patches = (patchify(images, c.patch_size) - c.pixel_mean) / c.pixel_std
        return add(matmul(Tensor(patches), self._t("vision.patch.weight")), self._t("vision.pos"))

    def encode_vision(self, patches, inline_adapter=None):
        """Run the vision blocks; hooks fire after each block.

        ``inline_adapter`` selects the hardcoded build: the adapter delta is
        added directly in this loop and the hook engine is bypassed.
        """
        c = self.config
        if patches.shape[1:] != (c.num_patches, c.d_v):
            raise ShapeError(f"patch tokens {patches.shape} do not match config")
        x = patches
        for layer in range(1, c.vision_layers + 1):
            x = self._block(f"vision.blocks.{layer}", x)
            if inline_adapter is not None:
                if layer in inline_adapter.layers:
                    x = add(x, inline_adapter.delta(layer, x))
            else:
                x = self.hooks.apply(self.vision_site(layer), x)
        return layer_norm(x, self._t("vision.ln_f.gamma"), self._t("vision.ln_f.beta"))

    def project_visual(self, z_v):
        return linear(z_v, self._t("proj.weight"), self._t("proj.bias"))

    def visual_tokens(self, images, inline_adapter=None):
        return self.project_visual(self.encode_vision(self.embed_patches(images), inline_adapter))

    # ------------------------------------------------------------ text

    def embed_text(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        m = ids.shape[1]
        if m > self.config.max_text_len:
            raise ShapeError(f"text length {m} exceeds max_text_len {self.config.max_text_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ShapeError("token id out of vocabulary range")
        return add(embedding(self._t("text.tok"), ids), self._t("text.pos")[:m])

    def forward_logits(self, visual_tokens, text_embeddings, n_prefix=0):
        """Next-token logits [B, m - n_prefix, V] for the non-prefix text rows.

        ``text_embeddings`` holds ``n_prefix`` prompt rows followed by the
        position-encoded text rows.
        """
        c = self.config
        if visual_tokens.shape[-1] != c.d_q or text_embeddings.shape[-1] != c.d_q:
            raise ShapeError("decoder inputs must have width d_q")
        n_vis = visual_tokens.shape[1]
        n_ctx = n_vis + n_prefix
        n_text = text_embeddings.shape[1] - n_prefix
        x = concat([visual_tokens, text_embeddings], axis=1)
        mask = prefix_lm_mask(n_ctx, n_text)
        for layer in range(1, c.decoder_layers + 1):
            x = self._block(f"decoder.blocks.{layer}", x, mask)
        x = x[:, n_ctx:]
        x = layer_norm(x, self._t("decoder.ln_f.gamma"), self._t("decoder.ln_f.beta"))
        return linear(x, self._t("head.weight"), self._t("head.bias"))

    def bind_prefix(self, prefix):
        self.bound_prefix = prefix

    def _resolve_prefix(self, prefix):
        if prefix is None:
            return self.bound_prefix
        if prefix is _NO_PREFIX:
            return None
        return prefix

    def text_logits(self, visual, ids, prefix=None):
        from catchvqa.adapters import prepend_prefix

        text = self.embed_text(ids)
        prefix = self._resolve_prefix(prefix)
        seq, n_prefix = prepend_prefix(prefix, text)
        return self.forward_logits(visual, seq, n_prefix)

    def answer_logits(self, images, question_ids, answer_in_ids, prefix=None, inline_adapter=None):
        """Teacher-forced logits over question + shifted-answer positions."""
        visual = self.visual_tokens(images, inline_adapter)
        ids = np.concatenate([question_ids, answer_in_ids], axis=1)
        return self.text_logits(visual, ids, prefix)

    # ------------------------------------------------------------ generation

    def generate(self, images, question_ids, prefix=None, inline_adapter=None, return_logits=False):
        """Batched greedy decoding. Returns answer id lists (END stripped).

        Raises StateError if hooks change while decoding is in progress.
        """
        epoch = self.hooks.epoch
        images = self._images(images)
        question_ids = np.asarray(question_ids, dtype=np.int64)
        if question_ids.ndim == 1:
            question_ids = question_ids[None]
        if question_ids.shape[1] == 0:
            raise ShapeError("question must be nonempty")
        visual = self.visual_tokens(images, inline_adapter)
        b = images.shape[0]
        ids = question_ids
        done = np.zeros(b, dtype=bool)
        steps = []
        all_logits = []
        budget = min(self.config.max_answer_len, self.config.max_text_len - question_ids.shape[1])
        for _ in range(budget):
            logits = self.text_logits(visual, ids, prefix).data[:, -1]
            nxt = logits.argmax(axis=1)
            all_logits.append(logits)
            nxt = np.where(done, vocab.END_ID, nxt)
            steps.append(nxt)
            done |= nxt == vocab.END_ID
            ids = np.concatenate([ids, nxt[:, None]], axis=1)
            if done.all():
                break
        if self.hooks.epoch != epoch:
            raise StateError("hook set changed during generation")
        gen = np.stack(steps, axis=1) if steps else np.zeros((b, 0), dtype=np.int64)
        answers = [vocab.strip_end(row) for row in gen]
        if return_logits:
            return answers, np.stack(all_logits, axis=1)
        return answers

    def generate_greedy(self, image, question, adapters=None):
        """Single-sample decoding with an optional AdapterPair active for this call only."""
        q = np.asarray(question, dtype=np.int64)[None]
        if adapters is None:
            return self.generate(image, q, prefix=_NO_PREFIX)[0]
        handles = [
            self.hooks.register(self.vision_site(layer), adapters.visual.hook(layer))
            for layer in adapters.visual.layers
        ]
        try:
            return self.generate(image, q, prefix=adapters.prompt.prefix_tensor())[0]
        finally:
            for h in handles:
                h.remove()

    # ------------------------------------------------------------ persistence

    def save(self, path):
        meta = {"kind": "backbone", "config": self.config.to_dict(), "frozen": self.frozen}
        return write_container(path, self.params.state_dict(), meta)

    @classmethod
    def load(cls, path):
        tensors, meta, _ = read_container(path)
        if meta.get("kind") != "backbone":
            raise ConfigError(f"{path} is not a backbone checkpoint")
        model = cls(BackboneConfig.from_dict(meta["config"]))
        model.params.load_state_dict(tensors)
        if meta.get("frozen", True):
            model.freeze()
        return model


class _NoPrefix:
    """Sentinel: ignore any bound prefix for this call."""


_NO_PREFIX = _NoPrefix()
