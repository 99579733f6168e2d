"""Deterministic 4-domain synthetic VQA suite.

Each domain renders 32x32 grayscale images on its own background band and
texture (bands are disjoint, so the domain is recoverable from the median
pixel alone) and asks fixed-length 5-token questions:

* count   -- "how many bright/dim blobs ?"        -> one digit 0-9
* anomaly -- "is there an anomaly ?"              -> yes / no
* arith   -- "what is the sum ?" of two dot groups -> "a + b = s"
* chart   -- "which bar is tallest ?"              -> "the <ordinal> bar"

Scenes come in two styles. ``source`` is the canonical full-contrast
rendering used for the backbone's pretraining corpus; ``target`` is the same
kind of scene captured washed out (half contrast, brightness lifted by 0.2;
charts come out at quarter contrast), which is what the evaluation suite and
the adapters see. The gap between the two is the domain shift.

:func:`solve` answers a sample by reading pixels only; it is the closed-form
oracle the generator is checked against.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from catchvqa import domains as D
from catchvqa import vocab
from catchvqa.domains import DomainId
from catchvqa.errors import ConfigError, FormatError

SIZE = 32
QUESTION_LEN = 5

BRIGHT = 0.95
DIM = 0.55
DARK = 0.05

# style -> (contrast gain about PIVOT, brightness offset, rng stream tag)
STYLES = {"source": (1.0, 0.0, 1), "target": (0.5, 0.2, 0)}
# (style, domain) -> gain; target charts come off a flatter scanner
GAIN_OVERRIDES = {("target", "chart"): 0.25}
PIVOT = 0.5


def style_params(style, domain=None):
    """(gain, offset) of a style, for one domain when given."""
    try:
        gain, offset, _ = STYLES[style]
    except KeyError:
        raise ConfigError(f"unknown style {style!r}; expected one of {', '.join(STYLES)}") from None
    name = getattr(domain, "name", domain)
    return GAIN_OVERRIDES.get((style, name), gain), offset


def apply_style(image, style, domain=None):
    gain, offset = style_params(style, domain)
    return PIVOT + offset + (image - PIVOT) * gain


def undo_style(image, style, domain=None):
    gain, offset = style_params(style, domain)
    return PIVOT + (image - PIVOT - offset) / gain


@dataclass(frozen=True)
class DomainSpec:
    domain: DomainId
    background: tuple  # (low, high) intensity band
    texture: str
    texture_amp: float
    templates: tuple
    answer_space: int  # number of distinct gold answers, for the random-answer baseline

    @property
    def name(self):
        return self.domain.name


SPECS = {
    "count": DomainSpec(
        D.COUNT, (0.05, 0.15), "speckle", 0.02,
        ("how many bright blobs ?", "how many dim blobs ?"), 10,
    ),
    "anomaly": DomainSpec(
        D.ANOMALY, (0.30, 0.40), "hstripes", 0.03,
        ("is there an anomaly ?", "is any shape irregular ?"), 2,
    ),
    "arith": DomainSpec(
        D.ARITH, (0.55, 0.65), "vstripes", 0.03,
        ("what is the sum ?", "what is the total ?"), 25,
    ),
    "chart": DomainSpec(
        D.CHART, (0.80, 0.90), "checker", 0.03,
        ("which bar is tallest ?", "what bar is tallest ?"), 4,
    ),
}
DEFAULT_SPECS = tuple(SPECS[d.name] for d in D.BUILTIN)


@dataclass
class VqaSample:
    image: np.ndarray
    question: list
    answer: list
    domain: DomainId
    seed: int
    facts: dict = field(default_factory=dict, compare=False)
    style: str = "target"

    def __eq__(self, other):
        return (
            isinstance(other, VqaSample)
            and self.domain == other.domain
            and self.seed == other.seed
            and self.style == other.style
            and self.question == other.question
            and self.answer == other.answer
            and np.array_equal(self.image, other.image)
        )


# ---------------------------------------------------------------- rendering


def _background(rng, spec):
    lo, hi = spec.background
    img = np.full((SIZE, SIZE), rng.uniform(lo, hi))
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    a = spec.texture_amp
    if spec.texture == "speckle":
        img += a * (2.0 * rng.random((SIZE, SIZE)) - 1.0)
    elif spec.texture == "hstripes":
        img += a * (yy % 2 == 0)
    elif spec.texture == "vstripes":
        img += a * (xx % 2 == 0)
    elif spec.texture == "checker":
        img += a * (((yy // 2) + (xx // 2)) % 2)
    else:
        raise ConfigError(f"unknown texture {spec.texture!r}")
    return img


CELL = 8  # objects sit one per cell of a 4x4 grid aligned with 8-px patches
GRID = SIZE // CELL


def _cells(rng, n, rows=GRID, cols=GRID):
    picks = rng.choice(rows * cols, size=n, replace=False)
    return [(int(p) // cols, int(p) % cols) for p in picks]


def _place(rng, img, r, c, mask, value, col_offset=0):
    """Stamp ``mask`` inside cell (r, c) at a random offset keeping a 1-px margin."""
    h, w = mask.shape
    dy = int(rng.integers(1, CELL - h)) if h < CELL - 1 else 1
    dx = int(rng.integers(1, CELL - w)) if w < CELL - 1 else 1
    y, x = CELL * r + dy, col_offset + CELL * c + dx
    img[y : y + h, x : x + w][mask] = value


BLOB = np.ones((4, 4), dtype=bool)
SQUARE = np.ones((6, 6), dtype=bool)
IRREGULAR_SHAPES = tuple(
    np.kron(np.array(m, dtype=int), np.ones((2, 2), dtype=int)).astype(bool)
    for m in (
        [[0, 1, 0], [1, 1, 1], [0, 1, 0]],  # plus
        [[1, 0, 0], [1, 0, 0], [1, 1, 1]],  # L
        [[1, 1, 1], [0, 1, 0], [0, 1, 0]],  # T
        [[1, 1, 0], [0, 1, 1], [0, 0, 1]],  # zigzag
    )
)
BAR_WIDTH = 4
BAR_HEIGHTS = np.arange(4, 21, 4)  # the other bars stay below the top patch row
TALLEST = (26, 31)


def _render_count(rng, spec, img):
    tidx = int(rng.integers(len(spec.templates)))
    asked_bright = tidx == 0
    n = int(rng.integers(0, 10))
    other = int(rng.integers(0, 4))
    for k, (r, c) in enumerate(_cells(rng, n + other)):
        bright = (k < n) == asked_bright
        _place(rng, img, r, c, BLOB, BRIGHT if bright else DIM)
    return tidx, [str(n)], {"target": n, "distractors": other}


def _render_anomaly(rng, spec, img):
    tidx = int(rng.integers(len(spec.templates)))
    n = int(rng.integers(4, 8))
    present = bool(rng.random() < 0.5)
    odd = int(rng.integers(n)) if present else -1
    for k, (r, c) in enumerate(_cells(rng, n)):
        if k == odd:
            shape = IRREGULAR_SHAPES[int(rng.integers(len(IRREGULAR_SHAPES)))]
        else:
            shape = SQUARE
        _place(rng, img, r, c, shape, BRIGHT)
    return tidx, ["yes" if present else "no"], {"shapes": n, "present": present}


def _render_arith(rng, spec, img):
    tidx = int(rng.integers(len(spec.templates)))
    a = int(rng.integers(0, 5))
    b = int(rng.integers(0, 5))
    for count, x0 in ((a, 0), (b, SIZE // 2)):
        for r, c in _cells(rng, count, GRID, GRID // 2):
            _place(rng, img, r, c, BLOB, DARK, col_offset=x0)
    return tidx, [str(a), "+", str(b), "=", str(a + b)], {"left": a, "right": b}


def _render_chart(rng, spec, img):
    tidx = int(rng.integers(len(spec.templates)))
    k = int(rng.integers(3, GRID + 1))
    heights = rng.choice(BAR_HEIGHTS, size=k, replace=False)
    pick = int(rng.integers(k))
    heights[pick] = rng.integers(*TALLEST)
    for i, h in enumerate(heights):
        x = CELL * i + (CELL - BAR_WIDTH) // 2
        img[SIZE - int(h) : SIZE, x : x + BAR_WIDTH] = DARK
    return tidx, ["the", vocab.ORDINALS[pick], "bar"], {"heights": [int(h) for h in heights]}


_RENDERERS = {
    "count": _render_count,
    "anomaly": _render_anomaly,
    "arith": _render_arith,
    "chart": _render_chart,
}


def gen_sample(spec, seed, style="target"):
    """Render one sample; a pure function of (spec, seed, style)."""
    style_params(style)
    rng = np.random.default_rng([int(seed), spec.domain.index, STYLES[style][2]])
    img = _background(rng, spec)
    tidx, answer, facts = _RENDERERS[spec.name](rng, spec, img)
    np.clip(img, 0.0, 1.0, out=img)
    img = apply_style(img, style, spec.domain)
    question = vocab.encode(spec.templates[tidx])
    assert len(question) == QUESTION_LEN
    return VqaSample(img, question, vocab.encode(answer), spec.domain, int(seed), facts, style)


# ---------------------------------------------------------------- oracle


def background_level(image):
    return float(np.median(image))


def classify_background(image, specs=DEFAULT_SPECS, style="target"):
    """Domain whose background band lies nearest the median pixel.

    Each domain's own style is undone before measuring, so a band counts only
    if the image is consistent with that domain's capture.
    """

    def miss(spec):
        lo, hi = spec.background
        level = background_level(undo_style(image, style, spec.domain))
        return max(lo - level, level - hi, 0.0)

    return min(specs, key=miss).domain


def _components(mask):
    labels, n = ndimage.label(mask)
    return [labels == i for i in range(1, n + 1)]


def solve(image, question, domain, style="target"):
    """Answer tokens computed from pixels and question words alone."""
    image = undo_style(np.asarray(image, dtype=np.float64), style, domain)
    words = vocab.decode(question)
    name = domain.name
    if name == "count":
        if "bright" in words:
            mask = image > 0.75
        else:
            mask = (image > 0.40) & (image < 0.75)
        return vocab.encode([str(len(_components(mask)))])
    if name == "anomaly":
        comps = _components(image > 0.75)
        irregular = any(not _is_square(c) for c in comps)
        return vocab.encode(["yes" if irregular else "no"])
    if name == "arith":
        dark = image < 0.3
        a = len(_components(dark[:, :16]))
        b = len(_components(dark[:, 16:]))
        return vocab.encode([str(a), "+", str(b), "=", str(a + b)])
    if name == "chart":
        dark = image < 0.5
        heights = []
        x = (CELL - BAR_WIDTH) // 2
        while x < SIZE and dark[:, x].any():
            heights.append(int(dark[:, x].sum()))
            x += CELL
        pick = int(np.argmax(heights))
        return vocab.encode(["the", vocab.ORDINALS[pick], "bar"])
    raise ConfigError(f"no oracle for domain {name!r}")


def _is_square(mask):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return len(rows) == len(cols) and mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1].all()


# ---------------------------------------------------------------- datasets


class VqaDataset:
    """An ordered list of samples with batched array views."""

    def __init__(self, samples):
        self.samples = list(samples)
        self._images = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def images(self):
        if self._images is None:
            if self.samples:
                self._images = np.stack([s.image for s in self.samples])
            else:
                self._images = np.zeros((0, SIZE, SIZE))
        return self._images

    @property
    def questions(self):
        return np.array([s.question for s in self.samples], dtype=np.int64).reshape(len(self), -1)

    @property
    def answers(self):
        return [list(s.answer) for s in self.samples]

    @property
    def domain_index(self):
        return np.array([s.domain.index for s in self.samples], dtype=np.int64)

    @property
    def seeds(self):
        return [s.seed for s in self.samples]

    def domains(self):
        return sorted({s.domain for s in self.samples})

    def subset(self, indices):
        return VqaDataset([self.samples[i] for i in indices])

    def by_domain(self, domain):
        return VqaDataset([s for s in self.samples if s.domain == domain])

    def without_domain(self, domain):
        return VqaDataset([s for s in self.samples if s.domain != domain])

    def counts(self):
        out = {}
        for s in self.samples:
            out[s.domain.name] = out.get(s.domain.name, 0) + 1
        return out

    def fingerprint(self):
        h = hashlib.sha256()
        for s in self.samples:
            h.update(f"{s.domain.name}:{s.style}:{s.seed}:{s.question}:{s.answer}".encode())
            h.update(s.image.astype("<f8").tobytes())
        return h.hexdigest()


def split_sizes(n, ratios):
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    return n_train, n_val, n - n_train - n_val


def sample_seed(master_seed, domain, i):
    return int(master_seed) * 10_000_000 + domain.index * 1_000_000 + int(i)


def gen_dataset(specs=DEFAULT_SPECS, n_per_domain=2500, split_ratios=(0.8, 0.1, 0.1), seed=0, style="target"):
    """Stratified train/val/test splits; sample seeds never repeat across splits."""
    if n_per_domain >= 1_000_000:
        raise ConfigError("n_per_domain must be below 1e6")
    sizes = split_sizes(n_per_domain, split_ratios)
    splits = ([], [], [])
    for spec in specs:
        seeds = [sample_seed(seed, spec.domain, i) for i in range(n_per_domain)]
        start = 0
        for part, size in zip(splits, sizes):
            part.extend(gen_sample(spec, s, style) for s in seeds[start : start + size])
            start += size
    return tuple(VqaDataset(p) for p in splits)


def gen_pretraining_corpus(n_per_domain=2000, seed=0, specs=DEFAULT_SPECS):
    """Source-style scenes for backbone pretraining.

    A separate rng stream, so no scene also appears in the target suite.
    """
    if n_per_domain >= 1_000_000:
        raise ConfigError("n_per_domain must be below 1e6")
    return VqaDataset(
        gen_sample(spec, sample_seed(seed, spec.domain, i), "source") for spec in specs for i in range(n_per_domain)
    )


# ---------------------------------------------------------------- export


def _encode_image(image):
    return [base64.b64encode(row.astype("<f8").tobytes()).decode("ascii") for row in image]


def _decode_image(rows):
    return np.stack([np.frombuffer(base64.b64decode(r), dtype="<f8") for r in rows]).astype(np.float64)


def sample_record(sample):
    return {
        "domain": sample.domain.name,
        "seed": sample.seed,
        "style": sample.style,
        "question_tokens": vocab.decode(sample.question),
        "answer_tokens": vocab.decode(sample.answer),
        "image_base64_rows": _encode_image(sample.image),
    }


def export_dataset(dataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset:
            fh.write(json.dumps(sample_record(s), separators=(",", ":")))
            fh.write("\n")


def import_dataset(path):
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                image = _decode_image(rec["image_base64_rows"])
                if image.shape != (SIZE, SIZE):
                    raise ValueError(f"image shape {image.shape}")
                sample = VqaSample(
                    image,
                    vocab.encode(rec["question_tokens"]),
                    vocab.encode(rec["answer_tokens"]),
                    D.lookup(rec["domain"]),
                    int(rec["seed"]),
                    style=rec.get("style", "target"),
                )
                style_params(sample.style)
            except (ValueError, KeyError, TypeError, ConfigError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed record: {exc}") from exc
            samples.append(sample)
    return VqaDataset(samples)


def write_manifest(path, master_seed, n_per_domain, split_ratios, files):
    path = Path(path)
    manifest = {
        "master_seed": master_seed,
        "n_per_domain": n_per_domain,
        "split_ratios": list(split_ratios),
        "files": {
            name: {"path": str(Path(p).name), "sha256": hashlib.sha256(Path(p).read_bytes()).hexdigest()}
            for name, p in files.items()
        },
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
