"""Deterministic synthetic image-caption corpus with class structure.

Each class owns a fixed random binary 16x16 mask (its image prototype) and a
contiguous token range (its caption sub-vocabulary). Images are the prototype
plus clamped Gaussian noise; captions mix class tokens with shared filler
tokens so they are not trivially class-identifying. Poison provenance tags
ride along for the evaluator and are never consulted by training code.

Image and caption augmentations mirror the usual contrastive recipe at toy
scale: small crop-shift / flip / brightness / blur for images, in-class token
replacement and random deletion for captions.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, InputError
from .validation import derive_rng

_STRUCTURE_STREAM = 0
_PAIR_STREAM = 1
_IMAGE_AUG_STREAM = 2
_CAPTION_AUG_STREAM = 3

CORPUS_FORMAT_VERSION = 1

FILLER_FRACTION = 0.2
CLASS_TOKEN_P = 0.6
NOISE_SIGMA = 0.1


@dataclass(frozen=True)
class Vocabulary:
    vocab_size: int
    class_count: int
    filler_range: tuple[int, int]  # [start, stop) shared by every class
    class_ranges: tuple[tuple[int, int], ...]  # [start, stop) per class

    def class_of_token(self, token: int) -> int | None:
        for c, (lo, hi) in enumerate(self.class_ranges):
            if lo <= token < hi:
                return c
        return None

    def class_prompt(self, class_id: int) -> np.ndarray:
        """Canonical caption for a class: its full token range in order."""
        lo, hi = self.class_ranges[class_id]
        return np.arange(lo, hi, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "class_count": self.class_count,
            "filler_range": list(self.filler_range),
            "class_ranges": [list(r) for r in self.class_ranges],
        }

    @staticmethod
    def from_dict(d: dict) -> "Vocabulary":
        return Vocabulary(
            vocab_size=d["vocab_size"],
            class_count=d["class_count"],
            filler_range=tuple(d["filler_range"]),
            class_ranges=tuple(tuple(r) for r in d["class_ranges"]),
        )


@dataclass
class PairCorpus:
    images: np.ndarray  # (n, H, W) float64 in [0, 1]
    captions: list[np.ndarray]  # per-pair token id arrays
    true_classes: np.ndarray  # (n,) int64; evaluator-side ground truth
    poison_tags: list[str | None]  # None for clean pairs; evaluator-only
    vocab: Vocabulary
    prototypes: np.ndarray  # (C, H, W) class masks
    seed: int

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def class_count(self) -> int:
        return self.vocab.class_count

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def poison_mask(self) -> np.ndarray:
        return np.array([tag is not None for tag in self.poison_tags])


def build_vocabulary(vocab_size: int, class_count: int) -> Vocabulary:
    per_class = int(np.floor((1.0 - FILLER_FRACTION) * vocab_size / class_count))
    if per_class < 1:
        raise ConfigurationError(
            f"vocab_size {vocab_size} too small for {class_count} classes"
        )
    filler = vocab_size - class_count * per_class
    if filler < 1:
        raise ConfigurationError("vocabulary leaves no room for shared filler tokens")
    ranges = tuple(
        (filler + c * per_class, filler + (c + 1) * per_class) for c in range(class_count)
    )
    return Vocabulary(
        vocab_size=vocab_size,
        class_count=class_count,
        filler_range=(0, filler),
        class_ranges=ranges,
    )


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], grid: int = 4) -> np.ndarray:
    """Low-frequency random field: coarse uniform noise bilinearly upsampled."""
    coarse = rng.random((grid, grid))
    h, w = shape
    ys = np.linspace(0.0, grid - 1.0, h)
    xs = np.linspace(0.0, grid - 1.0, w)
    y0 = np.clip(np.floor(ys).astype(int), 0, grid - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, grid - 2)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = coarse[y0][:, x0] * (1 - wx) + coarse[y0][:, x0 + 1] * wx
    bot = coarse[y0 + 1][:, x0] * (1 - wx) + coarse[y0 + 1][:, x0 + 1] * wx
    return top * (1 - wy) + bot * wy


def _class_prototypes(rng: np.random.Generator, class_count: int, shape: tuple[int, int]) -> np.ndarray:
    """Binary blob masks, horizontally symmetric so the flip/shift augmentations
    keep an image recognizably close to its class prototype."""
    protos = np.empty((class_count,) + shape)
    for c in range(class_count):
        field = _smooth_field(rng, shape)
        field = 0.5 * (field + field[:, ::-1])
        protos[c] = (field > np.median(field)).astype(np.float64)
    return protos


def _make_caption(rng: np.random.Generator, vocab: Vocabulary, class_id: int, length: int) -> np.ndarray:
    lo, hi = vocab.class_ranges[class_id]
    f_lo, f_hi = vocab.filler_range
    use_class = rng.random(length) < CLASS_TOKEN_P
    tokens = np.where(
        use_class,
        rng.integers(lo, hi, size=length),
        rng.integers(f_lo, f_hi, size=length),
    )
    if not np.any(use_class):
        tokens[rng.integers(0, length)] = rng.integers(lo, hi)
    return tokens.astype(np.int64)


def generate_corpus(
    seed: int,
    n_pairs: int,
    class_count: int,
    image_shape: tuple[int, int] = (16, 16),
    caption_len_range: tuple[int, int] = (4, 8),
    vocab_size: int = 64,
    noise_sigma: float = NOISE_SIGMA,
) -> PairCorpus:
    """Build a balanced corpus; fully determined by ``seed`` and the shape arguments."""
    if class_count < 2:
        raise ConfigurationError(f"need at least 2 classes, got {class_count}")
    if n_pairs < class_count:
        raise ConfigurationError(f"need n_pairs >= class_count, got {n_pairs} < {class_count}")
    lo_len, hi_len = caption_len_range
    if lo_len < 1 or hi_len < lo_len:
        raise ConfigurationError(f"invalid caption_len_range {caption_len_range!r}")

    vocab = build_vocabulary(vocab_size, class_count)
    struct_rng = derive_rng(seed, _STRUCTURE_STREAM)
    h, w = image_shape
    prototypes = _class_prototypes(struct_rng, class_count, (h, w))

    true_classes = np.arange(n_pairs, dtype=np.int64) % class_count
    images = np.empty((n_pairs, h, w))
    captions: list[np.ndarray] = []
    for i in range(n_pairs):
        rng = derive_rng(seed, _PAIR_STREAM, i)
        c = int(true_classes[i])
        noise = rng.normal(0.0, noise_sigma, size=(h, w))
        images[i] = np.clip(prototypes[c] + noise, 0.0, 1.0)
        length = int(rng.integers(lo_len, hi_len + 1))
        captions.append(_make_caption(rng, vocab, c, length))

    return PairCorpus(
        images=images,
        captions=captions,
        true_classes=true_classes,
        poison_tags=[None] * n_pairs,
        vocab=vocab,
        prototypes=prototypes,
        seed=seed,
    )


def subset(corpus: PairCorpus, indices) -> PairCorpus:
    idx = np.asarray(indices, dtype=np.int64)
    return replace(
        corpus,
        images=corpus.images[idx],
        captions=[corpus.captions[i] for i in idx],
        true_classes=corpus.true_classes[idx],
        poison_tags=[corpus.poison_tags[i] for i in idx],
    )


def split_corpus(corpus: PairCorpus, sizes: list[int]) -> list[PairCorpus]:
    """Split into consecutive blocks of the given sizes (must sum to len(corpus))."""
    if sum(sizes) != len(corpus):
        raise ConfigurationError(f"split sizes {sizes} do not sum to corpus size {len(corpus)}")
    parts = []
    start = 0
    for size in sizes:
        parts.append(subset(corpus, np.arange(start, start + size)))
        start += size
    return parts


def concat_pairs(corpus: PairCorpus, images, captions, true_classes, poison_tags) -> PairCorpus:
    """Corpus with extra pairs appended (used by attack injectors)."""
    images = np.asarray(images, dtype=np.float64)
    return replace(
        corpus,
        images=np.concatenate([corpus.images, images]),
        captions=list(corpus.captions) + [np.asarray(c, dtype=np.int64) for c in captions],
        true_classes=np.concatenate([corpus.true_classes, np.asarray(true_classes, dtype=np.int64)]),
        poison_tags=list(corpus.poison_tags) + list(poison_tags),
    )


def horizontal_flip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def _shift_pad(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = image.shape
    out = np.zeros_like(image)
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def _box_blur(image: np.ndarray) -> np.ndarray:
    padded = np.pad(image, 1, mode="edge")
    acc = np.zeros_like(image)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            acc += padded[1 + dy : 1 + dy + image.shape[0], 1 + dx : 1 + dx + image.shape[1]]
    return acc / 9.0


def augment_image(
    image: np.ndarray,
    seed: int,
    max_shift: int = 2,
    flip_p: float = 0.5,
    jitter: float = 0.1,
    blur_p: float = 0.2,
) -> np.ndarray:
    """Seeded random crop-shift, flip, brightness jitter, and blur; output stays in [0, 1]."""
    rng = np.random.default_rng(seed)
    out = np.asarray(image, dtype=np.float64)
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    out = _shift_pad(out, int(dy), int(dx))
    if rng.random() < flip_p:
        out = horizontal_flip(out)
    out = out + rng.uniform(-jitter, jitter)
    if rng.random() < blur_p:
        out = _box_blur(out)
    return np.clip(out, 0.0, 1.0)


def augment_caption(
    caption,
    vocab: Vocabulary,
    seed: int,
    replace_p: float = 0.1,
    delete_p: float = 0.1,
) -> np.ndarray:
    """In-class token replacement plus random deletion; never returns an empty caption."""
    tokens = np.asarray(caption, dtype=np.int64).copy()
    if tokens.size == 0:
        raise InputError("cannot augment an empty caption")
    rng = np.random.default_rng(seed)

    for i, tok in enumerate(tokens):
        c = vocab.class_of_token(int(tok))
        if c is not None and rng.random() < replace_p:
            lo, hi = vocab.class_ranges[c]
            tokens[i] = rng.integers(lo, hi)

    keep = rng.random(tokens.size) >= delete_p
    if not np.any(keep):
        keep[rng.integers(0, tokens.size)] = True
    return tokens[keep]


def derive_image_aug_seed(seed: int, epoch: int, index: int) -> int:
    return int(derive_rng(seed, _IMAGE_AUG_STREAM, epoch, index).integers(np.iinfo(np.int64).max))


def derive_caption_aug_seed(seed: int, epoch: int, index: int) -> int:
    return int(derive_rng(seed, _CAPTION_AUG_STREAM, epoch, index).integers(np.iinfo(np.int64).max))


def corpus_bytes(corpus: PairCorpus) -> bytes:
    """Canonical byte stream covering every field (basis for hashing)."""
    meta = {
        "version": CORPUS_FORMAT_VERSION,
        "seed": corpus.seed,
        "n_pairs": len(corpus),
        "image_shape": list(corpus.image_shape),
        "vocab": corpus.vocab.to_dict(),
        "poison_tags": corpus.poison_tags,
    }
    parts = [json.dumps(meta, sort_keys=True).encode()]
    parts.append(np.ascontiguousarray(corpus.images).tobytes())
    parts.append(np.ascontiguousarray(corpus.true_classes).tobytes())
    parts.append(np.ascontiguousarray(corpus.prototypes).tobytes())
    for cap in corpus.captions:
        parts.append(np.ascontiguousarray(cap).tobytes())
    return b"".join(parts)


def corpus_hash(corpus: PairCorpus) -> str:
    return hashlib.sha256(corpus_bytes(corpus)).hexdigest()


def save_corpus(corpus: PairCorpus, path) -> None:
    caption_lengths = np.array([c.size for c in corpus.captions], dtype=np.int64)
    flat_captions = (
        np.concatenate(corpus.captions) if corpus.captions else np.zeros(0, dtype=np.int64)
    )
    meta = {
        "version": CORPUS_FORMAT_VERSION,
        "seed": corpus.seed,
        "vocab": corpus.vocab.to_dict(),
        "poison_tags": corpus.poison_tags,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            images=corpus.images,
            true_classes=corpus.true_classes,
            prototypes=corpus.prototypes,
            caption_lengths=caption_lengths,
            flat_captions=flat_captions,
            meta_json=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        )


def load_corpus(path) -> PairCorpus:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode())
        if meta.get("version") != CORPUS_FORMAT_VERSION:
            raise ConfigurationError(f"unsupported corpus format version {meta.get('version')!r}")
        lengths = data["caption_lengths"]
        flat = data["flat_captions"]
        captions = []
        pos = 0
        for ln in lengths:
            captions.append(flat[pos : pos + int(ln)].copy())
            pos += int(ln)
        return PairCorpus(
            images=data["images"].copy(),
            captions=captions,
            true_classes=data["true_classes"].copy(),
            poison_tags=list(meta["poison_tags"]),
            vocab=Vocabulary.from_dict(meta["vocab"]),
            prototypes=data["prototypes"].copy(),
            seed=meta["seed"],
        )
