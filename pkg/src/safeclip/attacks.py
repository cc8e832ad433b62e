"""Poisoning and backdoor injection for pair corpora.

Attack kinds:

* ``tdpa``: pairs a few designated held-out target images with captions of an
  adversarial class, cycling through that class's training captions.
* ``badnet`` / ``blended`` / ``warp``: trigger-patched random held-out images
  paired with adversarial-class captions.
* ``label_consistent``: trigger applied to held-out images of the adversarial
  class itself, keeping their own (correct) captions.
* ``htba``: every poisoned image carries all three triggers at once.
* ``pba_all2one`` / ``pba_all2all``: three independently triggered poison
  subsets sharing one adversarial class (budget split three ways) or using a
  distinct class per trigger (full budget per trigger).

Injectors append pairs to the corpus and tag them with their provenance; the
tags are evaluator-only and never consulted by training code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError
from .synthdata import PairCorpus, concat_pairs
from .validation import derive_rng

MAX_DESK_POISON_RATE = 0.01

SINGLE_TRIGGER_KINDS = ("badnet", "blended", "warp")
ATTACK_KINDS = SINGLE_TRIGGER_KINDS + ("tdpa", "label_consistent", "htba", "pba_all2one", "pba_all2all")

_SOURCE_STREAM = 40
_CAPTION_STREAM = 41
_TARGET_STREAM = 42


@dataclass(frozen=True)
class TriggerParams:
    patch_size: int = 3
    patch_corner: str = "br"  # tl | tr | bl | br
    patch_value: float = 1.0
    blend_alpha: float = 0.2
    blend_seed: int = 7
    warp_seed: int = 11
    warp_max_px: float = 1.5
    warp_grid: int = 4

    def to_dict(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "patch_corner": self.patch_corner,
            "patch_value": self.patch_value,
            "blend_alpha": self.blend_alpha,
            "blend_seed": self.blend_seed,
            "warp_seed": self.warp_seed,
            "warp_max_px": self.warp_max_px,
            "warp_grid": self.warp_grid,
        }


@dataclass
class AttackSpec:
    kind: str
    poison_rate: float
    adversarial_class: int | tuple[int, ...]
    seed: int = 0
    target_images: tuple[int, ...] | None = None  # tdpa: indices into the attack source corpus
    trigger_params: TriggerParams = field(default_factory=TriggerParams)

    def validate(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ConfigurationError(f"unknown attack kind {self.kind!r}")
        if not 0.0 < self.poison_rate <= MAX_DESK_POISON_RATE:
            raise ConfigurationError(
                f"poison_rate must be in (0, {MAX_DESK_POISON_RATE}], got {self.poison_rate}"
            )
        if self.kind == "pba_all2all":
            classes = self.adversarial_class
            if not isinstance(classes, (tuple, list)) or len(classes) != len(SINGLE_TRIGGER_KINDS):
                raise ConfigurationError(
                    "pba_all2all needs one adversarial class per trigger "
                    f"({len(SINGLE_TRIGGER_KINDS)} total)"
                )
            if len(set(classes)) != len(classes):
                raise ConfigurationError("pba_all2all adversarial classes must be distinct")
        elif not np.isscalar(self.adversarial_class):
            raise ConfigurationError(f"{self.kind} takes a single adversarial class")
        if self.kind == "tdpa" and not self.target_images:
            raise ConfigurationError("tdpa requires target_images")


def build_adversarial_captions(corpus: PairCorpus, adversarial_class: int) -> list[np.ndarray]:
    """All clean training captions whose pair belongs to ``adversarial_class``."""
    clean = np.array([tag is None for tag in corpus.poison_tags])
    idx = np.flatnonzero((corpus.true_classes == adversarial_class) & clean)
    if idx.size == 0:
        raise InputError(f"corpus has no clean captions of class {adversarial_class}")
    return [corpus.captions[i].copy() for i in idx]


def _corner_slices(shape: tuple[int, int], corner: str, k: int):
    h, w = shape
    ys = slice(0, k) if corner[0] == "t" else slice(h - k, h)
    xs = slice(0, k) if corner[1] == "l" else slice(w - k, w)
    return ys, xs


def badnet_trigger(image: np.ndarray, params: TriggerParams) -> np.ndarray:
    out = np.array(image, dtype=np.float64, copy=True)
    ys, xs = _corner_slices(out.shape, params.patch_corner, params.patch_size)
    out[ys, xs] = params.patch_value
    return out


def blended_trigger(image: np.ndarray, params: TriggerParams) -> np.ndarray:
    noise = np.random.default_rng(params.blend_seed).random(image.shape)
    a = params.blend_alpha
    return (1.0 - a) * np.asarray(image, dtype=np.float64) + a * noise


def warp_field(shape: tuple[int, int], seed: int, max_px: float, grid: int) -> np.ndarray:
    """Smooth per-pixel (dy, dx) displacement field with |displacement| <= max_px."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(-1.0, 1.0, size=(2, grid, grid))
    h, w = shape
    ys = np.linspace(0.0, grid - 1.0, h)
    xs = np.linspace(0.0, grid - 1.0, w)
    y0 = np.clip(np.floor(ys).astype(int), 0, grid - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, grid - 2)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    field = np.empty((2, h, w))
    for c in range(2):
        g = coarse[c]
        top = g[y0][:, x0] * (1 - wx) + g[y0][:, x0 + 1] * wx
        bot = g[y0 + 1][:, x0] * (1 - wx) + g[y0 + 1][:, x0 + 1] * wx
        field[c] = top * (1 - wy) + bot * wy
    peak = np.max(np.abs(field))
    if peak > 0:
        field *= max_px / peak
    return field


def warp_image(image: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Bilinear resample at coordinates shifted by ``field``; border clamped."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sy = np.clip(yy + field[0], 0.0, h - 1.0)
    sx = np.clip(xx + field[1], 0.0, w - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def apply_trigger(image: np.ndarray, kind: str, params: TriggerParams) -> np.ndarray:
    if kind == "badnet":
        return badnet_trigger(image, params)
    if kind == "blended":
        return blended_trigger(image, params)
    if kind == "warp":
        field = warp_field(image.shape, params.warp_seed, params.warp_max_px, params.warp_grid)
        return warp_image(image, field)
    raise ConfigurationError(f"unknown trigger kind {kind!r}")


def apply_hybrid_trigger(image: np.ndarray, params: TriggerParams) -> np.ndarray:
    """All three triggers on one image; the patch goes last so it stays saturated."""
    out = apply_trigger(image, "warp", params)
    out = apply_trigger(out, "blended", params)
    return apply_trigger(out, "badnet", params)


def poison_budget(poison_rate: float, corpus_size: int) -> int:
    return int(np.floor(poison_rate * corpus_size))


def inject_tdpa(corpus: PairCorpus, spec: AttackSpec, source: PairCorpus) -> PairCorpus:
    """Append target-image/adversarial-caption pairs; budget split evenly over targets."""
    spec.validate()
    if spec.kind != "tdpa":
        raise ConfigurationError(f"inject_tdpa got kind {spec.kind!r}")
    n = len(corpus)
    count = poison_budget(spec.poison_rate, n)
    if count < 1:
        raise ConfigurationError(
            f"poison_rate {spec.poison_rate} yields zero pairs on a corpus of {n}"
        )
    targets = np.asarray(spec.target_images, dtype=np.int64)
    if targets.size == 0 or targets.min() < 0 or targets.max() >= len(source):
        raise ConfigurationError("target_images out of range for the attack source corpus")
    adv = int(spec.adversarial_class)
    target_classes = source.true_classes[targets]
    if np.any(target_classes == adv):
        raise ConfigurationError("a tdpa target image already belongs to the adversarial class")

    t_adv = build_adversarial_captions(corpus, adv)
    images = []
    captions = []
    classes = []
    for j in range(count):
        t = targets[j % targets.size]
        images.append(source.images[t])
        captions.append(t_adv[j % len(t_adv)])
        classes.append(source.true_classes[t])
    tags = ["tdpa"] * count
    return concat_pairs(corpus, np.stack(images), captions, classes, tags)


def _sample_sources(source: PairCorpus, eligible: np.ndarray, count: int, rng) -> np.ndarray:
    if eligible.size == 0:
        raise InputError("no eligible source images for this attack")
    replace = count > eligible.size
    return rng.choice(eligible, size=count, replace=replace)


def _trigger_arm(
    corpus: PairCorpus,
    source: PairCorpus,
    trigger_kinds: tuple[str, ...],
    adversarial_class: int,
    count: int,
    params: TriggerParams,
    rng_sources,
    rng_captions,
    tag: str,
    label_consistent: bool = False,
):
    if label_consistent:
        eligible = np.flatnonzero(source.true_classes == adversarial_class)
    else:
        eligible = np.flatnonzero(source.true_classes != adversarial_class)
    chosen = _sample_sources(source, eligible, count, rng_sources)
    t_adv = None if label_consistent else build_adversarial_captions(corpus, adversarial_class)

    images = []
    captions = []
    classes = []
    for i in chosen:
        img = source.images[i]
        for kind in trigger_kinds:
            img = apply_trigger(img, kind, params)
        images.append(img)
        if label_consistent:
            captions.append(source.captions[i].copy())
        else:
            captions.append(t_adv[int(rng_captions.integers(0, len(t_adv)))])
        classes.append(source.true_classes[i])
    tags = [tag] * count
    return np.stack(images), captions, classes, tags


def inject_backdoor(corpus: PairCorpus, spec: AttackSpec, source: PairCorpus) -> PairCorpus:
    """Append trigger-patched pairs per the attack kind; see the module docstring."""
    spec.validate()
    if spec.kind == "tdpa":
        raise ConfigurationError("use inject_tdpa for targeted poisoning")
    n = len(corpus)
    total = poison_budget(spec.poison_rate, n)
    if total < 1:
        raise ConfigurationError(
            f"poison_rate {spec.poison_rate} yields zero pairs on a corpus of {n}"
        )
    rng_sources = derive_rng(spec.seed, _SOURCE_STREAM)
    rng_captions = derive_rng(spec.seed, _CAPTION_STREAM)
    params = spec.trigger_params

    arms = []
    if spec.kind in SINGLE_TRIGGER_KINDS:
        arms.append(((spec.kind,), int(spec.adversarial_class), total, spec.kind, False))
    elif spec.kind == "label_consistent":
        arms.append((("badnet",), int(spec.adversarial_class), total, "label_consistent", True))
    elif spec.kind == "htba":
        arms.append((("warp", "blended", "badnet"), int(spec.adversarial_class), total, "htba", False))
    elif spec.kind == "pba_all2one":
        per, rem = divmod(total, len(SINGLE_TRIGGER_KINDS))
        if per < 1:
            raise ConfigurationError(
                f"pba_all2one budget {total} is under one pair per trigger"
            )
        for j, kind in enumerate(SINGLE_TRIGGER_KINDS):
            arms.append(
                ((kind,), int(spec.adversarial_class), per + (1 if j < rem else 0),
                 f"pba_all2one:{kind}", False)
            )
    elif spec.kind == "pba_all2all":
        for kind, cls in zip(SINGLE_TRIGGER_KINDS, spec.adversarial_class):
            arms.append(((kind,), int(cls), total, f"pba_all2all:{kind}", False))

    out = corpus
    for trigger_kinds, cls, count, tag, label_consistent in arms:
        images, captions, classes, tags = _trigger_arm(
            out, source, trigger_kinds, cls, count, params,
            rng_sources, rng_captions, tag, label_consistent,
        )
        out = concat_pairs(out, images, captions, classes, tags)
    return out


def inject(corpus: PairCorpus, spec: AttackSpec, source: PairCorpus) -> PairCorpus:
    if spec.kind == "tdpa":
        return inject_tdpa(corpus, spec, source)
    return inject_backdoor(corpus, spec, source)


def choose_targets(source: PairCorpus, adversarial_class: int, count: int, seed: int) -> tuple[int, ...]:
    """Deterministically pick tdpa target indices outside the adversarial class."""
    eligible = np.flatnonzero(source.true_classes != adversarial_class)
    if eligible.size < count:
        raise ConfigurationError(f"attack source has only {eligible.size} eligible targets")
    rng = derive_rng(seed, _TARGET_STREAM)
    return tuple(int(i) for i in rng.choice(eligible, size=count, replace=False))
