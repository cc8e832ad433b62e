"""Training orchestration: unimodal warmup, one low-lr cross-modal pass,
per-epoch GMM partitioning, and mixed training with safe-set growth, plus an
undefended baseline trainer for comparison.

Epoch numbering is global: warmup occupies epochs [0, r), the low-lr pass is
a single extra sweep, and mixed training runs epochs [r, T). The safe ratio
follows m(epoch) = min(m0 + s * (epoch - r), 100) where m0 comes from the
initial posterior-threshold split.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import evaluation
from .errors import ConfigurationError, EmptySafeSetError, TrainingFault
from .gmm import (
    Partition,
    cosine_similarities,
    em_fit,
    fast_reevaluate,
    initial_partition,
    reevaluation_indices,
    reevaluation_window,
    update_partition,
)
from .losses import clip_loss, safeclip_loss, unimodal_nn_loss
from .model import (
    ModelState,
    accumulate_grads,
    apply_gradients,
    image_forward,
    image_backward,
    text_forward,
    text_backward,
    zero_grads,
)
from .nn_pool import NNPool, pool_init, pool_update
from .synthdata import (
    PairCorpus,
    augment_caption,
    augment_image,
    derive_caption_aug_seed,
    derive_image_aug_seed,
)
from .validation import derive_rng

log = logging.getLogger(__name__)

_PH_POOL_IMAGE = 10
_PH_POOL_TEXT = 11
_PH_WARMUP = 12
_PH_LOWLR = 13
_PH_MIXED = 14
_PH_BASELINE = 15

_MIXED_AUG_BASE = 1_000_000  # keeps mixed-phase augmentation streams off the warmup ones
_MAX_EMPTY_SAFE_RETRIES = 3


@dataclass
class TrainConfig:
    warmup_epochs: int = 5
    total_epochs: int = 20
    lr: float = 1.0
    lr_low: float | None = None  # defaults to lr / 100
    batch_size: int = 128
    gmm_threshold: float = 0.9
    growth_s: float = 1.0
    pool_capacity: int = 4096
    fast_reeval_q: float | None = None
    disable_risky_unimodal: bool = False
    disable_nn_pool: bool = False
    seed: int = 0

    @property
    def resolved_lr_low(self) -> float:
        return self.lr * 0.01 if self.lr_low is None else self.lr_low

    def validate(self) -> None:
        if self.warmup_epochs < 0:
            raise ConfigurationError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.total_epochs <= self.warmup_epochs:
            raise ConfigurationError(
                f"total_epochs ({self.total_epochs}) must exceed warmup_epochs ({self.warmup_epochs})"
            )
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.resolved_lr_low < 0 or self.resolved_lr_low >= self.lr:
            raise ConfigurationError(
                f"lr_low must satisfy 0 <= lr_low < lr, got {self.resolved_lr_low}"
            )
        if not 0.0 < self.gmm_threshold < 1.0:
            raise ConfigurationError(f"gmm_threshold must be in (0, 1), got {self.gmm_threshold}")
        if not self.growth_s > 0:
            raise ConfigurationError(f"growth_s must be > 0, got {self.growth_s}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pool_capacity < 1:
            raise ConfigurationError(f"pool_capacity must be >= 1, got {self.pool_capacity}")
        if self.fast_reeval_q is not None and not 0.0 < self.fast_reeval_q <= 100.0:
            raise ConfigurationError(f"fast_reeval_q must be in (0, 100], got {self.fast_reeval_q}")


@dataclass
class Pools:
    image: NNPool
    text: NNPool


@dataclass
class PartitionRecord:
    epoch: int
    partition: Partition
    posteriors: np.ndarray
    similarities: np.ndarray


@dataclass
class TrainResult:
    state: ModelState
    pools: Pools | None
    partition_trace: list[PartitionRecord] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start : start + batch_size]


def _augmented_images(corpus: PairCorpus, indices: np.ndarray, seed: int, epoch_key: int) -> np.ndarray:
    return np.stack(
        [
            augment_image(corpus.images[i], derive_image_aug_seed(seed, epoch_key, int(i)))
            for i in indices
        ]
    )


def _augmented_captions(corpus: PairCorpus, indices: np.ndarray, seed: int, epoch_key: int) -> list:
    return [
        augment_caption(corpus.captions[i], corpus.vocab, derive_caption_aug_seed(seed, epoch_key, int(i)))
        for i in indices
    ]


def _unimodal_batch_step(
    state: ModelState,
    pools: Pools,
    corpus: PairCorpus,
    batch_idx: np.ndarray,
    config: TrainConfig,
    epoch_key: int,
) -> tuple[float, float]:
    """One joint image+text unimodal step; pools are refreshed with the original reps."""
    tau = state.temperature
    images = corpus.images[batch_idx]
    captions = [corpus.captions[i] for i in batch_idx]

    img_orig, _ = image_forward(state, images)
    txt_orig, _ = text_forward(state, captions)

    aug_imgs = _augmented_images(corpus, batch_idx, config.seed, epoch_key)
    aug_caps = _augmented_captions(corpus, batch_idx, config.seed, epoch_key)
    img_aug, img_cache = image_forward(state, aug_imgs)
    txt_aug, txt_cache = text_forward(state, aug_caps)

    image_pool = None if config.disable_nn_pool else pools.image
    text_pool = None if config.disable_nn_pool else pools.text
    img_loss = unimodal_nn_loss(img_orig, img_aug, image_pool, tau)
    txt_loss = unimodal_nn_loss(txt_orig, txt_aug, text_pool, tau)

    grads = zero_grads(state)
    accumulate_grads(grads, image_backward(state, img_cache, img_loss.grad_augmented_reps))
    accumulate_grads(grads, text_backward(state, txt_cache, txt_loss.grad_augmented_reps))
    grads["log_temperature"] += img_loss.grad_log_temperature + txt_loss.grad_log_temperature
    apply_gradients(state, grads, config.lr)

    pool_update(pools.image, img_orig)
    pool_update(pools.text, txt_orig)
    return img_loss.value, txt_loss.value


def _unimodal_epoch(
    state: ModelState, pools: Pools, corpus: PairCorpus, config: TrainConfig, epoch_key: int
) -> dict:
    order = derive_rng(config.seed, _PH_WARMUP, epoch_key).permutation(len(corpus))
    img_total = txt_total = 0.0
    steps = 0
    for batch_idx in _batches(order, config.batch_size):
        li, lt = _unimodal_batch_step(state, pools, corpus, batch_idx, config, epoch_key)
        img_total += li
        txt_total += lt
        steps += 1
    return {"image_unimodal_term": img_total / steps, "text_unimodal_term": txt_total / steps}


def init_pools(state: ModelState, config: TrainConfig) -> Pools:
    return Pools(
        image=pool_init(config.pool_capacity, int(derive_rng(config.seed, _PH_POOL_IMAGE).integers(2**32)), state.rep_dim),
        text=pool_init(config.pool_capacity, int(derive_rng(config.seed, _PH_POOL_TEXT).integers(2**32)), state.rep_dim),
    )


def warmup_unimodal(state: ModelState, corpus: PairCorpus, config: TrainConfig) -> tuple[ModelState, Pools]:
    """Warmup epochs of within-modality contrastive training; also initializes the pools."""
    config.validate()
    pools = init_pools(state, config)
    for epoch in range(config.warmup_epochs):
        stats = _unimodal_epoch(state, pools, corpus, config, epoch)
        log.info("warmup epoch %d: image=%.4f text=%.4f", epoch, stats["image_unimodal_term"], stats["text_unimodal_term"])
    return state, pools


def _clip_epoch(state: ModelState, corpus: PairCorpus, config: TrainConfig, lr: float, phase: int, epoch: int) -> float:
    order = derive_rng(config.seed, phase, epoch).permutation(len(corpus))
    total = 0.0
    steps = 0
    for batch_idx in _batches(order, config.batch_size):
        tau = state.temperature
        img_reps, img_cache = image_forward(state, corpus.images[batch_idx])
        txt_reps, txt_cache = text_forward(state, [corpus.captions[i] for i in batch_idx])
        out = clip_loss(img_reps, txt_reps, tau)
        grads = zero_grads(state)
        accumulate_grads(grads, image_backward(state, img_cache, out.grad_image_reps))
        accumulate_grads(grads, text_backward(state, txt_cache, out.grad_text_reps))
        grads["log_temperature"] += out.grad_log_temperature
        apply_gradients(state, grads, lr)
        total += out.value
        steps += 1
    return total / steps


def low_lr_clip_pass(state: ModelState, corpus: PairCorpus, config: TrainConfig) -> ModelState:
    """Exactly one cross-modal epoch at the reduced learning rate."""
    config.validate()
    loss = _clip_epoch(state, corpus, config, config.resolved_lr_low, _PH_LOWLR, 0)
    log.info("low-lr pass: clip=%.4f", loss)
    return state


def _corpus_similarities(state: ModelState, corpus: PairCorpus) -> np.ndarray:
    img, txt = evaluation.encode_corpus(state, corpus)
    return cosine_similarities(img, txt)


def _refresh_similarities(
    state: ModelState,
    corpus: PairCorpus,
    config: TrainConfig,
    previous: PartitionRecord | None,
) -> np.ndarray:
    if previous is None or config.fast_reeval_q is None:
        return _corpus_similarities(state, corpus)
    # the refresh window must cover the next safe ratio; widen it when growth
    # has caught up with the configured q
    q_eff = max(config.fast_reeval_q, previous.partition.safe_ratio_m + previous.partition.growth_s)
    reevaluation_window(previous.partition, q_eff)
    refresh = reevaluation_indices(previous.posteriors, q_eff)
    img, txt = evaluation.encode_corpus_subset(state, corpus, refresh)
    return fast_reevaluate(img, txt, refresh, previous.similarities)


def _mixed_epoch(
    state: ModelState,
    pools: Pools,
    corpus: PairCorpus,
    config: TrainConfig,
    partition: Partition,
    epoch: int,
) -> dict:
    safe = partition.safe_indices
    risky = partition.risky_indices if not config.disable_risky_unimodal else np.zeros(0, dtype=np.int64)
    rng = derive_rng(config.seed, _PH_MIXED, epoch)
    safe_order = rng.permutation(safe) if safe.size else safe
    risky_order = rng.permutation(risky) if risky.size else risky
    epoch_key = _MIXED_AUG_BASE + epoch

    n_steps = int(np.ceil(max(safe.size, risky.size, 1) / config.batch_size))
    safe_pos = risky_pos = 0
    totals = {"clip_term": 0.0, "image_unimodal_term": 0.0, "text_unimodal_term": 0.0, "loss": 0.0}

    for _ in range(n_steps):
        if safe.size:
            if safe_pos >= safe_order.size:
                safe_order = rng.permutation(safe)
                safe_pos = 0
            safe_idx = safe_order[safe_pos : safe_pos + config.batch_size]
            safe_pos += config.batch_size
        else:
            safe_idx = np.zeros(0, dtype=np.int64)
        if risky.size:
            if risky_pos >= risky_order.size:
                risky_order = rng.permutation(risky)
                risky_pos = 0
            risky_idx = risky_order[risky_pos : risky_pos + config.batch_size]
            risky_pos += config.batch_size
        else:
            risky_idx = np.zeros(0, dtype=np.int64)

        tau = state.temperature
        grads = zero_grads(state)

        if risky_idx.size:
            r_img_orig, _ = image_forward(state, corpus.images[risky_idx])
            r_txt_orig, _ = text_forward(state, [corpus.captions[i] for i in risky_idx])
            r_img_aug, r_img_cache = image_forward(state, _augmented_images(corpus, risky_idx, config.seed, epoch_key))
            r_txt_aug, r_txt_cache = text_forward(state, _augmented_captions(corpus, risky_idx, config.seed, epoch_key))
        else:
            r_img_orig = r_txt_orig = np.zeros((0, state.rep_dim))
            r_img_aug = r_txt_aug = np.zeros((0, state.rep_dim))

        if safe_idx.size:
            s_img_aug, s_img_cache = image_forward(state, _augmented_images(corpus, safe_idx, config.seed, epoch_key))
            s_txt_aug, s_txt_cache = text_forward(state, _augmented_captions(corpus, safe_idx, config.seed, epoch_key))
        else:
            s_img_aug = s_txt_aug = np.zeros((0, state.rep_dim))

        out = safeclip_loss(
            r_img_orig,
            r_img_aug,
            r_txt_orig,
            r_txt_aug,
            None if config.disable_nn_pool else pools.image,
            None if config.disable_nn_pool else pools.text,
            s_img_aug,
            s_txt_aug,
            tau,
        )

        if risky_idx.size:
            accumulate_grads(grads, image_backward(state, r_img_cache, out.grad_risky_image_aug))
            accumulate_grads(grads, text_backward(state, r_txt_cache, out.grad_risky_text_aug))
        if safe_idx.size:
            accumulate_grads(grads, image_backward(state, s_img_cache, out.grad_safe_image_reps))
            accumulate_grads(grads, text_backward(state, s_txt_cache, out.grad_safe_text_reps))
        grads["log_temperature"] += out.grad_log_temperature
        apply_gradients(state, grads, config.lr)

        if risky_idx.size:
            pool_update(pools.image, r_img_orig)
            pool_update(pools.text, r_txt_orig)

        totals["clip_term"] += out.clip_term
        totals["image_unimodal_term"] += out.image_unimodal_term
        totals["text_unimodal_term"] += out.text_unimodal_term
        totals["loss"] += out.value

    return {k: v / n_steps for k, v in totals.items()}


def _epoch_metrics(
    state: ModelState,
    corpus: PairCorpus,
    epoch: int,
    phase: str,
    loss_stats: dict,
    partition: Partition | None,
    sims: np.ndarray | None,
    eval_context: "evaluation.EvalContext | None",
    eval_every: int,
) -> dict:
    record: dict = {"epoch": epoch, "phase": phase}
    record.update({k: float(v) for k, v in loss_stats.items()})
    if partition is not None:
        record["m_percent"] = float(partition.safe_ratio_m)
        record["safe_size"] = int(partition.safe_indices.size)
        frac_safe, frac_corpus = evaluation.safe_set_poison_stats(partition, corpus)
        record["safe_poison_frac_of_safe"] = frac_safe
        record["safe_poison_frac_of_corpus"] = frac_corpus
    if sims is not None:
        clean_mean, poison_mean = evaluation.mean_pair_similarities(sims, corpus.poison_mask())
        record["mean_clean_similarity"] = clean_mean
        record["mean_poison_similarity"] = poison_mean
    if eval_context is not None and eval_every > 0 and (epoch % eval_every == 0):
        record.update(evaluation.context_metrics(state, eval_context))
    return record


def train_safeclip(
    state: ModelState,
    corpus: PairCorpus,
    config: TrainConfig,
    pools: Pools,
    eval_context: "evaluation.EvalContext | None" = None,
    eval_every: int = 1,
) -> TrainResult:
    """Mixed-training epochs [r, T): partition, then cross-modal on safe plus
    within-modality on risky, growing the safe ratio by s per epoch."""
    config.validate()
    result = TrainResult(state=state, pools=pools)
    partition: Partition | None = None
    previous_record: PartitionRecord | None = None
    empty_retries = 0

    for epoch in range(config.warmup_epochs, config.total_epochs):
        sims = _refresh_similarities(state, corpus, config, previous_record)
        fit = em_fit(sims)

        if partition is None:
            try:
                partition = initial_partition(fit, config.gmm_threshold)
                partition.growth_s = config.growth_s
            except EmptySafeSetError:
                empty_retries += 1
                log.warning("empty safe set at epoch %d (attempt %d); running a unimodal recovery epoch", epoch, empty_retries)
                if empty_retries >= _MAX_EMPTY_SAFE_RETRIES:
                    raise TrainingFault(
                        f"safe set stayed empty after {empty_retries} partition attempts"
                    )
                stats = _unimodal_epoch(state, pools, corpus, config, _MIXED_AUG_BASE + epoch)
                result.metrics.append(
                    _epoch_metrics(state, corpus, epoch, "recovery", stats, None, sims, eval_context, eval_every)
                )
                continue
        else:
            partition = update_partition(fit, partition, config.growth_s)

        previous_record = PartitionRecord(epoch=epoch, partition=partition, posteriors=fit.posteriors, similarities=sims)
        result.partition_trace.append(previous_record)

        stats = _mixed_epoch(state, pools, corpus, config, partition, epoch)
        result.metrics.append(
            _epoch_metrics(state, corpus, epoch, "mixed", stats, partition, sims, eval_context, eval_every)
        )
        log.info(
            "mixed epoch %d: m=%.2f%% loss=%.4f clip=%.4f",
            epoch, partition.safe_ratio_m, stats["loss"], stats["clip_term"],
        )
    return result


def train_clip_baseline(
    state: ModelState,
    corpus: PairCorpus,
    config: TrainConfig,
    eval_context: "evaluation.EvalContext | None" = None,
    eval_every: int = 1,
) -> TrainResult:
    """Undefended control: plain cross-modal training over every pair for all epochs."""
    config.validate()
    result = TrainResult(state=state, pools=None)
    for epoch in range(config.total_epochs):
        loss = _clip_epoch(state, corpus, config, config.lr, _PH_BASELINE, epoch)
        result.metrics.append(
            _epoch_metrics(state, corpus, epoch, "baseline", {"loss": loss, "clip_term": loss}, None, None, eval_context, eval_every)
        )
        log.info("baseline epoch %d: clip=%.4f", epoch, loss)
    return result


def run_safeclip_training(
    state: ModelState,
    corpus: PairCorpus,
    config: TrainConfig,
    eval_context: "evaluation.EvalContext | None" = None,
    eval_every: int = 1,
    checkpoint_hook=None,
) -> TrainResult:
    """Full defended pipeline: warmup, low-lr pass, then mixed training.

    ``checkpoint_hook(name, state)`` fires at phase boundaries when given.
    """
    state, pools = warmup_unimodal(state, corpus, config)
    if checkpoint_hook:
        checkpoint_hook("post_warmup", state)
    state = low_lr_clip_pass(state, corpus, config)
    if checkpoint_hook:
        checkpoint_hook("post_low_lr", state)
    result = train_safeclip(state, corpus, config, pools, eval_context, eval_every)
    if checkpoint_hook:
        checkpoint_hook("final", result.state)
    return result
