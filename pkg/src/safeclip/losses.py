"""Contrastive training objectives with analytic gradients.

Three objectives:

* ``clip_loss``: symmetric cross-modal InfoNCE over a batch of paired
  image/text representations, averaged with weight 1/(2N) per direction.
* ``unimodal_nn_loss``: within-modality InfoNCE where each example is
  anchored at its nearest neighbor in a representation pool and the positive
  is the example's augmented view. The pool lookup is a hard, non-trainable
  selection, so gradients flow only into the augmented views (and the shared
  temperature).
* ``mixed_loss``: sum of the two unimodal terms on a risky batch and the
  cross-modal term on an augmented safe batch.

Every function returns the loss value together with gradients w.r.t. its
representation inputs and w.r.t. log(tau). Gradients are exact; the test
suite checks them against central finite differences. Math runs in the dtype
of the inputs (float64 reference path, float32 fast path).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InputError
from .nn_pool import NNPool, nearest_batch
from .validation import as_matrix

__all__ = [
    "ClipLossOutput",
    "UnimodalLossOutput",
    "MixedLossOutput",
    "clip_loss",
    "unimodal_nn_loss",
    "safeclip_loss",
]


@dataclass
class ClipLossOutput:
    value: float
    grad_image_reps: np.ndarray
    grad_text_reps: np.ndarray
    grad_log_temperature: float


@dataclass
class UnimodalLossOutput:
    value: float
    grad_augmented_reps: np.ndarray
    grad_log_temperature: float
    anchor_indices: np.ndarray  # pool slots used as anchors (or -1 for self-anchors)


@dataclass
class MixedLossOutput:
    value: float
    grad_risky_image_aug: np.ndarray
    grad_risky_text_aug: np.ndarray
    grad_safe_image_reps: np.ndarray
    grad_safe_text_reps: np.ndarray
    grad_log_temperature: float
    clip_term: float
    image_unimodal_term: float
    text_unimodal_term: float


def _check_tau(tau: float) -> float:
    if not tau > 0:
        raise InputError(f"temperature must be > 0, got {tau}")
    return float(tau)


def clip_loss(image_reps, text_reps, tau: float) -> ClipLossOutput:
    """Symmetric InfoNCE over matched image/text rows.

    For logits A = (Z_I Z_T^T)/tau the value is the mean of the image->text
    and text->image cross entropies of the diagonal, each weighted 1/(2N).
    """
    tau = _check_tau(tau)
    zi = as_matrix(image_reps, "image_reps")
    zt = as_matrix(text_reps, "text_reps")
    if zi.shape[0] == 0:
        raise InputError("clip_loss needs at least one pair")
    if zi.shape != zt.shape:
        raise InputError(f"batch shape mismatch: {zi.shape} vs {zt.shape}")

    n = zi.shape[0]
    logits = (zi @ zt.T) / tau
    lse_rows = logsumexp(logits, axis=1)  # image -> text
    lse_cols = logsumexp(logits, axis=0)  # text -> image
    diag = np.diag(logits)
    value = float((np.sum(lse_rows - diag) + np.sum(lse_cols - diag)) / (2 * n))

    p_rows = np.exp(logits - lse_rows[:, None])
    p_cols = np.exp(logits - lse_cols[None, :])
    grad_logits = (p_rows + p_cols) / (2 * n)
    idx = np.arange(n)
    grad_logits[idx, idx] -= 1.0 / n

    grad_zi = grad_logits @ zt / tau
    grad_zt = grad_logits.T @ zi / tau
    # d/d(log tau): logits scale as 1/tau, so dA/d(log tau) = -A
    grad_log_tau = float(-np.sum(grad_logits * logits))
    return ClipLossOutput(value, grad_zi, grad_zt, grad_log_tau)


def unimodal_nn_loss(reps, augmented_reps, pool: NNPool | None, tau: float) -> UnimodalLossOutput:
    """Within-modality InfoNCE with pool-nearest-neighbor anchors.

    Anchor i is the pool entry closest to reps[i] (or reps[i] itself when
    ``pool`` is None, the no-pool ablation). Logits A[i, k] =
    <anchor_i, aug_k>/tau; the positive is k = i and the denominator runs
    over the whole batch including k = i. The anchor selection carries no
    gradient, so only ``augmented_reps`` and log(tau) receive gradients.
    """
    tau = _check_tau(tau)
    z = as_matrix(reps, "reps")
    z_aug = as_matrix(augmented_reps, "augmented_reps")
    if z.shape != z_aug.shape:
        raise InputError(f"reps/augmented shape mismatch: {z.shape} vs {z_aug.shape}")
    if z.shape[0] == 0:
        raise InputError("unimodal_nn_loss needs at least one example")

    if pool is None:
        anchors = z
        anchor_idx = np.full(z.shape[0], -1, dtype=np.int64)
    else:
        anchors, anchor_idx = nearest_batch(pool, z)

    n = z.shape[0]
    logits = (anchors @ z_aug.T) / tau
    lse = logsumexp(logits, axis=1)
    diag = np.diag(logits)
    value = float(np.mean(lse - diag))

    probs = np.exp(logits - lse[:, None])
    grad_logits = probs / n
    idx = np.arange(n)
    grad_logits[idx, idx] -= 1.0 / n

    grad_aug = grad_logits.T @ anchors / tau
    grad_log_tau = float(-np.sum(grad_logits * logits))
    return UnimodalLossOutput(value, grad_aug, grad_log_tau, anchor_idx)


def safeclip_loss(
    risky_image,
    risky_image_aug,
    risky_text,
    risky_text_aug,
    image_pool: NNPool | None,
    text_pool: NNPool | None,
    safe_image_aug,
    safe_text_aug,
    tau: float,
) -> MixedLossOutput:
    """Mixed objective: unimodal terms on the risky batch + cross-modal term on the safe batch.

    Either side may be empty (zero-row matrices); the corresponding terms and
    gradients are zero. Both sides empty is an error.
    """
    tau = _check_tau(tau)
    ri = as_matrix(risky_image, "risky_image")
    rt = as_matrix(risky_text, "risky_text")
    si = as_matrix(safe_image_aug, "safe_image_aug")
    st = as_matrix(safe_text_aug, "safe_text_aug")
    n_risky, n_safe = ri.shape[0], si.shape[0]
    if n_risky == 0 and n_safe == 0:
        raise InputError("mixed loss needs a non-empty risky or safe batch")

    d = ri.shape[1] if n_risky else si.shape[1]
    out = MixedLossOutput(
        value=0.0,
        grad_risky_image_aug=np.zeros((n_risky, d)),
        grad_risky_text_aug=np.zeros((n_risky, d)),
        grad_safe_image_reps=np.zeros((n_safe, d)),
        grad_safe_text_reps=np.zeros((n_safe, d)),
        grad_log_temperature=0.0,
        clip_term=0.0,
        image_unimodal_term=0.0,
        text_unimodal_term=0.0,
    )

    if n_risky:
        img_term = unimodal_nn_loss(ri, risky_image_aug, image_pool, tau)
        txt_term = unimodal_nn_loss(rt, risky_text_aug, text_pool, tau)
        out.image_unimodal_term = img_term.value
        out.text_unimodal_term = txt_term.value
        out.grad_risky_image_aug = img_term.grad_augmented_reps
        out.grad_risky_text_aug = txt_term.grad_augmented_reps
        out.grad_log_temperature += img_term.grad_log_temperature + txt_term.grad_log_temperature
        out.value += img_term.value + txt_term.value

    if n_safe:
        clip_term = clip_loss(si, st, tau)
        out.clip_term = clip_term.value
        out.grad_safe_image_reps = clip_term.grad_image_reps
        out.grad_safe_text_reps = clip_term.grad_text_reps
        out.grad_log_temperature += clip_term.grad_log_temperature
        out.value += clip_term.value

    return out
