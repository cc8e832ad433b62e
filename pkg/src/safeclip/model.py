"""Tiny dual encoder mapping images and token captions onto a shared unit sphere.

Architecture, kept deliberately small so every gradient is hand-derived and
checkable against finite differences:

* image path: flatten -> dense(hidden) -> tanh -> linear projection -> L2 normalize
* text path:  token embedding -> mean pool -> linear projection -> L2 normalize

The similarity temperature is a trainable scalar stored as ``log_temperature``
and clamped so tau = exp(log_temperature) stays inside [TAU_MIN, TAU_MAX].
Optimization is SGD with momentum; all math is float64.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, TrainingFault
from .validation import check_caption_batch, check_image_batch

TAU_INIT = 0.07
TAU_MIN = 0.01
TAU_MAX = 1.0
MOMENTUM = 0.9
NORM_FLOOR = 1e-8

CHECKPOINT_VERSION = 1


@dataclass
class ReprBatch:
    """Unit-norm representations for one modality of one mini-batch."""

    reps: np.ndarray  # (N, d), rows have unit L2 norm
    source_indices: np.ndarray  # (N,) pair indices into the corpus

    def __len__(self) -> int:
        return self.reps.shape[0]


@dataclass
class ModelState:
    rep_dim: int
    image_shape: tuple[int, int]
    vocab_size: int
    hidden_dim: int
    embed_dim: int
    seed: int
    params: dict[str, np.ndarray]
    moments: dict[str, np.ndarray]
    step_counter: int = 0
    # caches are not part of the state; forward passes return them explicitly

    @property
    def temperature(self) -> float:
        return float(np.exp(self.params["log_temperature"]))

    def copy(self) -> "ModelState":
        return ModelState(
            rep_dim=self.rep_dim,
            image_shape=self.image_shape,
            vocab_size=self.vocab_size,
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
            seed=self.seed,
            params={k: v.copy() for k, v in self.params.items()},
            moments={k: v.copy() for k, v in self.moments.items()},
            step_counter=self.step_counter,
        )


def init_model(
    seed: int,
    rep_dim: int = 32,
    image_shape: tuple[int, int] = (16, 16),
    vocab_size: int = 64,
    hidden_dim: int = 64,
    embed_dim: int = 32,
) -> ModelState:
    """Deterministically initialize all weights; tau starts at TAU_INIT."""
    if rep_dim < 2:
        raise ConfigurationError(f"rep_dim must be >= 2, got {rep_dim}")
    if len(image_shape) != 2 or min(image_shape) < 1:
        raise ConfigurationError(f"invalid image_shape {image_shape!r}")
    if vocab_size < 2 or hidden_dim < 1 or embed_dim < 1:
        raise ConfigurationError("vocab_size must be >= 2 and hidden/embed dims >= 1")

    rng = np.random.default_rng(seed)
    n_pixels = image_shape[0] * image_shape[1]
    params = {
        "img_w1": rng.normal(0.0, 1.0 / np.sqrt(n_pixels), (hidden_dim, n_pixels)),
        "img_b1": np.zeros(hidden_dim),
        "img_proj_w": rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (rep_dim, hidden_dim)),
        "img_proj_b": np.zeros(rep_dim),
        "txt_embed": rng.normal(0.0, 1.0, (vocab_size, embed_dim)),
        "txt_proj_w": rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (rep_dim, embed_dim)),
        "txt_proj_b": np.zeros(rep_dim),
        "log_temperature": np.array(np.log(TAU_INIT)),
    }
    moments = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(
        rep_dim=rep_dim,
        image_shape=(int(image_shape[0]), int(image_shape[1])),
        vocab_size=vocab_size,
        hidden_dim=hidden_dim,
        embed_dim=embed_dim,
        seed=seed,
        params=params,
        moments=moments,
    )


def _normalize_rows(pre: np.ndarray):
    """Project rows onto the unit sphere; rows with norm < NORM_FLOOR become e1."""
    norms = np.linalg.norm(pre, axis=1)
    degenerate = norms < NORM_FLOOR
    safe_norms = np.where(degenerate, 1.0, norms)
    reps = pre / safe_norms[:, None]
    if np.any(degenerate):
        reps[degenerate] = 0.0
        reps[degenerate, 0] = 1.0
    return reps, norms, degenerate


def image_forward(state: ModelState, images: np.ndarray):
    """Encode an image batch, returning (reps, cache) for a later backward pass."""
    x = check_image_batch(images, state.image_shape)
    flat = x.reshape(x.shape[0], -1)
    act = flat @ state.params["img_w1"].T + state.params["img_b1"]
    hidden = np.tanh(act)
    pre = hidden @ state.params["img_proj_w"].T + state.params["img_proj_b"]
    reps, norms, degenerate = _normalize_rows(pre)
    cache = {"flat": flat, "hidden": hidden, "reps": reps, "norms": norms, "degenerate": degenerate}
    return reps, cache


def image_backward(state: ModelState, cache: dict, grad_reps: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. image-path parameters, given dL/d(reps)."""
    reps, norms, degenerate = cache["reps"], cache["norms"], cache["degenerate"]
    inner = np.sum(reps * grad_reps, axis=1, keepdims=True)
    grad_pre = (grad_reps - reps * inner) / np.where(degenerate, 1.0, norms)[:, None]
    grad_pre[degenerate] = 0.0  # substituted rows are locally constant

    hidden = cache["hidden"]
    grads = {
        "img_proj_w": grad_pre.T @ hidden,
        "img_proj_b": grad_pre.sum(axis=0),
    }
    grad_hidden = grad_pre @ state.params["img_proj_w"]
    grad_act = grad_hidden * (1.0 - hidden**2)
    grads["img_w1"] = grad_act.T @ cache["flat"]
    grads["img_b1"] = grad_act.sum(axis=0)
    return grads


def text_forward(state: ModelState, captions):
    """Encode a caption batch (list of token id sequences); bag-of-tokens pooling."""
    caps = check_caption_batch(captions, state.vocab_size)
    emb = state.params["txt_embed"]
    lengths = np.array([c.size for c in caps], dtype=np.float64)
    flat_tokens = np.concatenate(caps) if caps else np.zeros(0, dtype=np.int64)
    offsets = np.repeat(np.arange(len(caps)), [c.size for c in caps])
    pooled = np.zeros((len(caps), state.embed_dim))
    np.add.at(pooled, offsets, emb[flat_tokens])
    pooled /= lengths[:, None]
    pre = pooled @ state.params["txt_proj_w"].T + state.params["txt_proj_b"]
    reps, norms, degenerate = _normalize_rows(pre)
    cache = {
        "flat_tokens": flat_tokens,
        "offsets": offsets,
        "lengths": lengths,
        "pooled": pooled,
        "reps": reps,
        "norms": norms,
        "degenerate": degenerate,
    }
    return reps, cache


def text_backward(state: ModelState, cache: dict, grad_reps: np.ndarray) -> dict[str, np.ndarray]:
    reps, norms, degenerate = cache["reps"], cache["norms"], cache["degenerate"]
    inner = np.sum(reps * grad_reps, axis=1, keepdims=True)
    grad_pre = (grad_reps - reps * inner) / np.where(degenerate, 1.0, norms)[:, None]
    grad_pre[degenerate] = 0.0

    grads = {
        "txt_proj_w": grad_pre.T @ cache["pooled"],
        "txt_proj_b": grad_pre.sum(axis=0),
    }
    grad_pooled = grad_pre @ state.params["txt_proj_w"]
    per_token = grad_pooled[cache["offsets"]] / cache["lengths"][cache["offsets"], None]
    grad_emb = np.zeros_like(state.params["txt_embed"])
    np.add.at(grad_emb, cache["flat_tokens"], per_token)
    grads["txt_embed"] = grad_emb
    return grads


def encode_images(state: ModelState, images: np.ndarray, indices=None) -> ReprBatch:
    reps, _ = image_forward(state, images)
    if indices is None:
        indices = np.arange(reps.shape[0])
    return ReprBatch(reps=reps, source_indices=np.asarray(indices, dtype=np.int64))


def encode_texts(state: ModelState, captions, indices=None) -> ReprBatch:
    reps, _ = text_forward(state, captions)
    if indices is None:
        indices = np.arange(reps.shape[0])
    return ReprBatch(reps=reps, source_indices=np.asarray(indices, dtype=np.int64))


def zero_grads(state: ModelState) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in state.params.items()}


def accumulate_grads(total: dict[str, np.ndarray], partial: dict[str, np.ndarray]) -> None:
    for k, g in partial.items():
        total[k] += g


def apply_gradients(state: ModelState, grads: dict[str, np.ndarray], learning_rate: float) -> ModelState:
    """One SGD-with-momentum step over every parameter; mutates and returns ``state``.

    ``grads`` must supply an entry per parameter (use :func:`zero_grads` as the
    starting accumulator). Any non-finite gradient aborts the run.
    """
    if learning_rate < 0:
        raise InputError(f"learning_rate must be >= 0, got {learning_rate}")
    missing = set(state.params) - set(grads)
    extra = set(grads) - set(state.params)
    if missing or extra:
        raise InputError(f"gradient keys mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for key, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if g.shape != state.params[key].shape:
            raise InputError(f"gradient shape mismatch for {key}: {g.shape} vs {state.params[key].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingFault(f"non-finite gradient in {key} at step {state.step_counter}")
        v = state.moments[key]
        v *= MOMENTUM
        v += g
        state.params[key] -= learning_rate * v
    state.params["log_temperature"] = np.clip(
        state.params["log_temperature"], np.log(TAU_MIN), np.log(TAU_MAX)
    )
    state.step_counter += 1
    return state


def save_model(state: ModelState, path) -> None:
    """Checkpoint every field; load_model round-trips bit-exactly."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "rep_dim": state.rep_dim,
        "image_shape": list(state.image_shape),
        "vocab_size": state.vocab_size,
        "hidden_dim": state.hidden_dim,
        "embed_dim": state.embed_dim,
        "seed": state.seed,
        "step_counter": state.step_counter,
    }
    arrays = {f"param__{k}": v for k, v in state.params.items()}
    arrays.update({f"moment__{k}": v for k, v in state.moments.items()})
    arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> ModelState:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {meta.get('version')!r}")
        params = {k[len("param__"):]: data[k].copy() for k in data.files if k.startswith("param__")}
        moments = {k[len("moment__"):]: data[k].copy() for k in data.files if k.startswith("moment__")}
    return ModelState(
        rep_dim=meta["rep_dim"],
        image_shape=tuple(meta["image_shape"]),
        vocab_size=meta["vocab_size"],
        hidden_dim=meta["hidden_dim"],
        embed_dim=meta["embed_dim"],
        seed=meta["seed"],
        params=params,
        moments=moments,
        step_counter=meta["step_counter"],
    )


def model_bytes(state: ModelState) -> bytes:
    """Canonical byte serialization (used for hashing and determinism checks)."""
    buf = io.BytesIO()
    meta = json.dumps(
        {
            "rep_dim": state.rep_dim,
            "image_shape": list(state.image_shape),
            "vocab_size": state.vocab_size,
            "hidden_dim": state.hidden_dim,
            "embed_dim": state.embed_dim,
            "seed": state.seed,
            "step_counter": state.step_counter,
        },
        sort_keys=True,
    ).encode()
    buf.write(meta)
    for key in sorted(state.params):
        buf.write(key.encode())
        buf.write(np.ascontiguousarray(state.params[key]).tobytes())
    for key in sorted(state.moments):
        buf.write(key.encode())
        buf.write(np.ascontiguousarray(state.moments[key]).tobytes())
    return buf.getvalue()
