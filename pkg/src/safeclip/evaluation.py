"""Measurement side of the pipeline: zero-shot and linear-probe accuracy,
attack success rates, and safe-set poison statistics.

Zero-shot prediction scores each image against one canonical caption per
class (the class's full token range) and takes the argmax of the cosine
similarity, breaking ties toward the lowest class id. The linear probe is a
multinomial logistic regression on frozen image representations trained by
full-batch gradient descent with backtracking line search, so it is
deterministic and solver-free.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .attacks import SINGLE_TRIGGER_KINDS, AttackSpec, apply_hybrid_trigger, apply_trigger
from .errors import ConfigurationError, InputError
from .gmm import Partition
from .model import ModelState, image_forward, text_forward
from .synthdata import PairCorpus, Vocabulary


def encode_corpus(state: ModelState, corpus: PairCorpus, chunk: int = 512):
    """Image and text representations for every pair, computed in chunks."""
    n = len(corpus)
    img = np.empty((n, state.rep_dim))
    txt = np.empty((n, state.rep_dim))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        img[start:stop] = image_forward(state, corpus.images[start:stop])[0]
        txt[start:stop] = text_forward(state, corpus.captions[start:stop])[0]
    return img, txt


def encode_corpus_subset(state: ModelState, corpus: PairCorpus, indices, chunk: int = 512):
    idx = np.asarray(indices, dtype=np.int64)
    img = np.empty((idx.size, state.rep_dim))
    txt = np.empty((idx.size, state.rep_dim))
    for start in range(0, idx.size, chunk):
        sel = idx[start : start + chunk]
        img[start : start + sel.size] = image_forward(state, corpus.images[sel])[0]
        txt[start : start + sel.size] = text_forward(state, [corpus.captions[i] for i in sel])[0]
    return img, txt


def encode_images_chunked(state: ModelState, images: np.ndarray, chunk: int = 512) -> np.ndarray:
    out = np.empty((images.shape[0], state.rep_dim))
    for start in range(0, images.shape[0], chunk):
        stop = min(start + chunk, images.shape[0])
        out[start:stop] = image_forward(state, images[start:stop])[0]
    return out


def class_prompts(vocab: Vocabulary) -> list[np.ndarray]:
    """One canonical caption per class id, in class order."""
    return [vocab.class_prompt(c) for c in range(vocab.class_count)]


def predict_from_reps(image_reps: np.ndarray, prompt_reps: np.ndarray) -> np.ndarray:
    """Argmax over classes of cosine similarity; ties go to the lowest class id."""
    img_norm = np.linalg.norm(image_reps, axis=1, keepdims=True)
    prm_norm = np.linalg.norm(prompt_reps, axis=1, keepdims=True)
    img_norm[img_norm == 0] = 1.0
    prm_norm[prm_norm == 0] = 1.0
    sims = (image_reps / img_norm) @ (prompt_reps / prm_norm).T
    return np.argmax(sims, axis=1)


def zero_shot_predict(state: ModelState, images: np.ndarray, prompts: list[np.ndarray]) -> np.ndarray:
    prompt_reps, _ = text_forward(state, prompts)
    image_reps = encode_images_chunked(state, np.asarray(images, dtype=np.float64))
    return predict_from_reps(image_reps, prompt_reps)


def zero_shot(state: ModelState, images: np.ndarray, labels: np.ndarray, prompts: list[np.ndarray]) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InputError("empty zero-shot evaluation set")
    if labels.max() >= len(prompts):
        raise ConfigurationError(
            f"no prompt for class {int(labels.max())}; got {len(prompts)} prompts"
        )
    preds = zero_shot_predict(state, images, prompts)
    return float(np.mean(preds == labels))


def attack_success_rate(
    state: ModelState, images: np.ndarray, adversarial_class: int, prompts: list[np.ndarray]
) -> float:
    """Fraction of the eval images classified as the adversarial class."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] == 0:
        raise InputError("empty attack evaluation set")
    preds = zero_shot_predict(state, images, prompts)
    return float(np.mean(preds == adversarial_class))


@dataclass
class AttackEvalSet:
    name: str
    group: str
    images: np.ndarray
    adversarial_class: int


def _triggered_test_images(test_corpus: PairCorpus, adversarial_class: int, trigger_fn) -> np.ndarray:
    """Trigger every test image whose true class is not the adversarial one."""
    mask = test_corpus.true_classes != adversarial_class
    return np.stack([trigger_fn(img) for img in test_corpus.images[mask]])


def build_attack_eval_sets(
    spec: AttackSpec, source_corpus: PairCorpus, test_corpus: PairCorpus
) -> list[AttackEvalSet]:
    """Evaluation sets implied by an attack: target images for tdpa, triggered
    clean test images for backdoors (one set per trigger for the parallel kinds)."""
    params = spec.trigger_params
    if spec.kind == "tdpa":
        targets = np.asarray(spec.target_images, dtype=np.int64)
        return [
            AttackEvalSet("tdpa", "tdpa", source_corpus.images[targets], int(spec.adversarial_class))
        ]
    if spec.kind in SINGLE_TRIGGER_KINDS or spec.kind == "label_consistent":
        kind = "badnet" if spec.kind == "label_consistent" else spec.kind
        cls = int(spec.adversarial_class)
        images = _triggered_test_images(test_corpus, cls, lambda im: apply_trigger(im, kind, params))
        return [AttackEvalSet(spec.kind, spec.kind, images, cls)]
    if spec.kind == "htba":
        cls = int(spec.adversarial_class)
        images = _triggered_test_images(test_corpus, cls, lambda im: apply_hybrid_trigger(im, params))
        return [AttackEvalSet("htba", "htba", images, cls)]
    if spec.kind == "pba_all2one":
        cls = int(spec.adversarial_class)
        return [
            AttackEvalSet(
                f"pba_all2one:{kind}",
                "pba_all2one",
                _triggered_test_images(test_corpus, cls, lambda im, k=kind: apply_trigger(im, k, params)),
                cls,
            )
            for kind in SINGLE_TRIGGER_KINDS
        ]
    if spec.kind == "pba_all2all":
        return [
            AttackEvalSet(
                f"pba_all2all:{kind}",
                "pba_all2all",
                _triggered_test_images(test_corpus, int(cls), lambda im, k=kind: apply_trigger(im, k, params)),
                int(cls),
            )
            for kind, cls in zip(SINGLE_TRIGGER_KINDS, spec.adversarial_class)
        ]
    raise ConfigurationError(f"no evaluation recipe for attack kind {spec.kind!r}")


@dataclass
class EvalContext:
    test_images: np.ndarray
    test_labels: np.ndarray
    prompts: list[np.ndarray]
    attack_sets: list[AttackEvalSet] = field(default_factory=list)


def context_metrics(state: ModelState, ctx: EvalContext) -> dict:
    record = {"zero_shot_acc": zero_shot(state, ctx.test_images, ctx.test_labels, ctx.prompts)}
    groups: dict[str, list[float]] = {}
    for aset in ctx.attack_sets:
        rate = attack_success_rate(state, aset.images, aset.adversarial_class, ctx.prompts)
        record[f"asr:{aset.name}"] = rate
        groups.setdefault(aset.group, []).append(rate)
    for group, rates in groups.items():
        if len(rates) > 1:
            record[f"asr:{group}:mean"] = float(np.mean(rates))
    return record


def safe_set_poison_stats(partition: Partition, corpus: PairCorpus) -> tuple[float, float]:
    """Poisons inside the safe set, as a fraction of the safe set and of the corpus."""
    mask = corpus.poison_mask()
    if mask.size != partition.size:
        raise InputError("partition does not cover this corpus")
    in_safe = int(np.sum(mask[partition.safe_indices]))
    frac_of_safe = in_safe / partition.safe_indices.size if partition.safe_indices.size else 0.0
    frac_of_corpus = in_safe / mask.size if mask.size else 0.0
    return float(frac_of_safe), float(frac_of_corpus)


def mean_pair_similarities(similarities: np.ndarray, poison_mask: np.ndarray) -> tuple[float, float]:
    sims = np.asarray(similarities, dtype=np.float64)
    mask = np.asarray(poison_mask, dtype=bool)
    clean = float(np.mean(sims[~mask])) if np.any(~mask) else float("nan")
    poison = float(np.mean(sims[mask])) if np.any(mask) else float("nan")
    return clean, poison


class LinearProbe(BaseEstimator):
    """Multinomial logistic regression trained by full-batch gradient descent
    with Armijo backtracking; stops at gradient norm < grad_tol or max_iters."""

    def __init__(self, max_iters: int = 500, grad_tol: float = 1e-6):
        self.max_iters = max_iters
        self.grad_tol = grad_tol

    @staticmethod
    def _loss_grad(weights, bias, x, y_onehot):
        logits = x @ weights.T + bias
        lse = logsumexp(logits, axis=1)
        loss = float(np.mean(lse - np.sum(logits * y_onehot, axis=1)))
        probs = np.exp(logits - lse[:, None])
        g_logits = (probs - y_onehot) / x.shape[0]
        return loss, g_logits.T @ x, g_logits.sum(axis=0)

    def fit(self, X, y):
        x = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if np.unique(y).size < 2:
            raise ConfigurationError("linear probe needs at least two classes in the training split")
        n_classes = int(y.max()) + 1
        onehot = np.zeros((x.shape[0], n_classes))
        onehot[np.arange(x.shape[0]), y] = 1.0

        weights = np.zeros((n_classes, x.shape[1]))
        bias = np.zeros(n_classes)
        loss, g_w, g_b = self._loss_grad(weights, bias, x, onehot)
        for _ in range(self.max_iters):
            g_norm_sq = float(np.sum(g_w**2) + np.sum(g_b**2))
            if np.sqrt(g_norm_sq) < self.grad_tol:
                break
            step = 1.0
            while step > 1e-12:
                cand_w = weights - step * g_w
                cand_b = bias - step * g_b
                cand_loss, cand_gw, cand_gb = self._loss_grad(cand_w, cand_b, x, onehot)
                if cand_loss <= loss - 1e-4 * step * g_norm_sq:
                    break
                step *= 0.5
            weights, bias = cand_w, cand_b
            loss, g_w, g_b = cand_loss, cand_gw, cand_gb
        self.weights_ = weights
        self.bias_ = bias
        self.n_classes_ = n_classes
        return self

    def predict(self, X):
        x = np.asarray(X, dtype=np.float64)
        return np.argmax(x @ self.weights_.T + self.bias_, axis=1)

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y, dtype=np.int64)))


def linear_probe(state: ModelState, train_split, test_split, max_iters: int = 500) -> float:
    """Accuracy of a probe on frozen image representations.

    ``train_split`` / ``test_split`` are (images, labels) pairs from disjoint
    corpora.
    """
    train_images, train_labels = train_split
    test_images, test_labels = test_split
    x_train = encode_images_chunked(state, np.asarray(train_images, dtype=np.float64))
    x_test = encode_images_chunked(state, np.asarray(test_images, dtype=np.float64))
    probe = LinearProbe(max_iters=max_iters).fit(x_train, train_labels)
    return probe.score(x_test, test_labels)
