"""Estimator-style entry points so the pipeline composes with the usual
fit/transform/predict ecosystem.

``ClipBaseline`` and ``SafeClip`` wrap the trainer: ``fit(corpus)`` trains the
dual encoder, after which ``transform`` returns image representations and
``predict`` performs zero-shot classification against the corpus's class
prompts. ``TwoComponentGmm`` wraps the 1-D EM fit.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import evaluation, trainer
from .gmm import em_fit, mixture_posterior
from .model import encode_texts, init_model
from .synthdata import PairCorpus


class _FittedEncoderMixin:
    def _check_fitted(self):
        if getattr(self, "state_", None) is None:
            raise NotFittedError("call fit() before using this estimator")

    def transform(self, images):
        """Unit-norm image representations from the frozen encoder."""
        self._check_fitted()
        return evaluation.encode_images_chunked(self.state_, np.asarray(images, dtype=np.float64))

    def encode_captions(self, captions):
        self._check_fitted()
        return encode_texts(self.state_, captions).reps

    def predict(self, images):
        """Zero-shot class predictions using the fitted corpus's class prompts."""
        self._check_fitted()
        return evaluation.zero_shot_predict(self.state_, np.asarray(images, dtype=np.float64), self.prompts_)

    def score(self, images, labels):
        self._check_fitted()
        return float(np.mean(self.predict(images) == np.asarray(labels, dtype=np.int64)))

    def _train_config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            warmup_epochs=getattr(self, "warmup_epochs", 0),
            total_epochs=self.total_epochs,
            lr=self.lr,
            lr_low=getattr(self, "lr_low", None),
            batch_size=self.batch_size,
            gmm_threshold=getattr(self, "gmm_threshold", 0.9),
            growth_s=getattr(self, "growth_s", 1.0),
            pool_capacity=getattr(self, "pool_capacity", 4096),
            fast_reeval_q=getattr(self, "fast_reeval_q", None),
            disable_risky_unimodal=getattr(self, "disable_risky_unimodal", False),
            disable_nn_pool=getattr(self, "disable_nn_pool", False),
            seed=self.seed,
        )

    def _init_state(self, corpus: PairCorpus):
        return init_model(
            seed=self.seed,
            rep_dim=self.rep_dim,
            image_shape=corpus.image_shape,
            vocab_size=corpus.vocab.vocab_size,
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
        )


class ClipBaseline(_FittedEncoderMixin, BaseEstimator):
    """Undefended contrastive pre-training on every pair."""

    def __init__(
        self,
        rep_dim: int = 32,
        hidden_dim: int = 64,
        embed_dim: int = 32,
        total_epochs: int = 20,
        lr: float = 1.0,
        batch_size: int = 128,
        seed: int = 0,
        eval_every: int = 1,
    ):
        self.rep_dim = rep_dim
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.total_epochs = total_epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.eval_every = eval_every

    def fit(self, corpus: PairCorpus, eval_context: evaluation.EvalContext | None = None):
        config = self._train_config()
        state = self._init_state(corpus)
        result = trainer.train_clip_baseline(state, corpus, config, eval_context, self.eval_every)
        self.state_ = result.state
        self.metrics_ = result.metrics
        self.prompts_ = evaluation.class_prompts(corpus.vocab)
        return self


class SafeClip(_FittedEncoderMixin, BaseEstimator):
    """Defended pre-training: warmup, low-lr association pass, and mixed
    training on the GMM-partitioned corpus with safe-set growth."""

    def __init__(
        self,
        rep_dim: int = 32,
        hidden_dim: int = 64,
        embed_dim: int = 32,
        warmup_epochs: int = 5,
        total_epochs: int = 20,
        lr: float = 1.0,
        lr_low: float | None = None,
        batch_size: int = 128,
        gmm_threshold: float = 0.9,
        growth_s: float = 1.0,
        pool_capacity: int = 4096,
        fast_reeval_q: float | None = None,
        disable_risky_unimodal: bool = False,
        disable_nn_pool: bool = False,
        seed: int = 0,
        eval_every: int = 1,
    ):
        self.rep_dim = rep_dim
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.warmup_epochs = warmup_epochs
        self.total_epochs = total_epochs
        self.lr = lr
        self.lr_low = lr_low
        self.batch_size = batch_size
        self.gmm_threshold = gmm_threshold
        self.growth_s = growth_s
        self.pool_capacity = pool_capacity
        self.fast_reeval_q = fast_reeval_q
        self.disable_risky_unimodal = disable_risky_unimodal
        self.disable_nn_pool = disable_nn_pool
        self.seed = seed
        self.eval_every = eval_every

    def fit(
        self,
        corpus: PairCorpus,
        eval_context: evaluation.EvalContext | None = None,
        checkpoint_hook=None,
    ):
        config = self._train_config()
        state = self._init_state(corpus)
        result = trainer.run_safeclip_training(
            state, corpus, config, eval_context, self.eval_every, checkpoint_hook
        )
        self.state_ = result.state
        self.pools_ = result.pools
        self.metrics_ = result.metrics
        self.partition_trace_ = result.partition_trace
        self.prompts_ = evaluation.class_prompts(corpus.vocab)
        return self


class TwoComponentGmm(BaseEstimator):
    """1-D two-Gaussian mixture; ``posteriors_`` holds the responsibility of
    the larger-mean component for each training point."""

    def __init__(self, max_iters: int = 100, tol: float = 1e-6):
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        fit = em_fit(np.asarray(X).reshape(-1), max_iters=self.max_iters, tol=self.tol)
        self.weights_ = fit.weights
        self.means_ = fit.means
        self.variances_ = fit.variances
        self.posteriors_ = fit.posteriors
        self.log_likelihood_trace_ = fit.log_likelihood_trace
        self.converged_ = fit.converged
        return self

    def predict_proba(self, X):
        if getattr(self, "means_", None) is None:
            raise NotFittedError("call fit() first")
        p_hi = mixture_posterior(np.asarray(X).reshape(-1), self.weights_, self.means_, self.variances_)
        return np.column_stack([1.0 - p_hi, p_hi])
