"""Poison-resilient contrastive image-caption pre-training at desk scale."""

from .attacks import AttackSpec, TriggerParams, apply_trigger, inject, inject_backdoor, inject_tdpa
from .errors import (
    ConfigurationError,
    EmptySafeSetError,
    InputError,
    SafeClipError,
    StateError,
    TrainingFault,
)
from .estimators import ClipBaseline, SafeClip, TwoComponentGmm
from .evaluation import (
    EvalContext,
    LinearProbe,
    attack_success_rate,
    linear_probe,
    safe_set_poison_stats,
    zero_shot,
)
from .gmm import (
    GmmFit,
    Partition,
    cosine_similarities,
    em_fit,
    fast_reevaluate,
    initial_partition,
    update_partition,
)
from .losses import clip_loss, safeclip_loss, unimodal_nn_loss
from .model import (
    ModelState,
    ReprBatch,
    apply_gradients,
    encode_images,
    encode_texts,
    init_model,
    load_model,
    save_model,
)
from .nn_pool import NNPool, nearest, pool_init, pool_update
from .synthdata import (
    PairCorpus,
    augment_caption,
    augment_image,
    generate_corpus,
    load_corpus,
    save_corpus,
)
from .trainer import (
    TrainConfig,
    low_lr_clip_pass,
    train_clip_baseline,
    train_safeclip,
    warmup_unimodal,
)

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "TriggerParams",
    "apply_trigger",
    "inject",
    "inject_backdoor",
    "inject_tdpa",
    "ConfigurationError",
    "EmptySafeSetError",
    "InputError",
    "SafeClipError",
    "StateError",
    "TrainingFault",
    "ClipBaseline",
    "SafeClip",
    "TwoComponentGmm",
    "EvalContext",
    "LinearProbe",
    "attack_success_rate",
    "linear_probe",
    "safe_set_poison_stats",
    "zero_shot",
    "GmmFit",
    "Partition",
    "cosine_similarities",
    "em_fit",
    "fast_reevaluate",
    "initial_partition",
    "update_partition",
    "clip_loss",
    "safeclip_loss",
    "unimodal_nn_loss",
    "ModelState",
    "ReprBatch",
    "apply_gradients",
    "encode_images",
    "encode_texts",
    "init_model",
    "load_model",
    "save_model",
    "NNPool",
    "nearest",
    "pool_init",
    "pool_update",
    "PairCorpus",
    "augment_caption",
    "augment_image",
    "generate_corpus",
    "load_corpus",
    "save_corpus",
    "TrainConfig",
    "low_lr_clip_pass",
    "train_clip_baseline",
    "train_safeclip",
    "warmup_unimodal",
]
