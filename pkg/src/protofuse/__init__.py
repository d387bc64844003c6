"""Prototype estimation, completion and Gaussian fusion for few-shot
classification over pre-extracted feature embeddings."""

from .data import (
    EmbeddingStore,
    Episode,
    SyntheticSpec,
    attribute_distribution,
    class_prototype,
    generate_synthetic,
    load_embeddings,
    sample_episode,
    save_embeddings,
)
from .evaluation import EvalReport, classify, evaluate, prototype_fidelity
from .fusion import (
    FusionConfig,
    PrototypeSet,
    em_estimate,
    fuse,
    gauss_fusion,
    improved_em_estimate,
    mean_fusion,
    soft_assign,
    two_step_estimate,
    weighted_gaussian_fit,
)
from .knowledge import (
    AttrSplit,
    KnowledgeBase,
    inject_noise,
    load_knowledge,
    save_knowledge,
    split_attributes,
)
from .neural import Mlp, Optimizer, ScaleParam, cosine_ce_loss, grad_check, mse_loss
from .numeric import (
    DiagGaussian,
    cosine_similarity,
    gaussian_log_density,
    gaussian_product,
    gaussian_sample,
    kl_divergence,
    make_rng,
    spawn_rngs,
)
from .patnet import PartAttributeTransferNet
from .pipeline import FewShotPipeline
from .protocomnet import AttrPriors, PrototypeCompletionNet, meta_finetune

__version__ = "0.1.0"

__all__ = [
    "AttrPriors",
    "AttrSplit",
    "DiagGaussian",
    "EmbeddingStore",
    "Episode",
    "EvalReport",
    "FewShotPipeline",
    "FusionConfig",
    "KnowledgeBase",
    "Mlp",
    "Optimizer",
    "PartAttributeTransferNet",
    "PrototypeCompletionNet",
    "PrototypeSet",
    "ScaleParam",
    "SyntheticSpec",
    "attribute_distribution",
    "class_prototype",
    "classify",
    "cosine_ce_loss",
    "cosine_similarity",
    "em_estimate",
    "evaluate",
    "fuse",
    "gauss_fusion",
    "gaussian_log_density",
    "gaussian_product",
    "gaussian_sample",
    "generate_synthetic",
    "grad_check",
    "improved_em_estimate",
    "inject_noise",
    "kl_divergence",
    "load_embeddings",
    "load_knowledge",
    "make_rng",
    "mean_fusion",
    "meta_finetune",
    "mse_loss",
    "prototype_fidelity",
    "sample_episode",
    "save_embeddings",
    "save_knowledge",
    "soft_assign",
    "spawn_rngs",
    "split_attributes",
    "two_step_estimate",
    "weighted_gaussian_fit",
]
