"""End-to-end estimator: priors -> transfer -> completion -> fusion.

``FewShotPipeline.fit`` runs the full training stack on a store and
knowledge base: measure seen-attribute distributions, train the transfer
network, infer priors for every attribute, train the completion network on
K-shot completion tasks, and optionally fine-tune completion plus the
softmax scale episodically.  A fitted (or assembled-from-checkpoints)
pipeline turns any episode into the mean-based / completed / fused
prototype triple and classifies queries with the scaled-cosine rule.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone

from .data import EmbeddingStore, class_prototype, seen_attribute_distributions
from .evaluation import predict_labels
from .fusion import FusionConfig, PrototypeSet, fuse
from .knowledge import KnowledgeBase, split_attributes
from .neural import ScaleParam
from .patnet import PartAttributeTransferNet
from .protocomnet import AttrPriors, PrototypeCompletionNet, meta_finetune


class FewShotPipeline(BaseEstimator):
    """Composable front door over the full prototype-fusion stack.

    ``patnet`` and ``protocom`` are template estimators (cloned before
    fitting, sklearn-style); ``fusion`` picks the meta-test fusion
    strategy and is also used inside episodic fine-tuning.
    """

    def __init__(
        self,
        patnet: PartAttributeTransferNet | None = None,
        protocom: PrototypeCompletionNet | None = None,
        fusion: FusionConfig | None = None,
        gamma_init: float = 10.0,
        finetune_episodes: int = 0,
        finetune_n_way: int = 5,
        finetune_k_shot: int = 1,
        finetune_m_query: int = 15,
        finetune_lr: float = 1e-3,
        finetune_momentum: float = 0.9,
        finetune_weight_decay: float = 5e-4,
        seed: int = 0,
    ):
        self.patnet = patnet
        self.protocom = protocom
        self.fusion = fusion
        self.gamma_init = gamma_init
        self.finetune_episodes = finetune_episodes
        self.finetune_n_way = finetune_n_way
        self.finetune_k_shot = finetune_k_shot
        self.finetune_m_query = finetune_m_query
        self.finetune_lr = finetune_lr
        self.finetune_momentum = finetune_momentum
        self.finetune_weight_decay = finetune_weight_decay
        self.seed = seed

    @property
    def fusion_config(self) -> FusionConfig:
        return self.fusion if self.fusion is not None else FusionConfig()

    # -- training ---------------------------------------------------------------

    def _rngs(self, n: int):
        children = np.random.SeedSequence(int(self.seed)).spawn(n)
        return [np.random.Generator(np.random.Philox(c)) for c in children]

    def build_priors(
        self, store: EmbeddingStore, kb: KnowledgeBase, patnet: PartAttributeTransferNet
    ) -> AttrPriors:
        split = split_attributes(kb)
        seen = seen_attribute_distributions(store, kb, split.seen)
        inferred = patnet.infer_distributions(kb)
        return AttrPriors(seen=seen, inferred=inferred).validate(kb, split.seen)

    def fit(self, store: EmbeddingStore, kb: KnowledgeBase):
        split = split_attributes(kb)
        seen = seen_attribute_distributions(store, kb, split.seen)
        protocom_rng, finetune_rng = self._rngs(2)

        self.patnet_ = clone(self.patnet) if self.patnet is not None else PartAttributeTransferNet()
        self.patnet_.fit(kb, seen)
        self.priors_ = AttrPriors(
            seen=seen, inferred=self.patnet_.infer_distributions(kb)
        ).validate(kb, split.seen)

        self.protocom_ = (
            clone(self.protocom) if self.protocom is not None else PrototypeCompletionNet()
        )
        self.protocom_.build(store.dim, kb.embedding_dim)
        self.protocom_.fit(store, kb, self.priors_, rng=protocom_rng)

        self.gamma_ = ScaleParam(self.gamma_init)
        if self.finetune_episodes > 0:
            self.finetune_report_ = meta_finetune(
                self.protocom_,
                self.gamma_,
                store,
                kb,
                self.priors_,
                self.fusion_config,
                n_way=self.finetune_n_way,
                k_shot=self.finetune_k_shot,
                m_query=self.finetune_m_query,
                episodes=self.finetune_episodes,
                lr=self.finetune_lr,
                momentum=self.finetune_momentum,
                weight_decay=self.finetune_weight_decay,
                rng=finetune_rng,
            )
        self.kb_ = kb
        return self

    def assemble(
        self,
        store: EmbeddingStore,
        kb: KnowledgeBase,
        patnet: PartAttributeTransferNet,
        protocom: PrototypeCompletionNet,
        gamma: float,
    ):
        """Wire pre-trained components (e.g. from checkpoints) into a ready
        pipeline; priors are rebuilt deterministically from the store."""
        self.patnet_ = patnet
        self.protocom_ = protocom
        self.priors_ = self.build_priors(store, kb, patnet)
        self.gamma_ = ScaleParam(float(gamma))
        self.kb_ = kb
        return self

    def _require_fitted(self):
        if not hasattr(self, "protocom_"):
            raise RuntimeError("pipeline not fitted; call fit() or assemble() first")

    def with_fusion(self, fusion: FusionConfig) -> "FewShotPipeline":
        """Same fitted components under a different fusion strategy."""
        self._require_fitted()
        other = FewShotPipeline(fusion=fusion, gamma_init=self.gamma_init, seed=self.seed)
        other.patnet_ = self.patnet_
        other.protocom_ = self.protocom_
        other.priors_ = self.priors_
        other.gamma_ = self.gamma_
        other.kb_ = self.kb_
        return other

    # -- episode inference --------------------------------------------------------

    def prototype_set(self, episode, kb: KnowledgeBase | None = None) -> PrototypeSet:
        """Mean-based, completed and fused prototypes for one episode.

        Passing ``kb`` overrides the fitted knowledge base (used to study
        corrupted class-attribute associations); priors stay fixed.
        """
        self._require_fitted()
        kb = kb if kb is not None else self.kb_
        p = np.stack(
            [class_prototype(episode.support_of(k)) for k in range(episode.n_way)]
        )
        p_hat = np.stack(
            [
                self.protocom_.complete(p[k], cid, kb, self.priors_, mode="infer")
                for k, cid in enumerate(episode.classes)
            ]
        )
        return fuse(episode, p, p_hat, self.fusion_config)

    def predict(self, episode, kb: KnowledgeBase | None = None) -> np.ndarray:
        """Predicted class indices for the episode's queries."""
        proto_set = self.prototype_set(episode, kb=kb)
        return predict_labels(episode.query_features, proto_set.fused)
