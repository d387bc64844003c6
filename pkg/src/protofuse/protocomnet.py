"""Prototype completion: encoder-aggregator-decoder over attribute priors.

A few-shot prototype built from one or two support samples usually misses
part of the class's feature mass.  This network rebuilds it: the incomplete
prototype and the feature vectors of the class's parts/attributes are
encoded into a shared latent space, combined by an attention-weighted sum
(attributes not associated with the class contribute exactly zero), and
decoded back into feature space as the completed prototype.

Training mimics the few-shot setting on base classes: average K sampled
features of one base class into an incomplete prototype, complete it, and
regress onto the class's full-data prototype with MSE.  A later episodic
fine-tuning stage trains the same parameters (plus the softmax scale)
through the full episode pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .data import EmbeddingStore, base_class_prototypes, class_prototype, sample_episode
from .fusion import FusionConfig, fusion_plan
from .knowledge import KnowledgeBase
from .neural import (
    Mlp,
    Optimizer,
    ScaleParam,
    TrainingReport,
    cosine_ce_loss,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
    sigmoid,
)
from .numeric import DiagGaussian, NumericalError, gaussian_sample

CHECKPOINT_TAG = "protocomnet"

# the trainable softmax scale must stay positive
_MIN_SCALE = 1e-3


@dataclass(frozen=True)
class AttrPriors:
    """Feature-distribution priors per attribute.

    ``seen`` holds the distributions measured from base-class data (exactly
    the seen attributes); ``inferred`` holds the transferred distributions
    for every attribute.
    """

    seen: dict[str, DiagGaussian]
    inferred: dict[str, DiagGaussian]

    def validate(self, kb: KnowledgeBase, seen_attrs: tuple[str, ...]) -> "AttrPriors":
        if set(self.seen) != set(seen_attrs):
            raise ValueError("seen priors must cover exactly the seen attributes")
        if set(self.inferred) != set(kb.attributes):
            raise ValueError("inferred priors must cover every attribute")
        return self


def sample_attribute_feature(
    priors: AttrPriors, attr: str, rho: float, rng: np.random.Generator
) -> np.ndarray:
    """Training-time draw for one attribute.

    Seen attributes use their measured distribution with probability
    ``rho`` and the inferred one otherwise; unseen attributes always use
    the inferred distribution.
    """
    if attr in priors.seen and rng.random() < rho:
        return gaussian_sample(priors.seen[attr], rng)
    if attr not in priors.inferred:
        raise ValueError(f"no prior for associated attribute {attr!r}")
    return gaussian_sample(priors.inferred[attr], rng)


def attribute_feature_mean(priors: AttrPriors, attr: str) -> np.ndarray:
    """Inference-time value: the seen mean when measured, else the inferred
    mean."""
    if attr in priors.seen:
        return priors.seen[attr].mean
    if attr not in priors.inferred:
        raise ValueError(f"no prior for associated attribute {attr!r}")
    return priors.inferred[attr].mean


class PrototypeCompletionNet(BaseEstimator):
    """Encoder-aggregator-decoder completion network.

    * encoder: one 256-unit ReLU layer shared by attribute features and the
      incomplete prototype;
    * aggregator: two layers (300 hidden) scoring ``prototype || class
      semantics || attribute semantics``; a sigmoid keeps each attention
      weight in (0, 1), and the class-attribute mask zeroes the rest;
    * decoder: two layers (512 hidden) back to feature space.
    """

    def __init__(
        self,
        encoder_units: int = 256,
        aggregator_hidden: int = 300,
        decoder_hidden: int = 512,
        rho: float = 0.5,
        episodes: int = 3000,
        k_shot: int = 1,
        lr: float = 0.01,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
        lr_decay: float = 0.1,
        lr_milestones: tuple[float, ...] = (0.5, 0.75),
        seed: int = 0,
    ):
        self.encoder_units = encoder_units
        self.aggregator_hidden = aggregator_hidden
        self.decoder_hidden = decoder_hidden
        self.rho = rho
        self.episodes = episodes
        self.k_shot = k_shot
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.lr_milestones = lr_milestones
        self.seed = seed

    # -- construction / parameter plumbing ------------------------------------

    def build(self, feature_dim: int, semantic_dim: int) -> "PrototypeCompletionNet":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))
        self.encoder_ = Mlp([feature_dim, self.encoder_units], ["relu"], rng=rng)
        self.aggregator_ = Mlp(
            [feature_dim + 2 * semantic_dim, self.aggregator_hidden, 1], rng=rng
        )
        self.decoder_ = Mlp(
            [self.encoder_units, self.decoder_hidden, feature_dim], rng=rng
        )
        self.feature_dim_ = feature_dim
        self.semantic_dim_ = semantic_dim
        return self

    def _require_built(self):
        if not hasattr(self, "encoder_"):
            raise RuntimeError("network not built; call build() or fit() first")

    @property
    def networks(self) -> dict[str, Mlp]:
        self._require_built()
        return {
            "encoder": self.encoder_,
            "aggregator": self.aggregator_,
            "decoder": self.decoder_,
        }

    def params_flat(self) -> np.ndarray:
        return np.concatenate([n.params_flat() for n in self.networks.values()])

    def grads_flat(self) -> np.ndarray:
        return np.concatenate([n.grads_flat() for n in self.networks.values()])

    def set_params_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for net in self.networks.values():
            net.set_params_flat(flat[pos : pos + net.n_params])
            pos += net.n_params

    def zero_grads(self) -> None:
        for net in self.networks.values():
            net.zero_grads()

    # -- the completion graph --------------------------------------------------

    def _attribute_inputs(self, p_k, class_id, kb, priors, mode, rng):
        if class_id not in kb.sem_class:
            raise ValueError(f"class {class_id!r} has no semantic embedding")
        attrs = kb.attributes_of(class_id)
        if mode == "train":
            if rng is None:
                raise ValueError("train-mode completion needs a generator")
            z_rows = [sample_attribute_feature(priors, a, self.rho, rng) for a in attrs]
        elif mode == "infer":
            z_rows = [attribute_feature_mean(priors, a) for a in attrs]
        else:
            raise ValueError(f"unknown completion mode {mode!r}")
        h_k = kb.sem_class[class_id]
        agg_in = np.stack(
            [np.concatenate([p_k, h_k, kb.sem_attr[a]]) for a in attrs]
        ) if attrs else np.empty((0, self.aggregator_.dims[0]))
        z = np.stack(z_rows) if attrs else np.empty((0, self.feature_dim_))
        return z, agg_in

    def complete_cached(self, p_k, class_id, kb, priors, mode="infer", rng=None):
        """Completed prototype plus the cache needed for a backward pass."""
        self._require_built()
        p_k = np.asarray(p_k, dtype=np.float64)
        z, agg_in = self._attribute_inputs(p_k, class_id, kb, priors, mode, rng)
        enc_p, enc_p_cache = self.encoder_.forward_cached(p_k)
        if z.shape[0] > 0:
            enc_z, enc_z_cache = self.encoder_.forward_cached(z)
            raw, agg_cache = self.aggregator_.forward_cached(agg_in)
            alpha = sigmoid(raw[:, 0])
            g = alpha @ enc_z + enc_p
        else:
            enc_z = enc_z_cache = agg_cache = alpha = None
            g = enc_p
        p_hat, dec_cache = self.decoder_.forward_cached(g)
        cache = (enc_p_cache, enc_z, enc_z_cache, agg_cache, alpha, dec_cache)
        return p_hat, cache

    def complete(self, p_k, class_id, kb, priors, mode="infer", rng=None) -> np.ndarray:
        """Complete one prototype; ``infer`` mode is deterministic."""
        out, _ = self.complete_cached(p_k, class_id, kb, priors, mode=mode, rng=rng)
        return out

    def backward_completion(self, cache, d_p_hat) -> None:
        """Accumulate parameter gradients of a completion output."""
        enc_p_cache, enc_z, enc_z_cache, agg_cache, alpha, dec_cache = cache
        dg = self.decoder_.backward_cached(dec_cache, d_p_hat)
        if enc_z is not None:
            d_enc_z = np.outer(alpha, dg)
            d_alpha = enc_z @ dg
            d_raw = (d_alpha * alpha * (1.0 - alpha))[:, None]
            self.aggregator_.backward_cached(agg_cache, d_raw)
            self.encoder_.backward_cached(enc_z_cache, d_enc_z)
        self.encoder_.backward_cached(enc_p_cache, dg)

    def completion_loss_and_grads(self, p_k, class_id, kb, priors, target):
        """MSE of the infer-mode completion against ``target``; gradients
        land in the three networks."""
        self.zero_grads()
        p_hat, cache = self.complete_cached(p_k, class_id, kb, priors, mode="infer")
        loss, d_p_hat = mse_loss(p_hat, target)
        self.backward_completion(cache, d_p_hat)
        return loss

    # -- stage one: completion tasks on base classes ---------------------------

    def fit(
        self,
        store: EmbeddingStore,
        kb: KnowledgeBase,
        priors: AttrPriors,
        rng: np.random.Generator,
    ):
        """Train on K-shot completion tasks against full-data prototypes."""
        if not hasattr(self, "encoder_"):
            self.build(store.dim, kb.embedding_dim)
        reals = base_class_prototypes(store)
        base_classes = sorted(reals)
        for c in base_classes:
            n = store.indices_of(c, "base").size
            if n < self.k_shot:
                raise ValueError(
                    f"class {c!r} has {n} base samples, fewer than k_shot={self.k_shot}"
                )
        opt = Optimizer(
            "sgd_momentum",
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
        )
        milestones = {int(self.episodes * m) for m in self.lr_milestones}
        losses = []
        for episode in range(self.episodes):
            if episode in milestones and episode > 0:
                opt.lr *= self.lr_decay
            cid = base_classes[int(rng.integers(len(base_classes)))]
            feats = store.features_of(cid, "base")
            picked = rng.choice(feats.shape[0], size=self.k_shot, replace=False)
            p_k = class_prototype(feats[picked])
            self.zero_grads()
            p_hat, cache = self.complete_cached(
                p_k, cid, kb, priors, mode="train", rng=rng
            )
            if not np.all(np.isfinite(p_hat)):
                raise NumericalError(
                    f"completion diverged at episode {episode}; lower the learning rate"
                )
            loss, d_p_hat = mse_loss(p_hat, reals[cid])
            if not np.isfinite(loss):
                raise NumericalError(
                    f"training loss overflowed at episode {episode}; lower the learning rate"
                )
            self.backward_completion(cache, d_p_hat)
            self.set_params_flat(opt.step(self.params_flat(), self.grads_flat()))
            losses.append(loss)
        self.report_ = TrainingReport(losses=tuple(losses))
        return self

    # -- persistence -------------------------------------------------------------

    def save(self, path, gamma: float | None = None) -> None:
        extras = {} if gamma is None else {"gamma": float(gamma)}
        save_checkpoint(path, CHECKPOINT_TAG, self.networks, extras=extras)

    @classmethod
    def load(cls, path) -> tuple["PrototypeCompletionNet", float | None]:
        """Returns the network and the stored scale (None when absent)."""
        tag, networks, extras = load_checkpoint(path)
        if tag != CHECKPOINT_TAG:
            raise ValueError(f"checkpoint {path} holds {tag!r}, expected {CHECKPOINT_TAG!r}")
        encoder = networks["encoder"]
        aggregator = networks["aggregator"]
        decoder = networks["decoder"]
        feature_dim = encoder.dims[0]
        net = cls(
            encoder_units=encoder.dims[1],
            aggregator_hidden=aggregator.dims[1],
            decoder_hidden=decoder.dims[1],
        )
        net.encoder_ = encoder
        net.aggregator_ = aggregator
        net.decoder_ = decoder
        net.feature_dim_ = feature_dim
        net.semantic_dim_ = (aggregator.dims[0] - feature_dim) // 2
        return net, extras.get("gamma")


# ---------------------------------------------------------------------------
# stage two: episodic fine-tuning through the fused classifier
# ---------------------------------------------------------------------------

def _fused_accuracy(episode, fused: np.ndarray) -> float:
    """Cosine argmax accuracy; ties break to the lowest class index."""
    logits = episode.query_features @ fused.T
    norms = np.linalg.norm(episode.query_features, axis=1)[:, None] * np.linalg.norm(
        fused, axis=1
    )
    preds = np.argmax(logits / norms, axis=1)
    return float(np.mean(preds == episode.query_labels))


def episodic_loss_and_grads(
    net: PrototypeCompletionNet,
    gamma: ScaleParam,
    episode,
    kb: KnowledgeBase,
    priors: AttrPriors,
    fused_weights: np.ndarray,
    fused_offsets: np.ndarray,
):
    """Episode classification loss with gradients for net + scale.

    Completion runs in infer mode and the fused prototype is the affine
    view ``w * p_hat + o`` (see ``fusion_plan``), so the whole map from
    parameters to loss is deterministic and finite-difference checkable.
    Returns ``(loss, accuracy, dgamma)``; network gradients accumulate in
    place.
    """
    net.zero_grads()
    p_hat_rows = []
    caches = []
    for k, cid in enumerate(episode.classes):
        p_k = class_prototype(episode.support_of(k))
        p_hat_k, cache = net.complete_cached(p_k, cid, kb, priors, mode="infer")
        p_hat_rows.append(p_hat_k)
        caches.append(cache)
    p_hat = np.stack(p_hat_rows)
    fused = fused_weights * p_hat + fused_offsets
    loss, d_fused, d_gamma = cosine_ce_loss(
        episode.query_features, fused, episode.query_labels, gamma.value
    )
    d_p_hat = fused_weights * d_fused
    for k in range(len(episode.classes)):
        net.backward_completion(caches[k], d_p_hat[k])
    return loss, _fused_accuracy(episode, fused), d_gamma


def meta_finetune(
    net: PrototypeCompletionNet,
    gamma: ScaleParam,
    store: EmbeddingStore,
    kb: KnowledgeBase,
    priors: AttrPriors,
    fusion_cfg: FusionConfig,
    n_way: int = 5,
    k_shot: int = 1,
    m_query: int = 15,
    episodes: int = 200,
    lr: float = 1e-3,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    rng: np.random.Generator | None = None,
) -> TrainingReport:
    """Episodic fine-tuning of the completion network and the scale.

    Per episode: sample a base-split task, build support-mean prototypes,
    complete them (prior sampling active), fuse per the configured
    strategy, and take one SGD step on the scaled-cosine cross-entropy of
    the query set.  The chain statistics of the fusion are re-estimated
    every episode and held fixed within the step, which keeps the gradient
    exact for the loss actually evaluated.
    """
    if m_query < 1:
        raise ValueError("episodic fine-tuning needs at least one query per class")
    if rng is None:
        raise ValueError("meta_finetune needs a generator")
    opt = Optimizer(
        "sgd_momentum", lr=lr, momentum=momentum, weight_decay=weight_decay
    )
    losses, accs = [], []
    for _ in range(episodes):
        ep = sample_episode(store, n_way, k_shot, m_query, "base", rng)
        p = np.stack([class_prototype(ep.support_of(k)) for k in range(n_way)])
        net.zero_grads()
        p_hat_rows, caches = [], []
        for k, cid in enumerate(ep.classes):
            p_hat_k, cache = net.complete_cached(
                p[k], cid, kb, priors, mode="train", rng=rng
            )
            p_hat_rows.append(p_hat_k)
            caches.append(cache)
        p_hat = np.stack(p_hat_rows)
        if not np.all(np.isfinite(p_hat)):
            raise NumericalError("completion diverged during fine-tuning; lower the learning rate")
        fused, weights, _ = fusion_plan(ep, p, p_hat, fusion_cfg)
        loss, d_fused, d_gamma = cosine_ce_loss(
            ep.query_features, fused, ep.query_labels, gamma.value
        )
        if not np.isfinite(loss):
            raise NumericalError("fine-tuning loss overflowed; lower the learning rate")
        d_p_hat = weights * d_fused
        for k in range(n_way):
            net.backward_completion(caches[k], d_p_hat[k])
        flat = np.concatenate([net.params_flat(), [gamma.value]])
        grads = np.concatenate([net.grads_flat(), [d_gamma]])
        new_flat = opt.step(flat, grads)
        net.set_params_flat(new_flat[:-1])
        gamma.value = max(float(new_flat[-1]), _MIN_SCALE)
        losses.append(loss)
        accs.append(_fused_accuracy(ep, fused))
    return TrainingReport(losses=tuple(losses), metrics={"accuracy": tuple(accs)})
