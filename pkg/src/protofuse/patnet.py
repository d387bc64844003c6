"""Part/attribute transfer: semantic embedding -> feature distribution.

Attributes that occur in base classes get their feature distribution
measured directly from data; the ones that occur only in novel classes do
not.  This network closes the gap: trained on the seen attributes (inputs:
semantic embeddings, targets: measured diagonal Gaussians, loss: KL of the
prediction against the target), it then predicts a distribution for every
attribute, seen or unseen, from semantics alone.

The variance head predicts log-variance and exponentiates, so predicted
stds are positive by construction.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .knowledge import KnowledgeBase
from .neural import Mlp, Optimizer, TrainingReport, load_checkpoint, save_checkpoint
from .numeric import DiagGaussian

CHECKPOINT_TAG = "patnet"


class PartAttributeTransferNet(BaseEstimator):
    """Maps a semantic embedding to a predicted diagonal Gaussian.

    Architecture: a single 512-unit ReLU embedding layer feeding two
    two-layer heads (512 hidden) that emit the mean and the log-variance.
    Trained full-batch with Adam on the mean KL(predicted || target) over
    the seen attributes; full batch keeps the loss curve deterministic.
    """

    def __init__(
        self,
        embed_units: int = 512,
        head_hidden: int = 512,
        epochs: int = 2000,
        lr: float = 1e-3,
        weight_decay: float = 5e-4,
        lr_decay: float = 0.1,
        lr_decay_at: float = 0.5,
        seed: int = 0,
    ):
        self.embed_units = embed_units
        self.head_hidden = head_hidden
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.lr_decay_at = lr_decay_at
        self.seed = seed

    # -- construction ---------------------------------------------------------

    def build(self, semantic_dim: int, feature_dim: int) -> "PartAttributeTransferNet":
        """Initialize the three networks for the given dimensions."""
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))
        self.embed_ = Mlp([semantic_dim, self.embed_units], ["relu"], rng=rng)
        self.mean_head_ = Mlp(
            [self.embed_units, self.head_hidden, feature_dim], rng=rng
        )
        self.logvar_head_ = Mlp(
            [self.embed_units, self.head_hidden, feature_dim], rng=rng
        )
        self.feature_dim_ = feature_dim
        return self

    def _require_built(self):
        if not hasattr(self, "embed_"):
            raise RuntimeError("network not built; call build() or fit() first")

    @property
    def networks(self) -> dict[str, Mlp]:
        self._require_built()
        return {
            "embed": self.embed_,
            "mean_head": self.mean_head_,
            "logvar_head": self.logvar_head_,
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

    # -- forward ----------------------------------------------------------------

    def _forward_raw(self, h: np.ndarray):
        """Batch forward; returns (means, logvars) without flooring."""
        e = self.embed_.forward(h)
        return self.mean_head_.forward(e), self.logvar_head_.forward(e)

    def forward_dist(self, h) -> DiagGaussian:
        """Predicted distribution for one semantic embedding."""
        self._require_built()
        h = np.asarray(h, dtype=np.float64)
        mean, logvar = self._forward_raw(h[None, :])
        return DiagGaussian(mean=mean[0], std=np.exp(0.5 * logvar[0]))

    # -- training -----------------------------------------------------------------

    def kl_loss_and_grads(self, h_batch, target_means, target_vars):
        """Mean KL(predicted || target) over the batch plus its gradients,
        accumulated into the three networks."""
        self.zero_grads()
        means, logvars = self._forward_raw(h_batch)
        var = np.exp(logvars)
        n = h_batch.shape[0]
        kl = (
            0.5 * np.log(target_vars)
            - 0.5 * logvars
            + (var + (means - target_means) ** 2) / (2.0 * target_vars)
            - 0.5
        )
        loss = float(kl.sum() / n)
        dmean = (means - target_means) / target_vars / n
        dlogvar = (-0.5 + var / (2.0 * target_vars)) / n
        d_embed = self.mean_head_.backward(dmean)
        d_embed = d_embed + self.logvar_head_.backward(dlogvar)
        self.embed_.backward(d_embed)
        return loss

    def fit(self, kb: KnowledgeBase, seen_dists: dict[str, DiagGaussian]):
        """Train on the seen attributes; stores the loss curve in ``report_``."""
        if not seen_dists:
            raise ValueError("seen attribute set is empty")
        attrs = [a for a in kb.attributes if a in seen_dists]
        missing = set(seen_dists) - set(attrs)
        if missing:
            raise ValueError(f"seen attributes missing from knowledge base: {missing}")
        h_batch = np.stack([kb.sem_attr[a] for a in attrs])
        target_means = np.stack([seen_dists[a].mean for a in attrs])
        target_vars = np.stack([seen_dists[a].var for a in attrs])
        if not hasattr(self, "embed_"):
            self.build(kb.embedding_dim, target_means.shape[1])

        opt = Optimizer("adam", lr=self.lr, weight_decay=self.weight_decay)
        losses = []
        decay_epoch = int(self.epochs * self.lr_decay_at)
        for epoch in range(self.epochs):
            if epoch == decay_epoch and epoch > 0:
                opt.lr *= self.lr_decay
            loss = self.kl_loss_and_grads(h_batch, target_means, target_vars)
            losses.append(loss)
            self.set_params_flat(opt.step(self.params_flat(), self.grads_flat()))
        self.report_ = TrainingReport(losses=tuple(losses))
        return self

    # -- inference -------------------------------------------------------------

    def infer_distributions(self, kb: KnowledgeBase) -> dict[str, DiagGaussian]:
        """Predicted distribution for every attribute in the knowledge base."""
        self._require_built()
        h_batch = np.stack([kb.sem_attr[a] for a in kb.attributes])
        means, logvars = self._forward_raw(h_batch)
        stds = np.exp(0.5 * logvars)
        return {
            a: DiagGaussian(mean=means[i], std=stds[i])
            for i, a in enumerate(kb.attributes)
        }

    # -- persistence -------------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, CHECKPOINT_TAG, self.networks)

    @classmethod
    def load(cls, path) -> "PartAttributeTransferNet":
        tag, networks, _ = load_checkpoint(path)
        if tag != CHECKPOINT_TAG:
            raise ValueError(f"checkpoint {path} holds {tag!r}, expected {CHECKPOINT_TAG!r}")
        embed = networks["embed"]
        mean_head = networks["mean_head"]
        net = cls(embed_units=embed.dims[1], head_hidden=mean_head.dims[1])
        net.embed_ = embed
        net.mean_head_ = mean_head
        net.logvar_head_ = networks["logvar_head"]
        net.feature_dim_ = mean_head.dims[-1]
        return net
