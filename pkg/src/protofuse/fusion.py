"""Prototype fusion: Bayesian product of two prototype distributions.

An episode yields two prototype estimates per class: the support-set mean
and the completed prototype.  Each is modelled as a draw from a diagonal
Gaussian; the fused prototype is the mean of the (normalized) product of
the two Gaussians, which always has smaller per-dimension variance than
either factor.

Four estimators produce the per-class distribution parameters:

* ``mean``        -- assume both estimates share one variance; the fused
                     prototype collapses to the plain average.
* ``two_step``    -- one soft-assignment pass over support + query features
                     (cosine softmax, support rows one-hot), then one
                     weighted mean/std fit.
* ``em``          -- diagonal Gaussian mixture EM with uniform, fixed
                     mixing weights and support responsibilities clamped to
                     their labels; log-likelihood is non-decreasing.
* ``improved_em`` -- the two-step pass iterated, feeding each round's means
                     back in as the classifier prototypes; round one is
                     bit-identical to ``two_step``.

The three data-driven estimators are transductive: they read the query
features, so they are only legal in the transductive setting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Episode
from .numeric import STD_FLOOR, DiagGaussian, gaussian_product

FUSION_METHODS = ("mean", "two_step", "em", "improved_em")
SETTINGS = ("inductive", "transductive")

# improved-EM stops early once no class mean moves farther than this
MEAN_DISPLACEMENT_TOL = 1e-6


@dataclass(frozen=True)
class FusionConfig:
    method: str = "mean"
    setting: str = "inductive"
    lam: float = 10.0  # cosine-softmax sharpness; fixed, not trained
    n_iter: int = 6
    em_sigma_init: float = 35.0
    em_tol: float = 1e-6
    em_max_iter: int = 100

    def __post_init__(self):
        if self.method not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {self.method!r}")
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.setting == "inductive" and self.method != "mean":
            raise ValueError(
                f"method {self.method!r} reads query features and is not "
                "available in the inductive setting"
            )
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if self.em_sigma_init <= 0:
            raise ValueError("em_sigma_init must be positive")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "setting": self.setting,
            "lambda": self.lam,
            "n_iter": self.n_iter,
            "em_sigma_init": self.em_sigma_init,
            "em_tol": self.em_tol,
            "em_max_iter": self.em_max_iter,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FusionConfig":
        known = {
            "method": raw.get("method", "mean"),
            "setting": raw.get("setting", "inductive"),
            "lam": raw.get("lambda", raw.get("lam", 10.0)),
            "n_iter": raw.get("n_iter", 6),
            "em_sigma_init": raw.get("em_sigma_init", 35.0),
            "em_tol": raw.get("em_tol", 1e-6),
            "em_max_iter": raw.get("em_max_iter", 100),
        }
        return cls(**known)


@dataclass(frozen=True)
class ChainEstimate:
    """Per-class distributions from one estimator run (one chain)."""

    dists: tuple[DiagGaussian, ...]
    log_likelihoods: tuple[float, ...] = ()
    n_rounds: int = 1

    @property
    def means(self) -> np.ndarray:
        return np.stack([g.mean for g in self.dists])


@dataclass(frozen=True)
class ClassDistEstimate:
    """Both chains of per-class distributions for one episode."""

    mean_chain: ChainEstimate
    completed_chain: ChainEstimate


@dataclass(frozen=True)
class PrototypeSet:
    """Mean-based, completed and fused prototypes for one episode."""

    classes: tuple[str, ...]
    mean_based: np.ndarray  # (N, d)
    completed: np.ndarray  # (N, d)
    fused: np.ndarray  # (N, d)
    fused_dists: tuple[DiagGaussian, ...] | None = None
    chains: ClassDistEstimate | None = None


# ---------------------------------------------------------------------------
# estimation primitives
# ---------------------------------------------------------------------------

def soft_assign(features, prototypes, support_labels, lam: float) -> np.ndarray:
    """Per-sample class probabilities over lambda-scaled cosine logits.

    ``features`` stacks the support rows first, then the unlabeled rows;
    the first ``len(support_labels)`` rows get exact one-hot probabilities.
    """
    feats = np.asarray(features, dtype=np.float64)
    protos = np.asarray(prototypes, dtype=np.float64)
    if protos.ndim != 2 or protos.shape[0] < 1:
        raise ValueError("prototypes must be a non-empty (N, d) array")
    nf = np.linalg.norm(feats, axis=1)
    npr = np.linalg.norm(protos, axis=1)
    if np.any(nf == 0) or np.any(npr == 0):
        raise ValueError("zero-norm feature or prototype")
    logits = lam * (feats @ protos.T) / np.outer(nf, npr)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    support_labels = np.asarray(support_labels, dtype=np.intp)
    if support_labels.size > feats.shape[0]:
        raise ValueError("more support labels than feature rows")
    for i, y in enumerate(support_labels):
        probs[i] = 0.0
        probs[i, y] = 1.0
    return probs


def weighted_gaussian_fit(features, weights) -> tuple[DiagGaussian, ...]:
    """Weighted mean and weighted population std per class.

    ``weights`` is (n, N) with non-negative entries; each class column must
    carry positive total weight.
    """
    feats = np.asarray(features, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != feats.shape[0]:
        raise ValueError("weights must be (n_samples, n_classes)")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    totals = w.sum(axis=0)
    if np.any(totals <= 0):
        bad = int(np.flatnonzero(totals <= 0)[0])
        raise ValueError(f"class {bad} has zero total weight")
    means = (w.T @ feats) / totals[:, None]
    out = []
    for k in range(w.shape[1]):
        diff = feats - means[k]
        var = (w[:, k][:, None] * diff**2).sum(axis=0) / totals[k]
        out.append(DiagGaussian(mean=means[k], std=np.maximum(np.sqrt(var), STD_FLOOR)))
    return tuple(out)


def _episode_observations(episode: Episode):
    """Support rows first, queries after; with no queries the estimators
    degenerate to per-class support statistics (one-hot weights only)."""
    feats = np.concatenate([episode.support_features, episode.query_features])
    return feats, episode.support_labels


def improved_em_estimate(episode: Episode, p_init, cfg: FusionConfig) -> ChainEstimate:
    """Iterate cosine soft-assignment + weighted fit, re-using each round's
    means as the next round's classifier prototypes."""
    feats, support_labels = _episode_observations(episode)
    protos = np.asarray(p_init, dtype=np.float64)
    dists: tuple[DiagGaussian, ...] = ()
    rounds = 0
    for _ in range(cfg.n_iter):
        probs = soft_assign(feats, protos, support_labels, cfg.lam)
        dists = weighted_gaussian_fit(feats, probs)
        new_means = np.stack([g.mean for g in dists])
        displacement = float(np.abs(new_means - protos).max())
        protos = new_means
        rounds += 1
        if displacement < MEAN_DISPLACEMENT_TOL:
            break
    return ChainEstimate(dists=dists, n_rounds=rounds)


def two_step_estimate(episode: Episode, p_init, lam: float = 10.0) -> ChainEstimate:
    """One soft-assignment pass then one weighted fit: exactly the first
    round of the iterated estimator."""
    cfg = FusionConfig(method="two_step", setting="transductive", lam=lam, n_iter=1)
    return improved_em_estimate(episode, p_init, cfg)


def em_estimate(episode: Episode, p_init, cfg: FusionConfig) -> ChainEstimate:
    """Diagonal-GMM EM with uniform fixed mixing weights.

    Support samples keep one-hot responsibilities (their labels are
    observed), so the tracked objective is the semi-supervised data
    log-likelihood; it is non-decreasing across iterations.  Stds start at
    ``em_sigma_init`` and are floored, which keeps the M step the exact
    constrained maximizer.
    """
    feats, support_labels = _episode_observations(episode)
    n, d = feats.shape
    means = np.asarray(p_init, dtype=np.float64).copy()
    n_classes = means.shape[0]
    stds = np.full((n_classes, d), float(cfg.em_sigma_init))
    n_support = support_labels.size
    log_mix = -np.log(n_classes)

    logliks: list[float] = []
    dists: tuple[DiagGaussian, ...] = ()
    for _ in range(cfg.em_max_iter):
        # E step at current parameters
        z = (feats[:, None, :] - means[None, :, :]) / stds[None, :, :]
        logdens = (
            -0.5 * d * np.log(2 * np.pi)
            - np.log(stds).sum(axis=1)[None, :]
            - 0.5 * (z**2).sum(axis=2)
        )
        shifted = logdens - logdens.max(axis=1, keepdims=True)
        resp = np.exp(shifted)
        resp /= resp.sum(axis=1, keepdims=True)
        resp[:n_support] = 0.0
        resp[np.arange(n_support), support_labels] = 1.0

        # semi-supervised log-likelihood at current parameters
        lse = logdens.max(axis=1) + np.log(
            np.exp(logdens - logdens.max(axis=1, keepdims=True)).sum(axis=1)
        )
        ll_query = float((log_mix + lse)[n_support:].sum())
        ll_support = float(
            (log_mix + logdens[np.arange(n_support), support_labels]).sum()
        )
        logliks.append(ll_support + ll_query)

        # M step
        dists = weighted_gaussian_fit(feats, resp)
        means = np.stack([g.mean for g in dists])
        stds = np.stack([g.std for g in dists])

        if len(logliks) > 1 and abs(logliks[-1] - logliks[-2]) < cfg.em_tol:
            break
    return ChainEstimate(
        dists=dists, log_likelihoods=tuple(logliks), n_rounds=len(logliks)
    )


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def mean_fusion(p, p_hat) -> np.ndarray:
    """Plain average of the two prototypes."""
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape:
        raise ValueError("prototype dims differ")
    return 0.5 * (p + p_hat)


def gauss_fusion(mean_chain: DiagGaussian, completed_chain: DiagGaussian):
    """Product of the two chains; returns (fused prototype, posterior)."""
    post = gaussian_product(mean_chain, completed_chain)
    return post.mean.copy(), post


def _run_estimator(episode: Episode, p_init, cfg: FusionConfig) -> ChainEstimate:
    if cfg.method == "two_step":
        return two_step_estimate(episode, p_init, lam=cfg.lam)
    if cfg.method == "improved_em":
        return improved_em_estimate(episode, p_init, cfg)
    if cfg.method == "em":
        return em_estimate(episode, p_init, cfg)
    raise ValueError(f"no estimator for method {cfg.method!r}")


def fuse(episode: Episode, p, p_hat, cfg: FusionConfig) -> PrototypeSet:
    """Fuse mean-based and completed prototypes for one episode.

    ``mean`` averages the two estimates.  The transductive methods run the
    configured estimator twice -- once initialized from each prototype set,
    independently -- and take the per-class product of the two chains.
    """
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape:
        raise ValueError("prototype matrices must share a shape")
    if cfg.method == "mean":
        fused = 0.5 * (p + p_hat)
        return PrototypeSet(
            classes=episode.classes, mean_based=p, completed=p_hat, fused=fused
        )
    if cfg.setting != "transductive":
        raise ValueError(f"method {cfg.method!r} requires the transductive setting")
    if episode.query_features.shape[0] == 0:
        raise ValueError("transductive fusion needs a non-empty query set")
    chain_mean = _run_estimator(episode, p, cfg)
    chain_completed = _run_estimator(episode, p_hat, cfg)
    fused_rows = []
    fused_dists = []
    for gm, gc in zip(chain_mean.dists, chain_completed.dists):
        vec, post = gauss_fusion(gm, gc)
        fused_rows.append(vec)
        fused_dists.append(post)
    return PrototypeSet(
        classes=episode.classes,
        mean_based=p,
        completed=p_hat,
        fused=np.stack(fused_rows),
        fused_dists=tuple(fused_dists),
        chains=ClassDistEstimate(mean_chain=chain_mean, completed_chain=chain_completed),
    )


def fusion_plan(episode: Episode, p, p_hat, cfg: FusionConfig):
    """Affine view of the fusion for gradient steps.

    Returns ``(fused, weights, offsets)`` with ``fused == weights * p_hat
    + offsets`` exactly.  The chain statistics behind ``weights`` and
    ``offsets`` are treated as per-episode constants, so a loss built on
    this view has exact, finite-difference-checkable gradients with respect
    to the completed prototypes.
    """
    proto_set = fuse(episode, p, p_hat, cfg)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if cfg.method == "mean":
        weights = np.full_like(p_hat, 0.5)
    else:
        chains = proto_set.chains
        weights = np.stack(
            [
                gm.var / (gm.var + gc.var)
                for gm, gc in zip(chains.mean_chain.dists, chains.completed_chain.dists)
            ]
        )
    offsets = proto_set.fused - weights * p_hat
    return proto_set.fused, weights, offsets
