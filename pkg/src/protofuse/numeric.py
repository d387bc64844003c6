"""Vector arithmetic and diagonal-Gaussian algebra.

Everything downstream (attribute priors, prototype distributions, fusion
posteriors) is expressed through the small set of primitives in this module:
cosine similarity, the closed-form product of two diagonal Gaussians, the
closed-form KL divergence, log densities and seeded sampling.

All distributions are Gaussians with diagonal covariance, stored as a mean
vector plus a per-dimension standard-deviation vector.  Standard deviations
are floored at ``STD_FLOOR`` on construction so that products and densities
never divide by zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Floor applied to every standard-deviation vector on construction.
STD_FLOOR = 1e-6


class NumericalError(RuntimeError):
    """Raised when a computation produces non-finite values."""


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Validate and convert ``x`` to a finite 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size < 1:
        raise ValueError(f"{name} must have dimension >= 1")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_same_dim(a: np.ndarray, b: np.ndarray, what: str = "vectors") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"dimension mismatch between {what}: {a.shape[-1]} vs {b.shape[-1]}"
        )


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Scale-invariant: ``cosine_similarity(c*a, b) == cosine_similarity(a, b)``
    for any ``c > 0``.  Zero-norm inputs are rejected.
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    check_same_dim(a, b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _readonly(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance: mean vector + per-dim std vector.

    ``std`` is floored at ``STD_FLOOR`` elementwise; both arrays are stored
    read-only, so instances are safe to share.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        std = as_vector(self.std, "std")
        check_same_dim(mean, std, "mean and std")
        if np.any(std < 0):
            raise ValueError("std entries must be non-negative")
        std = np.maximum(std, STD_FLOOR)
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "std", _readonly(std))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def var(self) -> np.ndarray:
        return self.std**2

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiagGaussian):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(
            self.std, other.std
        )


def gaussian_product(g1: DiagGaussian, g2: DiagGaussian) -> DiagGaussian:
    """Normalized product of two diagonal Gaussians (Bayesian posterior).

    With variances ``v1 = g1.std**2`` and ``v2 = g2.std**2``::

        mean' = (v1 * g2.mean + v2 * g1.mean) / (v1 + v2)
        var'  = v1 * v2 / (v1 + v2)

    Commutative in its arguments.  The posterior variance is elementwise
    no larger than either input variance.
    """
    check_same_dim(g1.mean, g2.mean, "gaussian means")
    v1 = g1.var
    v2 = g2.var
    denom = v1 + v2
    mean = (v1 * g2.mean + v2 * g1.mean) / denom
    var = v1 * v2 / denom
    return DiagGaussian(mean=mean, std=np.sqrt(var))


def kl_divergence(q: DiagGaussian, p: DiagGaussian) -> float:
    """KL(q || p) between diagonal Gaussians, in nats.

    Closed form, summed over dimensions::

        KL = sum_i  ln(p.std_i / q.std_i)
                  + (q.std_i^2 + (q.mean_i - p.mean_i)^2) / (2 p.std_i^2)
                  - 1/2

    Non-negative; zero iff the distributions coincide.
    """
    check_same_dim(q.mean, p.mean, "gaussian means")
    lq = np.log(q.std)
    lp = np.log(p.std)
    out = float(
        np.sum(lp - lq + (q.var + (q.mean - p.mean) ** 2) / (2.0 * p.var) - 0.5)
    )
    if not np.isfinite(out):
        raise NumericalError("KL divergence is non-finite")
    # Guard against tiny negative round-off when q ~= p.
    return max(out, 0.0)


def gaussian_log_density(x, g: DiagGaussian) -> float:
    """Log of the diagonal-Gaussian density of ``g`` evaluated at ``x``."""
    x = as_vector(x, "x")
    check_same_dim(x, g.mean, "point and gaussian")
    z = (x - g.mean) / g.std
    out = float(
        -0.5 * g.dim * np.log(2.0 * np.pi) - np.sum(np.log(g.std)) - 0.5 * np.sum(z**2)
    )
    if not np.isfinite(out):
        raise NumericalError("gaussian log density is non-finite")
    return out


def gaussian_sample(g: DiagGaussian, rng: np.random.Generator) -> np.ndarray:
    """One draw from ``g``; deterministic given the generator state."""
    return g.mean + g.std * rng.standard_normal(g.dim)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded counter-based generator (Philox): same seed, same stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent child generators derived from one seed.

    Children are order-independent: child ``i`` yields the same stream no
    matter how many siblings exist or in which order they are consumed,
    which keeps parallel episode evaluation reproducible.
    """
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]
