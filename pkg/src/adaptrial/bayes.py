"""Conjugate Bayesian linear regression for the allocation samplers.

Each arm carries two independent multivariate-normal posteriors over
regression coefficients, one for the efficacy endpoint and one for safety.
With a known noise variance ``sigma0_sq`` the posterior stays Gaussian, so
an observation is absorbed with a rank-one precision update and a single
Cholesky solve.  Matrix inverses are never formed explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .core import (
    Covariates,
    ConfigurationError,
    NumericalError,
    ParticipantRecord,
    ValidationError,
)

__all__ = [
    "GaussianPosterior",
    "PosteriorBank",
    "init_prior",
    "update",
    "update_batch",
    "sample",
]

_SYMMETRY_TOL = 1e-10


def _as_vector(x) -> np.ndarray:
    if isinstance(x, Covariates):
        return x.augmented
    return np.asarray(x, dtype=float).reshape(-1)


@dataclass(frozen=True)
class GaussianPosterior:
    """Mean vector and precision matrix of one coefficient posterior.

    The precision must be symmetric positive definite; its lower Cholesky
    factor is computed once at construction and reused for solves and
    sampling.
    """

    mean: np.ndarray
    precision: np.ndarray
    chol_lower: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        prec = np.asarray(self.precision, dtype=float)
        if prec.shape != (mean.size, mean.size):
            raise ValidationError(
                f"precision shape {prec.shape} does not match mean of dimension {mean.size}"
            )
        if not np.allclose(prec, prec.T, atol=_SYMMETRY_TOL, rtol=0.0):
            raise NumericalError("precision matrix is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        if self.chol_lower is None:
            try:
                chol = np.linalg.cholesky(prec)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"precision matrix is not positive definite: {exc}") from None
            object.__setattr__(self, "chol_lower", chol)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def init_prior(d: int) -> GaussianPosterior:
    """Standard-normal prior: zero mean, identity precision."""
    if d < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {d}")
    return GaussianPosterior(mean=np.zeros(d), precision=np.eye(d))


def update(post: GaussianPosterior, x, y: float, sigma0_sq: float) -> GaussianPosterior:
    """Absorb one observation (x, y) with noise variance ``sigma0_sq``.

    precision' = precision + x x^T / sigma0_sq
    mean'      = precision'^{-1} (x y / sigma0_sq + precision mean)
    """
    if sigma0_sq <= 0.0:
        raise ConfigurationError(f"sigma0_sq must be > 0, got {sigma0_sq}")
    xv = _as_vector(x)
    if xv.shape[0] != post.dim:
        raise ValidationError(f"covariate dimension {xv.shape[0]} != posterior dimension {post.dim}")
    prec_new = post.precision + np.outer(xv, xv) / sigma0_sq
    rhs = xv * (float(y) / sigma0_sq) + post.precision @ post.mean
    try:
        chol = np.linalg.cholesky(prec_new)
    except np.linalg.LinAlgError as exc:  # unreachable from a valid posterior
        raise NumericalError(f"updated precision not positive definite: {exc}") from None
    mean_new = cho_solve((chol, True), rhs, check_finite=False)
    return GaussianPosterior(mean=mean_new, precision=prec_new, chol_lower=chol)


def sample(post: GaussianPosterior, M: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``M`` i.i.d. coefficient vectors, shape (M, d).

    Uses the precision's Cholesky factor: if precision = L L^T then
    mean + L^{-T} z has the posterior law for standard-normal z.
    """
    if M < 1:
        raise ConfigurationError(f"M must be >= 1, got {M}")
    z = rng.standard_normal((post.dim, M))
    shifted = solve_triangular(post.chol_lower.T, z, lower=False, check_finite=False)
    return (post.mean[:, None] + shifted).T


@dataclass(frozen=True)
class PosteriorBank:
    """Per-arm efficacy and safety posteriors plus the shared noise scale."""

    efficacy: tuple
    safety: tuple
    sigma0_sq: float

    def __post_init__(self):
        dims = {p.dim for p in self.efficacy} | {p.dim for p in self.safety}
        if len(dims) != 1:
            raise ValidationError(f"posteriors disagree on dimension: {sorted(dims)}")
        if len(self.efficacy) != len(self.safety):
            raise ValidationError("efficacy and safety posterior counts differ")

    @classmethod
    def initial(cls, K: int, d: int, sigma0_sq: float) -> "PosteriorBank":
        if K < 2:
            raise ConfigurationError(f"K must be >= 2, got {K}")
        prior = init_prior(d)
        return cls(efficacy=(prior,) * K, safety=(prior,) * K, sigma0_sq=sigma0_sq)

    @property
    def K(self) -> int:
        return len(self.efficacy)

    @property
    def dim(self) -> int:
        return self.efficacy[0].dim

    def absorb(self, record: ParticipantRecord) -> "PosteriorBank":
        """New bank with the record's outcomes folded into its arm."""
        if not record.has_outcomes:
            raise ValidationError(f"participant {record.id} has no usable outcomes yet")
        a = record.arm - 1
        eff = list(self.efficacy)
        saf = list(self.safety)
        eff[a] = update(eff[a], record.covariates, record.efficacy, self.sigma0_sq)
        saf[a] = update(saf[a], record.covariates, record.safety, self.sigma0_sq)
        return replace(self, efficacy=tuple(eff), safety=tuple(saf))


def update_batch(bank: PosteriorBank, records: Iterable[ParticipantRecord]) -> PosteriorBank:
    """Fold a batch of completed records into the bank, in the given order.

    The precision additions commute, so any ordering of the same batch gives
    the same posterior up to floating-point roundoff.
    """
    for record in records:
        bank = bank.absorb(record)
    return bank
