"""Shared domain types, validation, and deterministic RNG streams.

Everything downstream (allocation policies, inference, simulation, the live
service) builds on the value types defined here.  All randomness in the
package flows through :func:`substream` so that a trial is a pure function
of its seed, which is what makes journal replay and parallel simulation
reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "TrialError",
    "ValidationError",
    "ConfigurationError",
    "NumericalError",
    "ArmId",
    "Covariates",
    "ParticipantRecord",
    "TrialConfig",
    "augment_covariates",
    "rescale_endpoint",
    "substream",
    "derive_seed",
]


class TrialError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(TrialError):
    """Invalid data crossing a module boundary."""


class ConfigurationError(TrialError):
    """Invalid configuration value."""


class NumericalError(TrialError):
    """Linear-algebra breakdown that the invariants should rule out."""


# Arms are 1-based; arm 1 is the control (placebo) arm.
ArmId = int


# --------------------------------------------------------------------------
# Deterministic RNG streams
#
# Each (seed, stream, index) triple names an independent generator.  Streams
# used during allocation are keyed so that an efficacy-only sampler and a
# risk-inclusive sampler consume identical efficacy draws: the safety draws
# live on their own stream and skipping them does not perturb anything else.
STREAM_PARTICIPANT = 0  # per-participant covariate and outcome noise draws
STREAM_EFFICACY = 1  # posterior draws for the efficacy coefficients
STREAM_SAFETY = 2  # posterior draws for the safety coefficients
STREAM_ARM = 3  # the multinomial arm draw per enrollment
STREAM_RESAMPLE = 4  # bootstrap row resampling
STREAM_REPLICATION = 5  # per-replication seed derivation


def substream(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Independent generator for the (seed, stream, index) key."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(index)))
    return np.random.default_rng(ss)


def derive_seed(seed: int, stream: int, index: int = 0) -> int:
    """64-bit child seed for the (seed, stream, index) key."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(index)))
    lo, hi = ss.generate_state(2)
    return (int(hi) << 32) | int(lo)


# --------------------------------------------------------------------------
# Covariates


@dataclass(frozen=True)
class Covariates:
    """A participant's covariate vector, raw and with the intercept slot.

    ``augmented`` is ``(1, raw...)``: a single coefficient vector per arm can
    then carry both the intercept and the slopes.
    """

    raw: np.ndarray
    augmented: np.ndarray

    @property
    def dim_raw(self) -> int:
        return self.raw.shape[0]

    @property
    def dim(self) -> int:
        return self.augmented.shape[0]


def augment_covariates(raw: Sequence[float] | np.ndarray) -> Covariates:
    """Prepend the constant-1 intercept regressor to ``raw``.

    Raises :class:`ValidationError` on non-finite entries.
    """
    arr = np.array(raw, dtype=float, copy=True).reshape(-1)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"covariates must be finite, got {arr!r}")
    aug = np.concatenate(([1.0], arr))
    arr.setflags(write=False)
    aug.setflags(write=False)
    return Covariates(raw=arr, augmented=aug)


def rescale_endpoint(v: float, lo: float, hi: float) -> float:
    """Map ``v`` onto the unit interval spanned by the effective range (lo, hi).

    No clamping: the range is where most observations are expected to fall,
    not a hard bound, so values outside it map outside [0, 1].
    """
    if not hi > lo:
        raise ConfigurationError(f"effective range requires hi > lo, got ({lo}, {hi})")
    return (v - lo) / (hi - lo)


# --------------------------------------------------------------------------
# Participant record


@dataclass
class ParticipantRecord:
    """One enrolled participant.

    ``propensities`` is the exact vector the arm was drawn from.  It is data,
    recorded once at allocation time; inference consumes it verbatim and has
    no way to recompute it after the fact.

    Outcomes stay ``None`` until they become usable: ``outcome_available_at``
    is the enrollment index from which the allocation step may use them.
    """

    id: int
    covariates: Covariates
    arm: ArmId
    propensities: np.ndarray
    efficacy: Optional[float] = None
    safety: Optional[float] = None
    outcome_available_at: int = 0

    @property
    def has_outcomes(self) -> bool:
        return self.efficacy is not None and self.safety is not None

    def propensity_of_arm(self) -> float:
        return float(self.propensities[self.arm - 1])


# --------------------------------------------------------------------------
# Trial configuration


@dataclass(frozen=True)
class TrialConfig:
    """Hyper-parameters for one trial.

    ``M`` is the number of posterior draws behind every propensity
    evaluation; ``ridge_lambda`` penalizes the shared slope of the evaluation
    regression; ``rho_sigma_power`` selects whether the boundary-tuning rule
    divides by the burn-in standard deviation (1, the default) or the
    variance (2).
    """

    K: int
    d_raw: int
    n0: int
    delta: float
    m: int
    seed: int
    w: float = 0.5
    alpha: float = 0.05
    sigma0_sq: float = 1.0
    M: int = 1000
    ridge_lambda: float = 1.0
    delay: int = 0
    n_obs: Optional[int] = None
    stop_threshold: float = 0.1
    rho_sigma_power: int = 1

    def validate(self) -> "TrialConfig":
        problems = []
        if self.K < 2:
            problems.append(f"K must be >= 2, got {self.K}")
        if self.d_raw < 0:
            problems.append(f"d_raw must be >= 0, got {self.d_raw}")
        if not 0.0 <= self.w <= 1.0:
            problems.append(f"w must be in [0, 1], got {self.w}")
        if self.K >= 2 and not 0.0 < self.delta < 1.0 / self.K:
            problems.append(f"delta must be in (0, 1/K), got {self.delta} with K={self.K}")
        if self.n0 < self.K:
            problems.append(f"n0 must be >= K, got {self.n0}")
        if self.m < self.n0:
            problems.append(f"m must be >= n0, got m={self.m}, n0={self.n0}")
        if not 0.0 < self.alpha < 1.0:
            problems.append(f"alpha must be in (0, 1), got {self.alpha}")
        if self.sigma0_sq <= 0.0:
            problems.append(f"sigma0_sq must be > 0, got {self.sigma0_sq}")
        if self.M < 1:
            problems.append(f"M must be >= 1, got {self.M}")
        if self.ridge_lambda < 0.0:
            problems.append(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if self.delay < 0:
            problems.append(f"delay must be >= 0, got {self.delay}")
        if self.n_obs is not None and self.n_obs < 1:
            problems.append(f"n_obs must be >= 1, got {self.n_obs}")
        if self.seed < 0:
            problems.append(f"seed must be >= 0, got {self.seed}")
        if self.rho_sigma_power not in (1, 2):
            problems.append(f"rho_sigma_power must be 1 or 2, got {self.rho_sigma_power}")
        if problems:
            raise ConfigurationError("; ".join(problems))
        return self

    @property
    def d(self) -> int:
        """Dimension of the augmented covariate vector."""
        return self.d_raw + 1

    def with_seed(self, seed: int) -> "TrialConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrialConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = "ridge_lambda" if key == "lambda" else key
            if name not in known:
                raise ConfigurationError(f"unknown config field {key!r}")
            kwargs[name] = value
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
        return cfg.validate()
