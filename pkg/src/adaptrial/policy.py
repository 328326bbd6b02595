"""Arm-allocation policies and the sequential trial driver.

Three policies are supported: equal randomization (``rand``), Thompson
sampling on the efficacy posteriors alone (``ts``), and the risk-inclusive
sampler (``rits``) that scores each arm by a weighted blend of its efficacy
and safety predictions before the argmax count.

Propensities are estimated by Monte Carlo over posterior draws, clipped away
from 0 and 1, and recorded verbatim on the participant record: positivity of
the stored propensities is what later makes the evaluation weights valid.

Draw discipline: efficacy draws, safety draws, and the arm draw each live on
their own RNG stream.  The efficacy/safety streams are keyed by how many
outcomes the posterior bank has absorbed, so a sampler that ignores safety
consumes exactly the same efficacy draws as one that uses it, and repeated
allocations against an unchanged bank yield identical propensity vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import bayes
from .core import (
    ArmId,
    ConfigurationError,
    Covariates,
    ParticipantRecord,
    STREAM_ARM,
    STREAM_EFFICACY,
    STREAM_SAFETY,
    TrialConfig,
    ValidationError,
    augment_covariates,
    substream,
)

__all__ = [
    "Policy",
    "ts_propensities",
    "rits_utility",
    "rits_propensities",
    "clip_propensities",
    "allocate",
    "TrialEngine",
]

_KINDS = ("rand", "ts", "rits")


@dataclass(frozen=True)
class Policy:
    """Which allocation rule drives the trial.

    ``w`` only matters for the risk-inclusive sampler: 1 scores arms by
    efficacy alone, 0 by safety alone.
    """

    kind: str
    w: float = 0.5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown policy kind {self.kind!r}, expected one of {_KINDS}")
        if not 0.0 <= self.w <= 1.0:
            raise ConfigurationError(f"policy weight must be in [0, 1], got {self.w}")

    @classmethod
    def rand(cls) -> "Policy":
        return cls(kind="rand")

    @classmethod
    def ts(cls) -> "Policy":
        return cls(kind="ts", w=1.0)

    @classmethod
    def rits(cls, w: float = 0.5) -> "Policy":
        return cls(kind="rits", w=w)

    @property
    def label(self) -> str:
        return {"rand": "Rand", "ts": "TS", "rits": "RiTS"}[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "w": self.w}

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        return cls(kind=data["kind"], w=float(data.get("w", 0.5)))


def _propensities_from_scores(scores: np.ndarray) -> np.ndarray:
    """Fraction of simulations each arm wins; ties go to the lowest index."""
    K, M = scores.shape
    wins = np.argmax(scores, axis=0)
    counts = np.bincount(wins, minlength=K)
    return counts / float(M)


def ts_propensities(
    bank: bayes.PosteriorBank,
    x: Covariates,
    M: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Monte-Carlo win frequencies of each arm under the efficacy posteriors."""
    scores = np.empty((bank.K, M))
    for a in range(bank.K):
        draws = bayes.sample(bank.efficacy[a], M, rng)
        scores[a] = draws @ x.augmented
    return _propensities_from_scores(scores)


def rits_utility(x: Covariates, b: np.ndarray, g: np.ndarray, w: float) -> float:
    """Blended score w * x'b + (1 - w) * x'g for one pair of draws."""
    if not 0.0 <= w <= 1.0:
        raise ConfigurationError(f"weight must be in [0, 1], got {w}")
    xv = x.augmented
    if xv.shape[0] != np.shape(b)[-1] or xv.shape[0] != np.shape(g)[-1]:
        raise ValidationError("draw dimension does not match covariates")
    return float(w * (xv @ np.asarray(b)) + (1.0 - w) * (xv @ np.asarray(g)))


def rits_propensities(
    bank: bayes.PosteriorBank,
    x: Covariates,
    w: float,
    M: int,
    rng_efficacy: np.random.Generator,
    rng_safety: np.random.Generator,
) -> np.ndarray:
    """Win frequencies under the blended utility.

    Simulation index m pairs one efficacy draw and one safety draw per arm;
    all arms' efficacy draws come from ``rng_efficacy`` (in arm order) and
    all safety draws from ``rng_safety``, so the efficacy stream is shared
    with :func:`ts_propensities`.
    """
    if not 0.0 <= w <= 1.0:
        raise ConfigurationError(f"weight must be in [0, 1], got {w}")
    xv = x.augmented
    eff = np.empty((bank.K, M))
    for a in range(bank.K):
        eff[a] = bayes.sample(bank.efficacy[a], M, rng_efficacy) @ xv
    saf = np.empty((bank.K, M))
    for a in range(bank.K):
        saf[a] = bayes.sample(bank.safety[a], M, rng_safety) @ xv
    return _propensities_from_scores(w * eff + (1.0 - w) * saf)


def clip_propensities(q: np.ndarray, delta: float) -> np.ndarray:
    """Shrink linearly toward uniform so every entry lands in [delta, 1 - delta].

    q -> delta + (1 - K delta) q keeps the simplex, preserves the ordering
    (hence the argmax), and is the identity when delta = 0.
    """
    q = np.asarray(q, dtype=float)
    K = q.shape[0]
    if not 0.0 <= delta < 1.0 / K:
        raise ConfigurationError(f"delta must be in [0, 1/K), got {delta} with K={K}")
    return delta + (1.0 - K * delta) * q


def _uniform(K: int) -> np.ndarray:
    return np.full(K, 1.0 / K)


def _policy_propensities(
    bank: bayes.PosteriorBank,
    config: TrialConfig,
    policy: Policy,
    x: Covariates,
    bank_version: int,
) -> np.ndarray:
    rng_eff = substream(config.seed, STREAM_EFFICACY, bank_version)
    if policy.kind == "ts":
        q = ts_propensities(bank, x, config.M, rng_eff)
    elif policy.kind == "rits":
        rng_saf = substream(config.seed, STREAM_SAFETY, bank_version)
        q = rits_propensities(bank, x, policy.w, config.M, rng_eff, rng_saf)
    else:
        raise ConfigurationError(f"policy {policy.kind!r} has no posterior propensities")
    return clip_propensities(q, config.delta)


def _draw_arm(q: np.ndarray, seed: int, n: int) -> ArmId:
    rng = substream(seed, STREAM_ARM, n)
    u = rng.random()
    return int(np.searchsorted(np.cumsum(q), u, side="right")) + 1


def allocate(
    history: Sequence[ParticipantRecord],
    config: TrialConfig,
    policy: Policy,
    x: Covariates,
) -> tuple[ArmId, np.ndarray]:
    """Assign an arm to the next participant given the trial history.

    Stateless counterpart of :class:`TrialEngine.enroll`: rebuilds the
    posterior bank from the records whose outcomes are usable at this
    enrollment index and draws from the same substreams, so both paths
    produce identical allocations.
    """
    n = len(history) + 1
    if x.dim_raw != config.d_raw:
        raise ValidationError(f"expected {config.d_raw} raw covariates, got {x.dim_raw}")
    if n <= config.n0 or policy.kind == "rand":
        q = _uniform(config.K)
    else:
        usable = sorted(
            (r for r in history if r.has_outcomes and r.outcome_available_at <= n),
            key=lambda r: r.id,
        )
        bank = bayes.update_batch(
            bayes.PosteriorBank.initial(config.K, config.d, config.sigma0_sq), usable
        )
        q = _policy_propensities(bank, config, policy, x, bank_version=len(usable))
    arm = _draw_arm(q, config.seed, n)
    return arm, q


class TrialEngine:
    """Sequential driver holding the records, posterior bank, and delay state.

    Single writer per trial.  Outcomes are folded into the bank lazily at
    allocation time, in participant-id order among those that have become
    usable, which keeps live runs and journal replays bit-identical.
    """

    def __init__(self, config: TrialConfig, policy: Policy):
        config.validate()
        self.config = config
        self.policy = policy
        self.records: list[ParticipantRecord] = []
        self.bank = bayes.PosteriorBank.initial(config.K, config.d, config.sigma0_sq)
        self.bank_version = 0
        self._unabsorbed: list[ParticipantRecord] = []

    @property
    def n_enrolled(self) -> int:
        return len(self.records)

    def _sync_bank(self, n: int) -> None:
        """Fold outcomes that are usable at enrollment index ``n``."""
        due = [r for r in self._unabsorbed if r.has_outcomes and r.outcome_available_at <= n]
        if not due:
            return
        due.sort(key=lambda r: r.id)
        self.bank = bayes.update_batch(self.bank, due)
        self.bank_version += len(due)
        due_ids = {r.id for r in due}
        self._unabsorbed = [r for r in self._unabsorbed if r.id not in due_ids]

    def propensities_for(self, x: Covariates, n: Optional[int] = None, w: Optional[float] = None) -> np.ndarray:
        """Propensity vector the next enrollment would use (read-only).

        ``w`` overrides the policy weight for what-if previews; the draws
        come from the same substream the real allocation would consume.
        """
        if n is None:
            n = self.n_enrolled + 1
        self._sync_bank(n)
        if n <= self.config.n0 or self.policy.kind == "rand":
            if w is None:
                return _uniform(self.config.K)
        policy = self.policy
        if w is not None:
            policy = Policy.rits(w)
        if n <= self.config.n0 and w is not None:
            # previews reflect the posterior sampler even during burn-in
            pass
        return _policy_propensities(self.bank, self.config, policy, x, self.bank_version)

    def enroll(self, raw_covariates) -> ParticipantRecord:
        """Allocate an arm to the next participant and record the propensities."""
        x = raw_covariates if isinstance(raw_covariates, Covariates) else augment_covariates(raw_covariates)
        if x.dim_raw != self.config.d_raw:
            raise ValidationError(
                f"expected {self.config.d_raw} raw covariates, got {x.dim_raw}"
            )
        n = self.n_enrolled + 1
        self._sync_bank(n)
        if n <= self.config.n0 or self.policy.kind == "rand":
            q = _uniform(self.config.K)
        else:
            q = _policy_propensities(self.bank, self.config, self.policy, x, self.bank_version)
        arm = _draw_arm(q, self.config.seed, n)
        record = ParticipantRecord(id=n, covariates=x, arm=arm, propensities=q)
        self.records.append(record)
        return record

    def apply_enrollment(self, raw_covariates, arm: ArmId, propensities: np.ndarray) -> ParticipantRecord:
        """Append a previously journaled enrollment without re-randomizing.

        Advances the bank exactly as :meth:`enroll` would, so a replayed
        engine ends in the same state as the live one.
        """
        x = raw_covariates if isinstance(raw_covariates, Covariates) else augment_covariates(raw_covariates)
        n = self.n_enrolled + 1
        self._sync_bank(n)
        record = ParticipantRecord(
            id=n, covariates=x, arm=int(arm), propensities=np.asarray(propensities, dtype=float)
        )
        self.records.append(record)
        return record

    def set_outcome(
        self,
        participant_id: int,
        efficacy: float,
        safety: float,
        available_at: Optional[int] = None,
    ) -> ParticipantRecord:
        """Attach outcomes to a participant.

        ``available_at`` defaults to the next enrollment index: an outcome
        recorded now is usable from the next allocation on.
        """
        if not 1 <= participant_id <= self.n_enrolled:
            raise ValidationError(f"unknown participant id {participant_id}")
        record = self.records[participant_id - 1]
        if record.has_outcomes:
            raise ValidationError(f"participant {participant_id} already has outcomes")
        record.efficacy = float(efficacy)
        record.safety = float(safety)
        record.outcome_available_at = (
            self.n_enrolled + 1 if available_at is None else int(available_at)
        )
        self._unabsorbed.append(record)
        return record
