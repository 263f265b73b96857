"""Arm selection policies and Monte-Carlo probability of assignment.

Three policies are supported:

* ``uniform`` - every arm with probability 1/K.
* ``ts`` - Thompson Sampling: draw once from every arm's posterior and take
  the arm with the largest draw.
* ``hybrid`` - epsilon-TS: flip an epsilon coin first; heads assigns
  uniformly, tails uses Thompson Sampling. ``share_uniform_data`` decides
  whether rewards from the uniform branch update the TS posterior.

Arms are 0-based indices internally. Ties between equal draws go to the
lowest index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .posterior import BetaParams, as_arrays

DEFAULT_DRAWS = 1_000_000
_CHUNK_CELLS = 1 << 20


class PolicyKind(str, enum.Enum):
    UNIFORM = "uniform"
    THOMPSON = "ts"
    HYBRID = "hybrid"


class AllocationSource(str, enum.Enum):
    """Which branch produced an assignment."""

    UNIFORM = "uniform"
    TS = "ts"


@dataclass(frozen=True, slots=True)
class AllocationPolicy:
    kind: PolicyKind
    epsilon: float | None = None
    share_uniform_data: bool | None = None

    def __post_init__(self) -> None:
        kind = PolicyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PolicyKind.HYBRID:
            if self.epsilon is None or not 0.0 < float(self.epsilon) < 1.0:
                raise ValidationError(f"hybrid epsilon must lie in (0, 1), got {self.epsilon}")
            if self.share_uniform_data is None:
                raise ValidationError("hybrid policy needs share_uniform_data")
            object.__setattr__(self, "epsilon", float(self.epsilon))
            object.__setattr__(self, "share_uniform_data", bool(self.share_uniform_data))
        elif self.epsilon is not None or self.share_uniform_data is not None:
            raise ValidationError(f"epsilon/share_uniform_data only apply to the hybrid policy, not {kind.value}")

    @classmethod
    def uniform(cls) -> AllocationPolicy:
        return cls(PolicyKind.UNIFORM)

    @classmethod
    def thompson(cls) -> AllocationPolicy:
        return cls(PolicyKind.THOMPSON)

    @classmethod
    def hybrid(cls, epsilon: float = 0.5, share_uniform_data: bool = True) -> AllocationPolicy:
        return cls(PolicyKind.HYBRID, epsilon, share_uniform_data)

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.HYBRID:
            return f"hybrid[{self.epsilon:g}{'' if self.share_uniform_data else ',unshared'}]"
        return self.kind.value

    def visible_sources(self) -> frozenset[AllocationSource]:
        """Sources whose rewards feed the posterior used for TS draws.

        A uniform policy learns from its own (uniform) data so its posterior
        and PA stay meaningful for reporting.
        """
        if self.kind is PolicyKind.UNIFORM:
            return frozenset({AllocationSource.UNIFORM})
        if self.kind is PolicyKind.THOMPSON or not self.share_uniform_data:
            return frozenset({AllocationSource.TS})
        return frozenset({AllocationSource.UNIFORM, AllocationSource.TS})

    def to_dict(self) -> dict:
        doc: dict = {"kind": self.kind.value}
        if self.kind is PolicyKind.HYBRID:
            doc["epsilon"] = self.epsilon
            doc["share_uniform_data"] = self.share_uniform_data
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> AllocationPolicy:
        return cls(PolicyKind(doc["kind"]), doc.get("epsilon"), doc.get("share_uniform_data"))


def _check_arms(n_arms: int) -> None:
    if n_arms < 2:
        raise ValidationError(f"need at least 2 arms, got {n_arms}")


def uniform_select(n_arms: int, rng: np.random.Generator) -> int:
    _check_arms(n_arms)
    return int(rng.integers(n_arms))


def ts_select(posteriors: Sequence[BetaParams], rng: np.random.Generator) -> int:
    _check_arms(len(posteriors))
    alpha, beta = as_arrays(posteriors)
    return int(np.argmax(rng.beta(alpha, beta)))


def hybrid_select(
    posteriors: Sequence[BetaParams], epsilon: float, rng: np.random.Generator
) -> tuple[int, AllocationSource]:
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    _check_arms(len(posteriors))
    alpha, beta = as_arrays(posteriors)
    return _hybrid_draw(alpha, beta, epsilon, rng)


def _hybrid_draw(alpha, beta, epsilon, rng) -> tuple[int, AllocationSource]:
    # coin first, then the arm draw, all from the same stream
    if rng.random() < epsilon:
        return int(rng.integers(len(alpha))), AllocationSource.UNIFORM
    return int(np.argmax(rng.beta(alpha, beta))), AllocationSource.TS


def prob_optimal(
    posteriors: Sequence[BetaParams], draws: int = DEFAULT_DRAWS, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Monte-Carlo probability that each arm has the highest success rate.

    Each round samples every posterior once and credits the argmax; the
    result is credits / draws, so it sums to one. Work is chunked to bound
    memory; the chunk size is fixed so a seed always gives the same answer.
    """
    if draws < 1:
        raise ValidationError(f"draws must be >= 1, got {draws}")
    _check_arms(len(posteriors))
    if rng is None:
        rng = np.random.default_rng()
    alpha, beta = as_arrays(posteriors)
    k = len(alpha)
    chunk = max(1, _CHUNK_CELLS // k)
    credits = np.zeros(k, dtype=np.int64)
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        winners = np.argmax(rng.beta(alpha, beta, size=(m, k)), axis=1)
        credits += np.bincount(winners, minlength=k)
        done += m
    return credits / draws


def assign_batch(
    posteriors: Sequence[BetaParams], policy: AllocationPolicy, n: int, rng: np.random.Generator
) -> list[tuple[int, AllocationSource]]:
    """``n`` independent selections against one frozen set of posteriors.

    The result is identical to calling the matching ``*_select`` function
    ``n`` times on ``rng``.
    """
    if n < 0:
        raise ValidationError(f"participant count must be >= 0, got {n}")
    k = len(posteriors)
    _check_arms(k)
    if n == 0:
        return []
    if policy.kind is PolicyKind.UNIFORM:
        return [(int(rng.integers(k)), AllocationSource.UNIFORM) for _ in range(n)]
    alpha, beta = as_arrays(posteriors)
    if policy.kind is PolicyKind.THOMPSON:
        # one vectorised call consumes the stream exactly like n scalar calls
        arms = np.argmax(rng.beta(alpha, beta, size=(n, k)), axis=1)
        return [(int(a), AllocationSource.TS) for a in arms]
    return [_hybrid_draw(alpha, beta, policy.epsilon, rng) for _ in range(n)]
