"""Beta-Bernoulli posteriors for binary-reward arms.

Each arm keeps a Beta(alpha, beta) belief over its success probability.
Observing reward r on the chosen arm adds (r, 1 - r) to its parameters;
arms that were not chosen keep their parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, slots=True)
class BetaParams:
    alpha: float = 1.0  # success pseudo-count
    beta: float = 1.0  # failure pseudo-count

    def __post_init__(self) -> None:
        a, b = float(self.alpha), float(self.beta)
        if not (a > 0 and b > 0) or not (np.isfinite(a) and np.isfinite(b)):
            raise ValidationError(f"Beta parameters must be positive and finite, got ({self.alpha}, {self.beta})")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def mean(self) -> float:
        return posterior_mean(self)

    def as_tuple(self) -> tuple[float, float]:
        return (self.alpha, self.beta)


def check_reward(reward) -> int:
    """Return ``reward`` as int, rejecting anything but 0/1 (bools allowed)."""
    if isinstance(reward, (bool, np.bool_)):
        return int(reward)
    if isinstance(reward, (int, np.integer)) and reward in (0, 1):
        return int(reward)
    if isinstance(reward, (float, np.floating)) and reward in (0.0, 1.0):
        return int(reward)
    raise ValidationError(f"reward must be binary 0/1, got {reward!r}")


def init_prior(n_arms: int, alpha0: float = 1.0, beta0: float = 1.0) -> list[BetaParams]:
    """Identical (alpha0, beta0) priors for ``n_arms`` arms; the default is uniform."""
    if int(n_arms) != n_arms or n_arms < 2:
        raise ValidationError(f"need at least 2 arms, got {n_arms}")
    prior = BetaParams(alpha0, beta0)
    return [prior] * int(n_arms)


def update(params: BetaParams, reward) -> BetaParams:
    r = check_reward(reward)
    return BetaParams(params.alpha + r, params.beta + 1 - r)


def batch_fold(params: BetaParams, successes: int, failures: int) -> BetaParams:
    """Apply ``successes`` ones and ``failures`` zeros at once (order does not matter)."""
    if successes < 0 or failures < 0:
        raise ValidationError(f"counts must be non-negative, got ({successes}, {failures})")
    return BetaParams(params.alpha + successes, params.beta + failures)


def fold_rewards(params: BetaParams, rewards: Iterable) -> BetaParams:
    for r in rewards:
        params = update(params, r)
    return params


def posterior_mean(params: BetaParams) -> float:
    return params.alpha / (params.alpha + params.beta)


def sample(params: BetaParams, rng: np.random.Generator) -> float:
    """One Beta(alpha, beta) draw from ``rng``."""
    return float(rng.beta(params.alpha, params.beta))


def as_arrays(posteriors: Iterable[BetaParams]) -> tuple[np.ndarray, np.ndarray]:
    posteriors = list(posteriors)
    return (
        np.array([p.alpha for p in posteriors], dtype=float),
        np.array([p.beta for p in posteriors], dtype=float),
    )
