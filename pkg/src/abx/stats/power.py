"""Sample size for a two-arm comparison of means."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError, DomainError
from .normal import norm_ppf


@dataclass(frozen=True)
class PowerSpec:
    baseline_mean: float
    outcome_sd: float
    relative_effect: float
    alpha: float = 0.05
    power: float = 0.8

    def __post_init__(self):
        if not 0 < self.alpha < 1 or not 0 < self.power < 1:
            raise ConfigError("alpha and power must lie in (0, 1)")
        if not self.outcome_sd > 0:
            raise ConfigError("outcome_sd must be positive")

    @property
    def delta(self) -> float:
        return self.relative_effect * self.baseline_mean


def per_arm_n(spec: PowerSpec) -> float:
    """Unrounded per-arm size ``2 sd^2 (z_{1-a/2} + z_{power})^2 / delta^2``."""
    delta = spec.delta
    if delta == 0:
        raise DomainError("effect size is zero; no finite sample resolves it")
    z = norm_ppf(1.0 - spec.alpha / 2.0) + norm_ppf(spec.power)
    return 2.0 * spec.outcome_sd ** 2 * z * z / (delta * delta)


def power_required_n(spec: PowerSpec) -> int:
    """Total sample size (both arms) for a two-sided z-test."""
    return 2 * math.ceil(per_arm_n(spec))
