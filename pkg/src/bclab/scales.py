"""Scales and thresholds derived from N."""

from __future__ import annotations

from dataclasses import asdict, dataclass
import math


@dataclass(frozen=True)
class ScalesConfig:
    N: int
    delta: float = 0.001
    delta_tilde: float = 0.1
    theta3_factor: float = 2.0
    K: float = 10.0
    eps1: float = 0.05
    eps2: float = 0.05
    eps3: float = 0.05
    beta: float = 0.01

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.delta_tilde > 0:
            raise ValueError("delta_tilde must be > 0")
        if not self.theta3_factor > 1:
            raise ValueError("theta3 must exceed theta2 (factor > 1)")
        for name in ("K", "eps1", "eps2", "eps3", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def theta1(self) -> float:
        return self.N ** (-2.0 / 5.0)

    @property
    def theta2(self) -> float:
        return self.N ** (-3.0 / 5.0)

    @property
    def theta3(self) -> float:
        return self.theta3_factor * self.theta2

    @property
    def T(self) -> int:
        return int(math.floor((1.0 + 7.0 * self.delta) / (28.0 * self.delta)))

    @property
    def r0(self) -> float:
        return float(self.N) ** -7.0

    @property
    def eta_N(self) -> float:
        return 5.0 / (math.pi * self.N ** self.delta_tilde)

    @property
    def contraction_rate(self) -> float:
        """Per-step contraction threshold N^{-4/5}."""
        return self.N ** (-4.0 / 5.0)

    def derived(self) -> dict:
        return {
            "theta1": self.theta1,
            "theta2": self.theta2,
            "theta3": self.theta3,
            "T": self.T,
            "r0": self.r0,
            "eta_N": self.eta_N,
            "contraction_rate": self.contraction_rate,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["derived"] = self.derived()
        return d
