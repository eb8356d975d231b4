"""Scalar model parameters shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class SystemParams:
    """All scalar parameters of the uplink and learning model.

    Defaults are the desk-scale reproduction setting: 15 codes, 20-slot
    period, 2 m radio range, 10 m observation range on a 50 m field.
    ``N`` is only used in fixed-count mode and by the closed-form delay;
    otherwise the node count is drawn from the Poisson deployment.
    """

    N: int = 2000
    l: int = 4
    tau: float = 1.0
    T: int = 20
    r_c: float = 2.0
    r_d: float = 10.0
    p11: float = 0.8
    p10: float = 0.001
    K: int = 7
    R: float = 50.0
    lam: float = 0.8
    C: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "C", 2**self.l - 1)
        if self.l < 1:
            raise ValueError(f"code length l must be >= 1, got {self.l}")
        if not 0.0 <= self.p10 < self.p11 <= 1.0:
            raise ValueError(f"need 0 <= p10 < p11 <= 1, got p10={self.p10}, p11={self.p11}")
        if self.K < 2:
            raise ValueError(f"memory size K must be >= 2, got {self.K}")
        if self.T < 1:
            raise ValueError(f"period T must be >= 1, got {self.T}")
        if self.N < 0:
            raise ValueError(f"node count N must be >= 0, got {self.N}")
        for name in ("tau", "r_c", "r_d", "R"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError(f"density must be a finite non-negative number, got {self.lam}")

    @property
    def p01(self) -> float:
        return 1.0 - self.p11

    @property
    def p00(self) -> float:
        return 1.0 - self.p10

    @property
    def expected_nodes(self) -> float:
        return self.R * self.R * self.lam

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)
