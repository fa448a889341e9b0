"""Relative error metrics and the error table written by every experiment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["error_l2", "error_energy", "ErrorTable"]


def error_l2(F, F_approx) -> float:
    """``||F - F~||_2 / ||F~||_2``; the approximation is the reference."""
    F = np.asarray(F, dtype=float)
    Fa = np.asarray(F_approx, dtype=float)
    if F.shape != Fa.shape:
        raise ValueError(f"shape mismatch {F.shape} vs {Fa.shape}")
    den = np.linalg.norm(Fa)
    if den == 0.0:
        raise ZeroDivisionError("approximation has zero norm")
    return float(np.linalg.norm(F - Fa) / den)


def error_energy(U, U_approx, A) -> float:
    """``sqrt((U - U~)^T A (U - U~) / U^T A U)``."""
    U = np.asarray(U, dtype=float)
    Ua = np.asarray(U_approx, dtype=float)
    if U.shape != Ua.shape or A.shape[0] != U.size:
        raise ValueError("dimension mismatch")
    den = float(U @ (A @ U))
    if den == 0.0:
        raise ZeroDivisionError("reference has zero energy")
    e = U - Ua
    return float(np.sqrt(max(e @ (A @ e), 0.0) / den))


@dataclass
class ErrorTable:
    """Rows ``(m, relative L2 error, relative energy error)``, m strictly increasing.

    ``m`` is the largest number of interpolation points used in any region
    (regions with a smaller snapshot rank keep fewer).
    """

    label: str
    rows: list = field(default_factory=list)
    reports: dict = field(default_factory=dict, repr=False)
    """Solve reports keyed by run label (``"full"``, ``"msdeim-m3"``, ...)."""
    diverged: list = field(default_factory=list)
    """Labels of MSDEIM runs whose Newton iteration failed."""
    operators: dict = field(default_factory=dict, repr=False)
    """DEIM operators keyed by m."""
    fields: dict = field(default_factory=dict, repr=False)
    """Final fine-grid fields keyed by run label."""
    info: dict = field(default_factory=dict)

    def add(self, m, rel_l2, rel_energy):
        m = int(m)
        if self.rows and m <= self.rows[-1][0]:
            raise ValueError(f"m must increase: {m} after {self.rows[-1][0]}")
        self.rows.append((m, float(rel_l2), float(rel_energy)))

    @property
    def m(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows], dtype=int)

    @property
    def l2(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def energy(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def column(self, metric: str) -> np.ndarray:
        return {"l2": self.l2, "energy": self.energy}[metric]

    def is_monotone(self, metric: str = "energy", rel_tol: float = 0.1, floor: float = 1e-10) -> bool:
        """Nonincreasing in m up to a relative tolerance; values below
        ``floor`` count as converged and are not compared."""
        e = self.column(metric)
        for a, b in zip(e, e[1:]):
            if b > floor and b > a * (1.0 + rel_tol):
                return False
        return True

    def __len__(self):
        return len(self.rows)
