"""High-contrast channel permeability fields and the nonlinear function catalog."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Channel",
    "PermField",
    "PRESETS",
    "preset_channels",
    "parse_channels",
    "generate_permeability",
    "save_field_grid",
    "NonlinearFn",
    "NonlinearEvalError",
    "make_nonlinear",
    "eval_nonlinear",
    "f1",
    "f2",
    "forcing",
    "b_exp",
    "constant",
    "identity",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Channel:
    """Union of axis-aligned rectangles ``(x0, x1, y0, y1)``.

    ``value`` overrides the channel conductivity; ``None`` means ``10**eta``.
    """

    rects: tuple
    value: float | None = None

    def contains(self, pts: np.ndarray) -> np.ndarray:
        inside = np.zeros(len(pts), dtype=bool)
        for x0, x1, y0, y1 in self.rects:
            inside |= (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        return inside


def _hbar(y, w, x0=0.0, x1=1.0):
    return (x0, x1, y - w / 2, y + w / 2)


def _vbar(x, w, y0=0.0, y1=1.0):
    return (x - w / 2, x + w / 2, y0, y1)


# Reconstructions in the spirit of the two channelized media: long thin
# high-conductivity channels, some crossing the domain, some ending inside.
PRESETS = {
    "case1": (
        Channel((_hbar(0.175, 0.03, 0.0, 0.82),)),
        Channel((_hbar(0.405, 0.03, 0.12, 1.0),)),
        Channel((_hbar(0.625, 0.03, 0.0, 0.88),)),
        Channel((_hbar(0.845, 0.03, 0.2, 0.95),)),
        Channel(((0.30, 0.36, 0.26, 0.32), (0.66, 0.72, 0.72, 0.78))),
    ),
    "case2": (
        Channel((_hbar(0.155, 0.03, 0.05, 0.7), _vbar(0.685, 0.03, 0.14, 0.58))),
        Channel((_hbar(0.565, 0.03, 0.67, 1.0),)),
        Channel((_vbar(0.255, 0.03, 0.3, 1.0), _hbar(0.315, 0.03, 0.24, 0.55))),
        Channel((_hbar(0.815, 0.03, 0.0, 0.85),)),
        Channel((_vbar(0.855, 0.03, 0.0, 0.42),)),
        Channel(((0.42, 0.48, 0.54, 0.6),)),
    ),
}


def preset_channels(name: str) -> tuple:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def parse_channels(text: str) -> tuple:
    """Parse the channel mini-language, one channel per non-empty line::

        x0 x1 y0 y1 [+ x0 x1 y0 y1 ...] [@ value]

    ``#`` starts a comment.
    """
    channels = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        value = None
        if "@" in line:
            line, v = line.split("@", 1)
            value = float(v)
        rects = []
        for part in line.split("+"):
            nums = [float(t) for t in part.split()]
            if len(nums) != 4:
                raise ValueError(f"channel segment needs 4 numbers: {part.strip()!r}")
            x0, x1, y0, y1 = nums
            if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
                raise ValueError(f"channel segment outside [0,1]^2 or empty: {part.strip()!r}")
            rects.append((x0, x1, y0, y1))
        channels.append(Channel(tuple(rects), value))
    return tuple(channels)


@dataclass(frozen=True, eq=False)
class PermField:
    kappa: np.ndarray
    eta: float
    channels: tuple
    kappa_min: float = 1.0
    seed: int = 0

    @property
    def kappa_max(self) -> float:
        return 10.0 ** self.eta

    @property
    def contrast(self) -> float:
        return float(self.kappa.max() / self.kappa.min())

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.kappa, dtype="<f8").tobytes())
        h.update(repr((self.eta, self.kappa_min, self.seed)).encode())
        return h.hexdigest()[:16]


def generate_permeability(channels, eta: float, mesh, kappa_min: float = 1.0, seed: int = 0) -> PermField:
    """Per-element conductivity: ``kappa_min`` in the background and ``10**eta``
    (or the channel's own value) for elements whose centroid lies in a channel.

    ``channels`` may be a preset name, a parsed tuple, or mini-language text.
    """
    if isinstance(channels, str):
        channels = PRESETS[channels] if channels in PRESETS else parse_channels(channels)
    channels = tuple(channels)
    kappa = np.full(mesh.n_elements, float(kappa_min))
    c = mesh.centroids
    for ch in channels:
        val = 10.0 ** eta if ch.value is None else float(ch.value)
        if not val > 0:
            raise ValueError(f"channel conductivity must be positive, got {val}")
        kappa[ch.contains(c)] = val
    kappa.setflags(write=False)
    return PermField(kappa, float(eta), channels, float(kappa_min), int(seed))


def save_field_grid(path, field_: PermField, mesh) -> None:
    """One row per row of fine squares, two values (lower, upper triangle) per square."""
    N = mesh.n_side
    np.savetxt(path, field_.kappa.reshape(N, 2 * N), fmt="%.17g")


# nonlinear functions ---------------------------------------------------------


class NonlinearEvalError(ValueError):
    def __init__(self, msg, index):
        super().__init__(msg)
        self.index = index


@dataclass(frozen=True)
class NonlinearFn:
    name: str
    mu: float
    value_fn: Callable = field(repr=False)
    deriv_fn: Callable = field(repr=False)

    def value(self, u):
        u = np.asarray(u, dtype=float)
        v = self.value_fn(u, self.mu)
        _check_finite(self.name, v)
        return v

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        d = self.deriv_fn(u, self.mu)
        _check_finite(self.name, d)
        return d

    __call__ = value


def _check_finite(name, v):
    bad = ~np.isfinite(v)
    if np.any(bad):
        j = int(np.flatnonzero(np.ravel(bad))[0])
        raise NonlinearEvalError(f"{name}: non-finite value at node {j}", j)


def _check_mu(name, mu, lo, hi):
    if not lo <= mu <= hi:
        raise ValueError(f"{name} is defined for mu in [{lo}, {hi}], got {mu}")


def f1(mu: float) -> NonlinearFn:
    """``(sin(2 pi mu u) cos(2 pi mu u))^2 exp(-2 pi mu u)``."""
    _check_mu("F1", mu, 0.0, 1.0)

    def val(u, mu):
        a = TWO_PI * mu * u
        return (np.sin(a) * np.cos(a)) ** 2 * np.exp(-a)

    def der(u, mu):
        a = TWO_PI * mu * u
        s, c, e = np.sin(a), np.cos(a), np.exp(-a)
        # d/da (s c)^2 e = 2 s c (c^2 - s^2) e - (s c)^2 e
        return TWO_PI * mu * e * (2 * s * c * (c * c - s * s) - (s * c) ** 2)

    return NonlinearFn("F1", float(mu), val, der)


def _f2_denominator(u, mu):
    den = 1.0 + np.sin(TWO_PI * mu * u)
    small = np.abs(den) < 1e-12
    if np.any(small):
        j = int(np.flatnonzero(np.ravel(small))[0])
        raise NonlinearEvalError(f"F2: near-singular denominator at node {j}", j)
    return den


def f2(mu: float) -> NonlinearFn:
    """``1 / (1 + sin(2 pi mu u))``."""
    _check_mu("F2", mu, 0.0, 1.0)

    def val(u, mu):
        return 1.0 / _f2_denominator(u, mu)

    def der(u, mu):
        den = _f2_denominator(u, mu)
        return -TWO_PI * mu * np.cos(TWO_PI * mu * u) / den**2

    return NonlinearFn("F2", float(mu), val, der)


def forcing(mu: float) -> NonlinearFn:
    """Steady forcing ``g(u) = (1 + sin(2 pi mu u)) exp(-2 pi mu u)``."""
    _check_mu("G_FORCE", mu, 0.0, 1.0)

    def val(u, mu):
        a = TWO_PI * mu * u
        return (1.0 + np.sin(a)) * np.exp(-a)

    def der(u, mu):
        a = TWO_PI * mu * u
        return TWO_PI * mu * np.exp(-a) * (np.cos(a) - 1.0 - np.sin(a))

    return NonlinearFn("G_FORCE", float(mu), val, der)


def b_exp(mu: float) -> NonlinearFn:
    """Diffusion nonlinearity ``b(u) = exp(mu u)``."""
    _check_mu("B_EXP", mu, 5.0, 10.0)
    return NonlinearFn("B_EXP", float(mu), lambda u, mu: np.exp(mu * u), lambda u, mu: mu * np.exp(mu * u))


def constant(c: float = 1.0) -> NonlinearFn:
    return NonlinearFn("CONST", float(c), lambda u, c: np.full(np.shape(u), c), lambda u, c: np.zeros(np.shape(u)))


def identity() -> NonlinearFn:
    return NonlinearFn("IDENTITY", 0.0, lambda u, mu: u.copy(), lambda u, mu: np.ones(np.shape(u)))


_CATALOG = {"F1": f1, "F2": f2, "G_FORCE": forcing, "B_EXP": b_exp}


def make_nonlinear(name: str, mu: float) -> NonlinearFn:
    try:
        return _CATALOG[name.upper()](mu)
    except KeyError:
        raise ValueError(f"unknown nonlinear function {name!r}; choose from {sorted(_CATALOG)}") from None


def eval_nonlinear(fn: NonlinearFn, u):
    """Values and analytic derivatives of ``fn`` at every entry of ``u``."""
    return fn.value(u), fn.derivative(u)
