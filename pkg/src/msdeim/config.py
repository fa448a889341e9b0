"""Run configuration: an INI file with sections, validated into :class:`RunConfig`.

Grammar (every key is optional; missing keys take experiment defaults)::

    [grid]        n_coarse, n_sub
    [field]       preset | channels (path to a channel file), eta, kappa_min, seed
    [offline]     m_off, s_form (kappa | pu_gradient)
    [experiment]  name (fn_approx | steady | parabolic | param_sweep),
                  m (comma list, ``rank`` = all available points), mode (full | msdeim),
                  mu_train (comma list), mu_test
    [deim]        weighted (bool), target (b | w), form (coefficient | nodal),
                  cap, compare_unweighted (bool)
    [time]        dt, T
    [newton]      tol, max_iter
    [output]      dir

Lists are comma separated; ``#`` and ``;`` start comments.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .coeff import PRESETS

__all__ = ["ConfigError", "RunConfig", "EXPERIMENTS", "RANK", "load_config", "parse_config", "default_config"]

EXPERIMENTS = ("fn_approx", "steady", "parabolic", "param_sweep")
RANK = 10**6
"""Sentinel in the ``m`` list: as many points as the local snapshot rank allows."""


class ConfigError(ValueError):
    pass


_TRAIN_01 = tuple(np.round(np.linspace(0.1, 1.0, 10), 12))
_DEFAULTS = {
    "fn_approx": dict(mu_train=_TRAIN_01, mu_test=1.0, weighted=False, tol=1e-12),
    "steady": dict(mu_train=_TRAIN_01, mu_test=0.5, weighted=True, tol=1e-12),
    # coarse Jacobians at high contrast put the Newton round-off floor near 1e-12
    "parabolic": dict(mu_train=(10.0,), mu_test=10.0, weighted=True, tol=1e-10),
    "param_sweep": dict(mu_train=(5.0, 6.0, 7.0, 8.0, 9.0, 10.0), mu_test=8.5, weighted=True, tol=1e-10),
}


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "steady"
    n_coarse: int = 10
    n_sub: int = 10
    preset: str | None = "case1"
    channels: str | None = None
    eta: float = 4.0
    kappa_min: float = 1.0
    seed: int = 0
    m_off: int = 3
    s_form: str = "kappa"
    m_values: tuple = (1, 2, 3, 4, 5, 6, RANK)
    mode: str = "msdeim"
    mu_train: tuple = ()
    mu_test: float = 0.5
    weighted: bool = True
    target: str = "b"
    form: str = "coefficient"
    cap: int = 200
    compare_unweighted: bool = False
    dt: float = 1e-2
    T: float = 0.1
    tol: float = 1e-12
    max_iter: int = 30
    out: str | None = None

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.experiment in EXPERIMENTS, f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        need(self.n_coarse >= 2 and self.n_sub >= 2, "n_coarse and n_sub must be at least 2")
        need((self.preset is None) != (self.channels is None), "give exactly one of field.preset, field.channels")
        need(self.preset is None or self.preset in PRESETS, f"unknown preset {self.preset!r}")
        need(self.kappa_min > 0, "kappa_min must be positive")
        need(self.m_off >= 1, "m_off must be at least 1")
        need(self.s_form in ("kappa", "pu_gradient"), "s_form must be kappa or pu_gradient")
        need(len(self.m_values) > 0 and all(m >= 1 for m in self.m_values), "m values must be positive")
        need(all(a < b for a, b in zip(self.m_values, self.m_values[1:])), "m values must be strictly increasing")
        need(self.mode in ("full", "msdeim"), "mode must be full or msdeim")
        need(len(self.mu_train) > 0, "mu_train is empty")
        lo, hi = (5.0, 10.0) if self.experiment in ("parabolic", "param_sweep") else (0.0, 1.0)
        for mu in (*self.mu_train, self.mu_test):
            need(lo <= mu <= hi, f"mu={mu} outside [{lo}, {hi}] for {self.experiment}")
        need(self.target in ("b", "w"), "target must be b or w")
        need(self.form in ("coefficient", "nodal"), "form must be coefficient or nodal")
        need(not (self.target == "w" and self.form == "coefficient"), "target w needs form nodal")
        need(self.cap >= 1, "cap must be at least 1")
        need(self.dt > 0 and self.T >= self.dt, "need dt > 0 and T >= dt")
        need(self.tol > 0, "newton tol must be positive")
        need(self.max_iter >= 1, "newton max_iter must be at least 1")
        return self

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "preset" in kw:
            kw.setdefault("channels", None)
        return replace(self, **kw).validate()

    @property
    def field_source(self) -> str:
        if self.preset is not None:
            return self.preset
        return Path(self.channels).read_text()

    def offline_key(self) -> dict:
        """Settings that determine the offline GMsFEM space."""
        return dict(n_coarse=self.n_coarse, n_sub=self.n_sub, preset=self.preset, channels=self.channels,
                    eta=self.eta, kappa_min=self.kappa_min, seed=self.seed, m_off=self.m_off, s_form=self.s_form)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        d = asdict(self)
        fmt = lambda v: "" if v is None else (", ".join(_fmt_m(x) for x in v) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v))  # noqa: E731
        cp["grid"] = {"n_coarse": fmt(d["n_coarse"]), "n_sub": fmt(d["n_sub"])}
        cp["field"] = {k: fmt(d[k]) for k in ("preset", "channels", "eta", "kappa_min", "seed")}
        cp["offline"] = {"m_off": fmt(d["m_off"]), "s_form": d["s_form"]}
        cp["experiment"] = {"name": d["experiment"], "m": fmt(d["m_values"]), "mode": d["mode"],
                            "mu_train": ", ".join(repr(float(x)) for x in d["mu_train"]),
                            "mu_test": repr(float(d["mu_test"]))}
        cp["deim"] = {k: fmt(d[k]) for k in ("weighted", "target", "form", "cap", "compare_unweighted")}
        cp["time"] = {"dt": fmt(d["dt"]), "T": fmt(d["T"])}
        cp["newton"] = {"tol": fmt(d["tol"]), "max_iter": fmt(d["max_iter"])}
        cp["output"] = {"dir": fmt(d["out"])}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt_m(x):
    return "rank" if x == RANK else repr(x) if isinstance(x, float) else str(x)


def default_config(experiment: str = "steady", **overrides) -> RunConfig:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    base = dict(_DEFAULTS[experiment])
    base.update(overrides)
    return RunConfig(experiment=experiment, **base).validate()


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ms(text):
    out = []
    for t in text.split(","):
        t = t.strip().lower()
        if t:
            out.append(RANK if t == "rank" else int(t))
    return tuple(out)


def parse_config(text: str, base_dir=None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = {"grid", "field", "offline", "experiment", "deim", "time", "newton", "output"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")

    def get(sec, key, conv, dest, kw):
        if cp.has_option(sec, key):
            raw = cp.get(sec, key).strip()
            try:
                kw[dest] = conv(raw) if raw != "" else None
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from None

    kw = {}
    name = cp.get("experiment", "name", fallback="steady").strip()
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {name!r}")
    boolean = lambda s: cp.BOOLEAN_STATES[s.lower()] if s.lower() in cp.BOOLEAN_STATES else _bad_bool(s)  # noqa: E731
    spec = [
        ("grid", "n_coarse", int, "n_coarse"), ("grid", "n_sub", int, "n_sub"),
        ("field", "preset", str, "preset"), ("field", "channels", str, "channels"),
        ("field", "eta", float, "eta"), ("field", "kappa_min", float, "kappa_min"), ("field", "seed", int, "seed"),
        ("offline", "m_off", int, "m_off"), ("offline", "s_form", str, "s_form"),
        ("experiment", "m", _ms, "m_values"), ("experiment", "mode", str, "mode"),
        ("experiment", "mu_train", _floats, "mu_train"), ("experiment", "mu_test", float, "mu_test"),
        ("deim", "weighted", boolean, "weighted"), ("deim", "target", str, "target"),
        ("deim", "form", str, "form"), ("deim", "cap", int, "cap"),
        ("deim", "compare_unweighted", boolean, "compare_unweighted"),
        ("time", "dt", float, "dt"), ("time", "T", float, "T"),
        ("newton", "tol", float, "tol"), ("newton", "max_iter", int, "max_iter"),
        ("output", "dir", str, "out"),
    ]
    allowed = {(s, k) for s, k, _, _ in spec} | {("experiment", "name")}
    for sec in cp.sections():
        for key in cp[sec]:
            if (sec, key) not in allowed:
                raise ConfigError(f"unknown key [{sec}] {key}")
    for sec, key, conv, dest in spec:
        get(sec, key, conv, dest, kw)
    if kw.get("channels") and "preset" not in kw:
        kw["preset"] = None
    if kw.get("channels") and base_dir is not None and not Path(kw["channels"]).is_absolute():
        kw["channels"] = str(Path(base_dir) / kw["channels"])
    kw = {k: v for k, v in kw.items() if v is not None or k in ("preset", "channels")}
    names = {f.name for f in fields(RunConfig)}
    assert set(kw) <= names
    return default_config(name, **kw)


def _bad_bool(s):
    raise ValueError(f"not a boolean: {s!r}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)
