"""Flat ``key = value`` scenario and plan files.

Keys ending in ``_dB`` are converted to linear scale here and nowhere else.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..channel import System, SystemConfig, build_system

EXPERIMENTS = ("convergence", "sweep-delta", "sweep-M", "sweep-epsilon", "sweep-P",
               "validate-outage", "oracle-check", "timing")

_SCENARIO_KEYS = {
    "N", "B", "J", "P", "P_dB", "alpha", "sigma2_b", "sigma2_b_dB", "sigma2_e", "sigma2_e_dB",
    "delta", "epsilon", "cluster_power", "mu_user", "mu_eve", "users", "n_users", "eves",
}
_PLAN_KEYS = {"scenario", "experiment", "grid", "trials", "output", "samples", "timing", "K"}

DEFAULT_SCENARIO = """\
# desk-scale defaults
N = 16
B = 2
J = 3
P_dB = 10
alpha = 2.5
sigma2_b_dB = 0
sigma2_e_dB = 5
delta = 0.5
epsilon = 0.1
users = uniform(1, 100)
n_users = 20
eves = 10/j
"""


class ParseError(ValueError):
    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


def _read_pairs(text: str, path: str, allowed: set) -> dict:
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(path, no, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ParseError(path, no, f"unknown key {key!r}")
        if key in out:
            raise ParseError(path, no, f"duplicate key {key!r}")
        if not value:
            raise ParseError(path, no, f"empty value for {key!r}")
        out[key] = (value, no)
    return out


def _number(value: str, path, no, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise ParseError(path, no, f"not a valid {kind.__name__}: {value!r}") from None


def _numbers(value: str, path, no) -> list:
    return [_number(v.strip(), path, no) for v in value.split(",") if v.strip()]


_UNIFORM = re.compile(r"^uniform\(\s*([^,]+),\s*([^)]+)\)$")


@dataclass(frozen=True)
class Scenario:
    cfg: SystemConfig
    user_spec: tuple          # ("uniform", lo, hi) or ("list", distances)
    n_users: int
    eve_spec: tuple           # ("inverse", c) for c/j, or ("list", distances)

    def eve_distances(self) -> np.ndarray:
        if self.eve_spec[0] == "inverse":
            return self.eve_spec[1] / np.arange(1, self.cfg.J + 1)
        return np.asarray(self.eve_spec[1][: self.cfg.J], dtype=float)

    def user_distances(self, rng: np.random.Generator) -> np.ndarray:
        if self.user_spec[0] == "uniform":
            return rng.uniform(self.user_spec[1], self.user_spec[2], self.n_users)
        return np.asarray(self.user_spec[1], dtype=float)

    def build(self, rng: np.random.Generator) -> System:
        return build_system(self.cfg, self.user_distances(rng), self.eve_distances(), rng)

    def with_config(self, **changes) -> "Scenario":
        return replace(self, cfg=replace(self.cfg, **changes))

    def with_users(self, n: int) -> "Scenario":
        if self.user_spec[0] != "uniform":
            raise ValueError("user count can only be changed for uniform placement")
        return replace(self, n_users=n)


def parse_scenario(text: str, path: str = "<scenario>") -> Scenario:
    kv = _read_pairs(text, path, _SCENARIO_KEYS)

    def get(key, default=None, kind=float):
        if key not in kv:
            return default
        value, no = kv[key]
        return _number(value, path, no, kind)

    def linear(key):
        if key in kv and key + "_dB" in kv:
            raise ParseError(path, kv[key][1], f"give {key} or {key}_dB, not both")
        if key + "_dB" in kv:
            return 10.0 ** (get(key + "_dB") / 10.0)
        return get(key)

    for req in ("N", "B", "J"):
        if req not in kv:
            raise ParseError(path, 0, f"missing required key {req!r}")
    P = linear("P")
    if P is None:
        raise ParseError(path, 0, "missing required key 'P' or 'P_dB'")
    kwargs = dict(N=get("N", kind=int), B=get("B", kind=int), J=get("J", kind=int), P=P)
    for key in ("alpha", "delta", "epsilon", "mu_user", "mu_eve"):
        if key in kv:
            kwargs[key] = get(key)
    for key in ("sigma2_b", "sigma2_e"):
        v = linear(key)
        if v is not None:
            kwargs[key] = v
    if "cluster_power" in kv:
        value, no = kv["cluster_power"]
        kwargs["cluster_power"] = tuple(_numbers(value, path, no))
    try:
        cfg = SystemConfig(**kwargs)
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None

    users, no = kv.get("users", ("uniform(1, 100)", 0))
    m = _UNIFORM.match(users)
    if m:
        lo, hi = _number(m.group(1), path, no), _number(m.group(2), path, no)
        if not 0 < lo < hi:
            raise ParseError(path, no, "uniform placement needs 0 < lo < hi")
        user_spec = ("uniform", lo, hi)
        n_users = get("n_users", 20, int)
    else:
        dists = _numbers(users, path, no)
        if min(dists) <= 0:
            raise ParseError(path, no, "distances must be positive")
        user_spec = ("list", tuple(dists))
        n_users = len(dists)
    if n_users < 1:
        raise ParseError(path, kv.get("n_users", ("", 0))[1], "need at least one user")

    eves, no = kv.get("eves", ("10/j", 0))
    if eves.replace(" ", "").endswith("/j"):
        eve_spec = ("inverse", _number(eves.replace(" ", "")[:-2], path, no))
    else:
        dists = _numbers(eves, path, no)
        if len(dists) != cfg.J:
            raise ParseError(path, no, f"expected {cfg.J} Eve distances, got {len(dists)}")
        eve_spec = ("list", tuple(dists))
    return Scenario(cfg, user_spec, n_users, eve_spec)


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), str(path))


def default_scenario() -> Scenario:
    return parse_scenario(DEFAULT_SCENARIO, "<default>")


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: Scenario
    experiment: str
    grid: tuple = ()
    trials: int = 1
    output: str = None
    samples: int = 10 ** 5
    timing: bool = False
    K: int = 2
    grid_linear: tuple = field(init=False, default=())

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
        if self.experiment == "sweep-P":
            # the power grid is given in dB; convert it once, here
            object.__setattr__(self, "grid_linear", tuple(10.0 ** (g / 10.0) for g in self.grid))
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.experiment not in ("convergence", "validate-outage", "oracle-check") and not self.grid:
            raise ValueError(f"experiment {self.experiment!r} needs a nonempty grid")


def parse_plan(text: str, path: str = "<plan>", base: Path = None) -> ExperimentPlan:
    kv = _read_pairs(text, path, _PLAN_KEYS)
    if "experiment" not in kv:
        raise ParseError(path, 0, "missing required key 'experiment'")
    scen_val = kv.get("scenario", ("default", 0))[0]
    if scen_val == "default":
        scenario = default_scenario()
    else:
        scen_path = Path(scen_val)
        if base is not None and not scen_path.is_absolute():
            scen_path = base / scen_path
        scenario = load_scenario(scen_path)
    grid = tuple(_numbers(kv["grid"][0], path, kv["grid"][1])) if "grid" in kv else ()
    kw = {}
    if "trials" in kv:
        kw["trials"] = _number(kv["trials"][0], path, kv["trials"][1], int)
    if "samples" in kv:
        kw["samples"] = _number(kv["samples"][0], path, kv["samples"][1], int)
    if "K" in kv:
        kw["K"] = _number(kv["K"][0], path, kv["K"][1], int)
    if "timing" in kv:
        kw["timing"] = kv["timing"][0].lower() in ("1", "true", "yes", "on")
    if "output" in kv:
        kw["output"] = kv["output"][0]
    try:
        return ExperimentPlan(scenario, kv["experiment"][0], grid, **kw)
    except ValueError as exc:
        raise ParseError(path, kv["experiment"][1], str(exc)) from None


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    return parse_plan(path.read_text(encoding="utf-8"), str(path), base=path.parent)
