"""Command-line front end: study presets, configuration files and the runner.

Usage::

    python -m sdcconv list
    python -m sdcconv describe heat-fig1c
    python -m sdcconv run heat-fig1c --out results/
    python -m sdcconv run --config my_study.json
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .collocation import PreconditionerKind, QuadratureTables
from .diagnostics import Method, ReferenceKind, run_convergence_study
from .mlsdc import Level, LevelHierarchy, SpatialTransfer, TemporalTransfer
from .problems import AllenCahn2D, Auzinger, Heat1D, LinearSystem
from .sweeper import InitialGuess, SweepConfig

SCHEMA_VERSION = 1
OUT_ENV = "SDCCONV_OUT"
RESULTS_HEADER = ["preset", "dt", "k", "err_coll", "err_exact", "err_last", "order_fit",
                  "contraction_slope", "E_max", "wall_ms"]

PROBLEM_PARAMS = {
    "heat": {"nu": 0.1, "kappa": 4},
    "allencahn": {"eps": 0.2, "kappa": 4},
    "auzinger": {"lam": -0.75, "rho": 3.0},
    "zero": {},
}


class ConfigError(ValueError):
    """Invalid study configuration; the message names the offending key."""


@dataclass
class Check:
    """Expected-value band for a fitted quantity.

    The expected value is ``per_k * k + offset``. ``bound`` is ``band`` for
    |value - expected| <= tol or ``upper`` for value <= expected + tol.
    ``quantity`` is ``order`` (fit of the error against ``reference``),
    ``order_step`` (order(k) - order(k-1)) or ``contraction``.
    """

    quantity: str
    ks: list
    per_k: float = 0.0
    offset: float = 0.0
    tol: float = 0.5
    bound: str = "band"
    reference: str = "exact"

    def __post_init__(self):
        if self.quantity not in ("order", "order_step", "contraction"):
            raise ConfigError(f"checks.quantity: unknown quantity {self.quantity!r}")
        if self.bound not in ("band", "upper"):
            raise ConfigError(f"checks.bound: unknown bound {self.bound!r}")
        if not self.ks or any(int(k) != k or k < 0 for k in self.ks):
            raise ConfigError("checks.ks: need a non-empty list of iteration indices")
        if not self.tol >= 0:
            raise ConfigError("checks.tol: must be non-negative")
        ReferenceKind(self.reference)
        self.ks = [int(k) for k in self.ks]

    def expected(self, k):
        return self.per_k * k + self.offset

    def passes(self, value, k):
        if value is None or not math.isfinite(value):
            return False
        if self.bound == "upper":
            return value <= self.expected(k) + self.tol
        return abs(value - self.expected(k)) <= self.tol

    def describe(self):
        if self.per_k and self.offset:
            exp = f"{self.per_k:g}k{self.offset:+g}"
        elif self.per_k:
            exp = f"{self.per_k:g}k"
        else:
            exp = f"{self.offset:g}"
        ks = ",".join(map(str, self.ks))
        if self.bound == "upper":
            slack = f" + {self.tol:g}" if self.tol else ""
            return f"{self.quantity} <= {exp}{slack} (k={ks})"
        return f"{self.quantity} = {exp} +/- {self.tol:g} (k={ks})"


@dataclass
class StudyConfig:
    name: str
    problem: str
    method: str
    num_nodes: int
    dt_list: list
    k_max: int
    problem_params: dict = field(default_factory=dict)
    num_nodes_coarse: Optional[int] = None
    n_fine: Optional[int] = None
    n_coarse: Optional[int] = None
    preconditioner: str = PreconditionerKind.RIGHT_RECTANGLE.value
    interp_order: Optional[int] = None
    guess: str = InitialGuess.SPREAD.value
    seed: int = 0
    t_end: Optional[float] = None
    references: list = field(default_factory=lambda: ["collocation", "exact", "last"])
    node_solve_tol: float = 1e-12
    floor: float = 1e-13
    N0: Optional[int] = None
    checks: list = field(default_factory=list)
    figure: str = ""
    note: str = ""
    out: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    REQUIRED = ("name", "problem", "method", "num_nodes", "dt_list", "k_max")

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        for key in cls.REQUIRED:
            if key not in data:
                raise ConfigError(f"missing required key {key!r}")
        data = copy.deepcopy(data)
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")
        raw_checks = data.pop("checks", [])
        checks = []
        for i, c in enumerate(raw_checks):
            if not isinstance(c, dict):
                raise ConfigError(f"checks[{i}]: must be an object")
            bad = sorted(set(c) - {f.name for f in fields(Check)})
            if bad:
                raise ConfigError(f"checks[{i}]: unknown key(s): {', '.join(bad)}")
            try:
                checks.append(Check(**c))
            except TypeError as exc:
                raise ConfigError(f"checks[{i}]: {exc}") from None
            except ValueError as exc:
                raise ConfigError(f"checks[{i}]: {exc}") from None
        cfg = cls(checks=checks, **data)
        cfg.validate()
        return cfg

    def to_dict(self):
        d = asdict(self)
        d["checks"] = [asdict(c) for c in self.checks]
        return d

    @property
    def is_mlsdc(self):
        return Method(self.method) is Method.MLSDC

    def validate(self):
        """Check every cross-field constraint; raises ConfigError naming the key."""
        if self.problem not in PROBLEM_PARAMS:
            raise ConfigError(f"problem: unknown problem id {self.problem!r} "
                              f"(choose from {', '.join(PROBLEM_PARAMS)})")
        allowed = set(PROBLEM_PARAMS[self.problem]) | ({"size"} if self.problem == "zero"
                                                      else set())
        bad = sorted(set(self.problem_params) - allowed)
        if bad:
            raise ConfigError(f"problem_params: unknown key(s) {', '.join(bad)} for "
                              f"{self.problem}")
        for key, enum_cls in (("method", Method), ("guess", InitialGuess),
                              ("preconditioner", PreconditionerKind)):
            try:
                enum_cls(getattr(self, key))
            except ValueError:
                raise ConfigError(f"{key}: invalid value {getattr(self, key)!r}") from None
        for r in self.references:
            try:
                ReferenceKind(r)
            except ValueError:
                raise ConfigError(f"references: invalid value {r!r}") from None
        if int(self.num_nodes) != self.num_nodes or self.num_nodes < 1:
            raise ConfigError("num_nodes: must be a positive integer")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ConfigError("k_max: must be a positive integer")
        dts = np.asarray(self.dt_list, dtype=float)
        if dts.ndim != 1 or dts.size < 1 or np.any(dts <= 0):
            raise ConfigError("dt_list: need positive step sizes")
        if np.unique(dts).size != dts.size:
            raise ConfigError("dt_list: step sizes must be distinct")
        if self.t_end is not None:
            if not self.t_end > 0:
                raise ConfigError("t_end: must be positive")
            for dt in dts:
                n = round(self.t_end / dt)
                if n < 1 or abs(n * dt - self.t_end) > 1e-12 * self.t_end:
                    raise ConfigError(f"t_end: step size {dt:g} does not divide {self.t_end:g}")
        if self.problem in ("heat", "allencahn") and self.n_fine is None:
            raise ConfigError("n_fine: required for spatially discretized problems")
        if self.is_mlsdc:
            if self.num_nodes_coarse is None and self.n_coarse is None:
                raise ConfigError("n_coarse: MLSDC needs a coarse level "
                                  "(n_coarse and/or num_nodes_coarse)")
            if self.n_coarse is not None and self.interp_order is None:
                raise ConfigError("interp_order: required for spatial coarsening")
            if (self.num_nodes_coarse is not None and self.n_coarse is None
                    and self.interp_order not in (None, self.num_nodes_coarse)):
                raise ConfigError("interp_order: temporal interpolation uses all coarse "
                                  "nodes, so it must equal num_nodes_coarse")
        for c in self.checks:
            if max(c.ks) > self.k_max:
                raise ConfigError(f"checks.ks: iteration {max(c.ks)} exceeds k_max")
            if c.quantity != "contraction" and c.reference not in self.references:
                raise ConfigError(f"checks.reference: {c.reference!r} not in references")
        if self.guess == InitialGuess.RANDOM.value and (
                int(self.seed) != self.seed or not 0 <= self.seed < 2**64):
            raise ConfigError("seed: must be an unsigned 64-bit integer")
        try:
            self.build()
        except ValueError as exc:
            raise ConfigError(f"invalid level setup: {exc}") from None

    # -- construction -------------------------------------------------------
    def _make_problem(self, n):
        p = dict(PROBLEM_PARAMS[self.problem], **self.problem_params)
        if self.problem == "heat":
            return Heat1D(N=n, **p)
        if self.problem == "allencahn":
            return AllenCahn2D(N=n, newton_tol=self.node_solve_tol, **p)
        if self.problem == "auzinger":
            return Auzinger(**p)
        size = int(p.get("size", 4))
        return LinearSystem.zero(np.linspace(1.0, 2.0, size))

    def build(self):
        """Return (problem, tables, hierarchy or None, sweep config)."""
        kind = PreconditionerKind(self.preconditioner)
        sweep = SweepConfig(preconditioner=kind, node_solve_tol=self.node_solve_tol)
        fine_p = self._make_problem(self.n_fine)
        fine_t = QuadratureTables.build(self.num_nodes, kind)
        if not self.is_mlsdc:
            return fine_p, fine_t, None, sweep
        spatial = temporal = None
        coarse_p, coarse_t = fine_p, fine_t
        if self.n_coarse is not None:
            if self.problem not in ("heat", "allencahn"):
                raise ValueError(f"{self.problem} has no spatial grid to coarsen")
            coarse_p = self._make_problem(self.n_coarse)
            bc, ndim = ("dirichlet", 1) if self.problem == "heat" else ("periodic", 2)
            spatial = SpatialTransfer(self.n_fine, self.n_coarse, self.interp_order, bc, ndim)
        if self.num_nodes_coarse is not None and self.num_nodes_coarse != self.num_nodes:
            coarse_t = QuadratureTables.build(self.num_nodes_coarse, kind)
            temporal = TemporalTransfer(fine_t.nodes, coarse_t.nodes)
        hier = LevelHierarchy(Level(fine_p, fine_t), Level(coarse_p, coarse_t), spatial,
                              temporal, sweep)
        return fine_p, fine_t, hier, sweep


# -- presets ----------------------------------------------------------------------

def _window(base, n=6):
    """base * 2^-1, ..., base * 2^-n."""
    return [base * 2.0**-j for j in range(1, n + 1)]


def _heat(name, figure, note, method, guess="spread", n_fine=255, n_coarse=None, p=None,
          base=0.064, k_max=4, checks=()):
    return dict(name=name, figure=figure, note=note, problem="heat",
                problem_params={"nu": 0.1, "kappa": 4}, method=method, num_nodes=5,
                n_fine=n_fine, n_coarse=n_coarse, interp_order=p, guess=guess, seed=0,
                dt_list=_window(base), k_max=k_max, floor=1e-12, checks=list(checks))


def _ac(name, figure, note, method, n_fine, n_coarse=None, p=None, guess="spread",
        base=0.128, checks=()):
    return dict(name=name, figure=figure, note=note, problem="allencahn",
                problem_params={"eps": 0.2, "kappa": 4}, method=method, num_nodes=3,
                n_fine=n_fine, n_coarse=n_coarse, interp_order=p, guess=guess, seed=0,
                dt_list=_window(base), k_max=3, checks=list(checks),
                references=["collocation"])


def _auz(name, figure, note, method, guess="spread", M_H=None, lo=3, checks=()):
    return dict(name=name, figure=figure, note=note, problem="auzinger",
                problem_params={"lam": -0.75, "rho": 3.0}, method=method, num_nodes=8,
                num_nodes_coarse=M_H, interp_order=M_H, guess=guess, seed=0,
                dt_list=[2.0**-j for j in range(lo, lo + 4)], k_max=3, t_end=1.0,
                node_solve_tol=1e-14, checks=list(checks))


def _c(quantity, ks, per_k=0.0, offset=0.0, tol=0.5, bound="band", reference="exact"):
    return dict(quantity=quantity, ks=list(ks), per_k=per_k, offset=offset, tol=tol,
                bound=bound, reference=reference)


_AC_SDC = _c("contraction", [2, 3], offset=1.0, tol=0.4)
_AC_GOOD = _c("contraction", [2], offset=2.0, tol=0.5)
_AC_DEGRADED = _c("contraction", [2], offset=1.5, tol=0.0, bound="upper")

# Allen-Cahn windows use the largest base 0.128 for which every preset converges
# in every cell.
# Heat windows: base 0.064 for smooth errors. Random guesses and p=4 put error
# into the stiff modes (lambda_max ~ 2.6e4), whose O(dt) regime needs
# dt * lambda_max of order one, hence base 4e-4. The floor of 1e-12 sits above
# the accuracy of the N=255 collocation reference.
_PRESETS = [
    _heat("heat-fig1a", "1a", "SDC, spread initial guess", "SDC",
          checks=[_c("order_step", [1, 2, 3, 4], offset=1.0, tol=0.4),
                  _c("contraction", [2, 3, 4], offset=1.0, tol=0.4)]),
    _heat("heat-fig1b", "1b", "SDC, random initial guess", "SDC", guess="random",
          base=4e-4, checks=[_c("contraction", [1, 2, 3], offset=1.0, tol=0.4)]),
    _heat("heat-fig1c", "1c", "MLSDC N_h=255 N_H=127 p=8, spread guess", "MLSDC",
          n_coarse=127, p=8, k_max=3,
          checks=[_c("contraction", [2, 3], offset=2.0, tol=0.5)]),
    _heat("heat-fig1d", "1d", "MLSDC coarse grids dx_h=1/16 dx_H=1/8", "MLSDC",
          n_fine=15, n_coarse=7, p=8, k_max=3,
          checks=[_c("contraction", [2, 3], offset=1.5, tol=0.0, bound="upper")]),
    _heat("heat-fig1e", "1e", "MLSDC interpolation order p=4, smaller dt", "MLSDC",
          n_coarse=127, p=4, base=4e-4, k_max=3,
          checks=[_c("contraction", [2], offset=1.5, tol=0.0, bound="upper")]),
    _heat("heat-fig1f", "1f", "MLSDC random initial guess", "MLSDC", guess="random",
          n_coarse=127, p=8, base=4e-4, k_max=3,
          checks=[_c("contraction", [2, 3], offset=1.5, tol=0.0, bound="upper")]),
    _ac("allencahn-fig2a", "2a", "SDC, spread initial guess, N=128", "SDC", 128,
        checks=[_AC_SDC]),
    _ac("allencahn-fig2b", "2b", "SDC, random initial guess, N=128", "SDC", 128,
        guess="random", checks=[_AC_SDC]),
    _ac("allencahn-fig2c", "2c", "MLSDC N_h=128 N_H=64 p=8, spread guess", "MLSDC", 128,
        64, 8, checks=[_AC_GOOD]),
    _ac("allencahn-fig2d", "2d", "MLSDC coarse grids N_h=32 N_H=16", "MLSDC", 32, 16, 8,
        checks=[_AC_DEGRADED]),
    _ac("allencahn-fig2e", "2e", "MLSDC interpolation order p=2", "MLSDC", 128, 64, 2,
        checks=[_AC_DEGRADED]),
    _ac("allencahn-fig2f", "2f", "MLSDC random initial guess", "MLSDC", 128, 64, 8,
        guess="random", checks=[_AC_DEGRADED]),
    # downscaled variants used by the default acceptance run
    _ac("allencahn-small-good", "2c", "MLSDC N_h=64 N_H=32 p=8 (downscaled 2c)", "MLSDC",
        64, 32, 8, checks=[_AC_GOOD]),
    _ac("allencahn-small-coarse", "2d", "MLSDC N_h=16 N_H=8 p=8 (downscaled 2d)", "MLSDC",
        16, 8, 8, checks=[_AC_DEGRADED]),
    _ac("allencahn-small-p2", "2e", "MLSDC N_h=64 N_H=32 p=2 (downscaled 2e)", "MLSDC",
        64, 32, 2, checks=[_AC_DEGRADED]),
    _ac("allencahn-small-random", "2f", "MLSDC N_h=64 N_H=32 random guess (downscaled 2f)",
        "MLSDC", 64, 32, 8, guess="random", checks=[_AC_DEGRADED]),
    _ac("allencahn-small-sdc", "2a", "SDC N=64 (downscaled 2a)", "SDC", 64,
        checks=[_AC_SDC]),
    _auz("auzinger-fig3a", "3a", "SDC, spread guess, lam=-0.75, rho=3, M_h=8", "SDC",
         checks=[_c("order", [1, 2, 3], per_k=1.0, tol=0.6)]),
    _auz("auzinger-fig3b", "3b", "SDC, random guess, lam=-0.75, rho=3, M_h=8", "SDC",
         guess="random", checks=[_c("order", [1, 2, 3], per_k=1.0, tol=0.6)]),
    _auz("auzinger-fig3c", "3c", "MLSDC M_h=8 M_H=6=p, lam=-0.75, rho=3", "MLSDC", M_H=6,
         checks=[_c("order", [1, 2, 3], per_k=2.0, tol=0.6)]),
    _auz("auzinger-fig3d", "3d", "MLSDC M_h=8 M_H=6, larger dt in [2^-1, 2^-4]", "MLSDC",
         M_H=6, lo=1),
    _auz("auzinger-fig3e", "3e", "MLSDC M_h=8 M_H=2=p, lam=-0.75, rho=3", "MLSDC", M_H=2,
         checks=[_c("order", [1, 2, 3], per_k=1.0, tol=0.6)]),
    _auz("auzinger-fig3f", "3f", "MLSDC M_h=8 M_H=6, random guess, lam=-0.75, rho=3",
         "MLSDC", M_H=6, guess="random", checks=[_c("order", [1, 2, 3], per_k=1.0, tol=0.6)]),
]
PRESETS = {p["name"]: p for p in _PRESETS}
ALIASES = {"allencahn-fig2-good": "allencahn-fig2c"}


def preset_names():
    return list(PRESETS) + list(ALIASES)


def get_preset(name):
    """Validated StudyConfig for a preset (or alias) name."""
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; run 'list' to see the presets")
    data = copy.deepcopy(PRESETS[key])
    return StudyConfig.from_dict({k: v for k, v in data.items() if v is not None})


def _params_text(cfg):
    pp = dict(PROBLEM_PARAMS[cfg.problem], **cfg.problem_params)
    if cfg.problem == "auzinger":
        parts = [f"λ={pp['lam']:g}, ρ={pp['rho']:g}", f"M_h={cfg.num_nodes}"]
        if cfg.num_nodes_coarse:
            parts.append(f"M_H={cfg.num_nodes_coarse}")
    else:
        greek = {"nu": "ν", "eps": "ε", "kappa": "κ"}
        parts = [", ".join(f"{greek.get(k, k)}={v:g}" for k, v in pp.items()),
                 f"M={cfg.num_nodes}", f"N_h={cfg.n_fine}"]
        if cfg.n_coarse:
            parts += [f"N_H={cfg.n_coarse}", f"p={cfg.interp_order}"]
    return "; ".join(parts)


def list_presets():
    """Plain-text table of all presets."""
    rows = [("preset", "figure", "method", "parameters", "expected", "note")]
    for name in PRESETS:
        cfg = get_preset(name)
        expected = "; ".join(c.describe() for c in cfg.checks) or "-"
        rows.append((name, cfg.figure, cfg.method, _params_text(cfg), expected, cfg.note))
    for alias, target in ALIASES.items():
        rows.append((alias, PRESETS[target]["figure"], "", f"alias of {target}", "", ""))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# -- running ----------------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _check_value(check, result, k):
    if check.quantity == "contraction":
        return result.contraction.get(k, float("nan"))
    orders = result.orders if check.reference == "exact" else _orders(result, check.reference)
    if check.quantity == "order":
        return orders.get(k, float("nan"))
    if k < 1:
        return float("nan")
    return orders.get(k, float("nan")) - orders.get(k - 1, float("nan"))


def _orders(result, reference):
    from .diagnostics import InsufficientDataError, fit_order
    series = result.series.get(ReferenceKind(reference))
    out = {}
    if series is None:
        return out
    for k in range(series.k_max + 1):
        exclude = None if result.saturated is None else result.saturated[:, k]
        try:
            out[k] = fit_order(zip(series.step_sizes, series.column(k)), exclude=exclude)
        except InsufficientDataError:
            out[k] = float("nan")
    return out


def evaluate_checks(cfg, result):
    out = []
    for c in cfg.checks:
        for k in c.ks:
            v = _check_value(c, result, k)
            out.append({"quantity": c.quantity, "k": k, "value": None if math.isnan(v) else v,
                        "expected": c.expected(k), "tol": c.tol, "bound": c.bound,
                        "reference": c.reference, "passed": bool(c.passes(v, k))})
    return out


def run_study(cfg, jobs=1):
    """Run the study described by ``cfg``; returns the StudyResult."""
    problem, tables, hier, sweep = cfg.build()
    return run_convergence_study(
        cfg.method, cfg.dt_list, cfg.k_max, problem=problem, tables=tables, hierarchy=hier,
        guess=cfg.guess, seed=cfg.seed, N0=cfg.N0, floor=cfg.floor, jobs=jobs,
        t_end=cfg.t_end, coll_tol=cfg.node_solve_tol)


def results_rows(cfg, result, timing=False):
    rows = []
    for r in result.rows():
        rows.append([cfg.name, _fmt(r.dt), str(r.k), _fmt(r.err_coll), _fmt(r.err_exact),
                     _fmt(r.err_last), _fmt(r.order_fit), _fmt(r.contraction_slope),
                     _fmt(r.E_max), _fmt(r.wall_ms) if timing else ""])
    return rows


PLOT_TEMPLATE = '''"""Log-log error against step size with expected-order guide lines."""
import csv
import sys

import matplotlib.pyplot as plt

EXPECTED = {expected!r}
REFERENCE = {reference!r}

rows = list(csv.DictReader(open(sys.argv[1] if len(sys.argv) > 1 else {csv_name!r})))
fig, ax = plt.subplots()
for k in sorted({{int(r["k"]) for r in rows}}):
    pts = [(float(r["dt"]), float(r[REFERENCE])) for r in rows if int(r["k"]) == k]
    pts = [(dt, e) for dt, e in pts if e == e and e > 0]
    if not pts:
        continue
    line, = ax.loglog(*zip(*pts), "o", label=f"k={{k}}")
    if str(k) in EXPECTED and EXPECTED[str(k)] is not None:
        dt0, e0 = pts[0]
        q = EXPECTED[str(k)]
        ax.loglog([dt for dt, _ in pts], [e0 * (dt / dt0) ** q for dt, _ in pts], "-",
                  color=line.get_color())
ax.set_xlabel("dt")
ax.set_ylabel(REFERENCE)
ax.set_title({title!r})
ax.legend()
fig.savefig({png_name!r}, dpi=150)
'''


def write_plot_script(cfg, path, csv_name):
    expected, reference = {}, "err_coll"
    orders = [c for c in cfg.checks if c.quantity == "order" and c.bound == "band"]
    if orders:
        reference = {"exact": "err_exact", "last": "err_last",
                     "collocation": "err_coll"}[orders[0].reference]
        expected = {str(k): orders[0].expected(k) for k in orders[0].ks}
    Path(path).write_text(PLOT_TEMPLATE.format(
        expected=expected, reference=reference, csv_name=csv_name, title=cfg.name,
        png_name=f"{cfg.name}.png"))


def run(cfg, out_dir, jobs=1, plot=True, timing=False, stream=sys.stdout):
    """Run, write results.csv, summary.json and optionally plot.py; return exit code."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result = run_study(cfg, jobs=jobs)
    elapsed = time.perf_counter() - start
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        w.writerows(results_rows(cfg, result, timing))
    checks = evaluate_checks(cfg, result)
    ok = all(c["passed"] for c in checks) and not result.failures
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "orders": {str(k): (None if math.isnan(v) else v) for k, v in result.orders.items()},
        "contraction": {str(k): (None if math.isnan(v) else v)
                        for k, v in result.contraction.items()},
        "failures": {repr(dt): msg for dt, msg in result.failures.items()},
        "checks": checks,
        "passed": ok,
    }
    if result.failures:
        summary["note"] = "failed cells are stored as nan in results.csv"
    if timing:
        summary["elapsed_s"] = elapsed
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if plot:
        write_plot_script(cfg, out / "plot.py", "results.csv")
    for c in checks:
        v = "nan" if c["value"] is None else f"{c['value']:.3f}"
        tag = "PASS" if c["passed"] else "FAIL"
        print(f"{tag} {cfg.name} {c['quantity']} k={c['k']}: {v} "
              f"(expected {'<=' if c['bound'] == 'upper' else ''}{c['expected']:g} "
              f"+/- {c['tol']:g})", file=stream)
    for dt, msg in result.failures.items():
        print(f"FAIL {cfg.name} dt={dt:g}: {msg}", file=stream)
    return 0 if ok else 1


def load_config(path):
    """Parse a JSON study configuration with line context on syntax errors."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return StudyConfig.from_dict(data)


def parse_config(source, overrides=None):
    """StudyConfig from a preset name or a JSON path, with flag overrides applied."""
    if isinstance(source, dict):
        cfg = StudyConfig.from_dict(source)
    elif os.path.exists(str(source)) or str(source).endswith(".json"):
        cfg = load_config(source)
    else:
        cfg = get_preset(source)
    if overrides:
        data = cfg.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = StudyConfig.from_dict(data)
    return cfg


def _dt_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty step-size list")
    return vals


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="sdcconv", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="show the study presets")
    d = sub.add_parser("describe", help="print a preset's configuration as JSON")
    d.add_argument("preset")
    r = sub.add_parser("run", help="run a preset or a configuration file")
    r.add_argument("preset", nargs="?", help="preset name (see `list`)")
    r.add_argument("--config", help="JSON study configuration")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    r.add_argument("--jobs", type=int, default=1,
                   help="worker processes, one task per step size")
    r.add_argument("--seed", type=_seed, help="seed for the random initial guess")
    r.add_argument("--dt-list", type=_dt_list, help="comma-separated step sizes")
    r.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True,
                   help="write plot.py next to the results")
    r.add_argument("--timing", action="store_true",
                   help="fill the wall_ms column (makes results non-reproducible)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print(list_presets())
            return 0
        if args.command == "describe":
            print(json.dumps(get_preset(args.preset).to_dict(), indent=2))
            return 0
        if (args.preset is None) == (args.config is None):
            raise ConfigError("run needs exactly one of a preset name or --config")
        cfg = parse_config(args.config or args.preset,
                           {"seed": args.seed, "dt_list": args.dt_list})
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        out = args.out or cfg.out or os.environ.get(OUT_ENV) or "results"
        out = Path(out) / cfg.name if args.out is None and cfg.out is None else Path(out)
        return run(cfg, out, jobs=args.jobs, plot=args.plot, timing=args.timing)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
