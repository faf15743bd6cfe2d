"""Experiment harness: synthetic data, Monte Carlo L2 errors, rate studies,
the covering-number bound and the verification suites."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import construct, taylor
from .estimator import Planted, fit, predict, schedule_from_theorem
from .network import Topology, WeightVector
from .training import (Dataset, DivergenceError, GdConfig, Projection, gradient_check,
                       lipschitz_probe, run_gd, verify_derivative_bound, verify_linearisation_bound,
                       verify_localisation)

CSV_COLUMNS = ("n", "rep", "seed", "l2_error", "stderr", "wall_ms")


def make_target(name: str, d: int = 1, p: float = 1.0, A: float = 1.0) -> taylor.SmoothTarget:
    """Named regression functions; ``expr:<sympy expression in x1..xd>`` is also accepted."""
    if name == "abs":
        return taylor.abs_target(d, A)
    if name == "sin":
        return taylor.sin_target(2.0, d, p, A)
    if name == "zero":
        return taylor.polynomial_target({(0,) * d: 0.0}, d, p, A, name="zero")
    if name == "linear":
        return taylor.polynomial_target({tuple(int(i == j) for i in range(d)): 1.0 / d
                                         for j in range(d)}, d, p, A, name="linear")
    if name == "product":
        return taylor.product_target(d, p, A)
    if name.startswith("expr:"):
        return taylor.SmoothTarget.from_expr(name[5:], d, p, A=A)
    raise ValueError(f"unknown target {name!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    target: str = "abs"
    p: float = 1.0
    C: float = 1.0
    d: int = 1
    A: float = 1.0
    noise: float = 0.1
    n_grid: tuple = (50, 100, 200, 400, 800, 1600, 3200)
    reps: int = 10
    mode: str = "planted"
    seed: int = 0
    output: str = "rate_study.csv"
    K_tilde_coef: float = 1.0
    K_n_factor: int = 2
    steps: int = 500
    step_size: float | str = "probe"
    epsilon: float = 0.0
    m_eval: int = 20000

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        object.__setattr__(self, "n_grid", grid)
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("n grid must be strictly increasing")
        if self.reps < 1:
            raise ValueError("need at least one repetition")
        if self.noise < 0:
            raise ValueError("noise level must be non-negative")
        if self.mode not in ("random", "planted"):
            raise ValueError("mode must be 'random' or 'planted'")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_grid"] = list(self.n_grid)
        return out

    def make_target(self) -> taylor.SmoothTarget:
        return make_target(self.target, self.d, self.p, self.A)


def generate_data(cfg: ExperimentConfig, n: int, rep_seed: int,
                  target: taylor.SmoothTarget | None = None) -> Dataset:
    """X uniform on [-A, A]^d, Y = m(X) + N(0, s^2); deterministic in (rep_seed, n)."""
    target = cfg.make_target() if target is None else target
    rng = np.random.default_rng([int(rep_seed), int(n)])
    X = rng.uniform(-cfg.A, cfg.A, size=(n, cfg.d))
    eps = rng.standard_normal(n)
    return Dataset(X, target(X) + cfg.noise * eps)


@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float

    def __float__(self):
        return self.value


def mc_l2_error(predictor, target, d: int, A: float, M_eval: int = 10000,
                seed: int = 0) -> McEstimate:
    """Monte Carlo estimate of int |m_n - m|^2 dP_X for X uniform on [-A, A]^d."""
    if M_eval < 1:
        raise ValueError("need at least one evaluation point")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-A, A, size=(M_eval, d))
    sq = (np.asarray(predictor(X), float) - np.asarray(target(X), float)) ** 2
    se = float(sq.std(ddof=1) / math.sqrt(M_eval)) if M_eval > 1 else float("nan")
    return McEstimate(float(sq.mean()), se)


@dataclass(frozen=True)
class Cell:
    n: int
    rep: int
    seed: int
    l2_error: float | None
    stderr: float | None
    wall_ms: float | None = None
    failure: str | None = None


@dataclass(frozen=True)
class RateReport:
    cells: tuple
    n_values: tuple
    means: tuple
    stderrs: tuple
    slope: float | None
    slope_status: str
    theoretical_exponent: float
    failures: int
    notes: tuple = ()

    def summary(self) -> dict:
        return {
            "n": list(self.n_values),
            "mean_l2_error": list(self.means),
            "stderr": list(self.stderrs),
            "slope": self.slope,
            "slope_status": self.slope_status,
            "theoretical_exponent": self.theoretical_exponent,
            "failed_cells": self.failures,
            "notes": list(self.notes),
        }


def cell_seed(seed: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(n), int(rep)]).generate_state(1)[0])


def K_tilde(cfg: ExperimentConfig, n: int) -> int:
    """Cells per axis of the planted approximation, about n^(1/(2p+d))."""
    return max(1, math.ceil(cfg.K_tilde_coef * n ** (1.0 / (2 * cfg.p + cfg.d))))


def _prepare(cfg: ExperimentConfig, n: int, rep: int, target: taylor.SmoothTarget):
    seed = cell_seed(cfg.seed, n, rep)
    data = generate_data(cfg, n, seed, target)
    Kt = K_tilde(cfg, n)
    schedule = schedule_from_theorem(cfg.p, cfg.C, cfg.d, n, K_n=cfg.K_n_factor * Kt)
    mode = "random"
    if cfg.mode == "planted":
        h = construct.assemble_taylor_net(target, Kt, L=schedule.L, r=schedule.r)
        if len(h.blueprints) > schedule.K_n:
            schedule = replace(schedule, K_n=len(h.blueprints))
        mode = Planted(h.blueprints, cfg.epsilon)
    return seed, data, schedule, mode


def _fit_and_score(cfg, n, rep, target):
    seed, data, schedule, mode = _prepare(cfg, n, rep, target)
    report = fit(data, schedule, mode, seed=seed, step_size=cfg.step_size, steps=cfg.steps)
    err = mc_l2_error(lambda X: predict(report, X), target, cfg.d, cfg.A, cfg.m_eval,
                      seed=seed + 1)
    return seed, report, err


def run_cell(cfg: ExperimentConfig, n: int, rep: int, timing: bool = False,
             target: taylor.SmoothTarget | None = None) -> Cell:
    """One (n, rep) cell: data, optional planting, descent, Monte Carlo error.

    ``wall_ms`` is only filled in with ``timing=True`` so that default output
    is reproducible byte for byte.
    """
    target = cfg.make_target() if target is None else target
    start = time.perf_counter()
    try:
        seed, _, err = _fit_and_score(cfg, n, rep, target)
    except (DivergenceError, construct.ConstructionError, ValueError) as exc:
        return Cell(n, rep, cell_seed(cfg.seed, n, rep), None, None, None,
                    f"{type(exc).__name__}: {exc}")
    wall = (time.perf_counter() - start) * 1e3 if timing else None
    return Cell(n, rep, seed, err.value, err.stderr, wall)


def fit_slope(n_values, means) -> tuple[float | None, str]:
    """OLS slope of ln(mean error) against ln n."""
    n_values = np.asarray(n_values, float)
    means = np.asarray(means, float)
    if n_values.size < 3:
        return None, "insufficient"
    if np.any(~np.isfinite(means)) or np.any(means <= 1e-24):
        return None, "degenerate"
    slope = np.polyfit(np.log(n_values), np.log(means), 1)[0]
    return float(slope), "ok"


def rate_study(cfg: ExperimentConfig, timing: bool = False, progress=None) -> RateReport:
    """Fit the estimator for every (n, rep) cell and fit the log-log error slope.

    Failed cells are kept as missing data and counted in the report.
    """
    target = cfg.make_target()
    cells = []
    for n in cfg.n_grid:
        for rep in range(cfg.reps):
            cell = run_cell(cfg, n, rep, timing, target)
            cells.append(cell)
            if progress is not None:
                progress(cell)
    cells.sort(key=lambda c: (c.n, c.rep))
    ns, means, ses = [], [], []
    for n in cfg.n_grid:
        vals = np.array([c.l2_error for c in cells if c.n == n and c.l2_error is not None])
        if vals.size == 0:
            continue
        ns.append(n)
        means.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan"))
    slope, status = fit_slope(ns, means)
    notes = []
    if cfg.reps < 10:
        notes.append("fewer than 10 repetitions per n; slope is noisy")
    failures = sum(c.failure is not None for c in cells)
    if failures:
        notes.append(f"{failures} failed cells excluded from the means")
    return RateReport(tuple(cells), tuple(ns), tuple(means), tuple(ses), slope, status,
                      -2 * cfg.p / (2 * cfg.p + cfg.d), failures, tuple(notes))


def _fmt(v) -> str:
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def rate_csv(report: RateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in report.cells:
        w.writerow([c.n, c.rep, c.seed, _fmt(c.l2_error), _fmt(c.stderr), _fmt(c.wall_ms)])
    return buf.getvalue()


# Covering numbers ------------------------------------------------------------

def covering_bound(alpha: float, beta: float, A: float, B: float, C: float, L: int, d: int,
                   k: float, eps: float, p_norm: float, c81: float = 1.0, c82: float = 1.0,
                   c83: float = 1.0) -> float:
    """Natural log of (c81 beta^p / eps^p)^(c82 alpha^d B^((L-1)d) A^d (C/eps)^(d/k) + c83)."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    for name, v in (("alpha", alpha), ("beta", beta), ("A", A), ("B", B), ("C", C)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1")
    if L < 1 or d < 1 or k <= 0 or p_norm < 1:
        raise ValueError("need L, d >= 1, k > 0 and p >= 1")
    if min(c81, c82, c83) <= 0:
        raise ValueError("constants must be positive")
    expo = c82 * alpha**d * B ** ((L - 1) * d) * A**d * (C / eps) ** (d / k) + c83
    return expo * math.log(c81 * beta**p_norm / eps**p_norm)


# Verification suites -------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    suite: str
    check: str
    passed: bool
    measured: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"suite": self.suite, "check": self.check, "passed": self.passed,
                "measured": self.measured}


def _grid_points(d: int, A: float, per_axis: int) -> np.ndarray:
    a = np.linspace(-A, A, per_axis, endpoint=False)
    return np.stack(np.meshgrid(*[a] * d, indexing="ij"), axis=-1).reshape(-1, d)


def _ratio_in(r: float, lo: float, hi: float) -> bool:
    return bool(lo <= r <= hi)


def monomial_sup_error(k: int, N: int, A: float, points: int = 2001) -> float:
    net = construct.build_monomial_net(k, N, 1.0)
    x = np.linspace(-A, A, points)
    return float(np.abs(net(x) - x**k).max())


def product_sup_error(d_in: int, N: int, A: float, per_axis: int | None = None,
                      extra: int = 20000, seed: int = 0) -> float:
    """sup |f_mult,d - prod x| over a grid plus uniform samples of [-A, A]^d_in."""
    net = construct.build_mult_d(d_in, N, 1.0, check_condition=False)
    per_axis = per_axis or {1: 2001, 2: 81, 3: 21, 4: 11}.get(d_in, 7)
    g = np.linspace(-A, A, per_axis)
    G = np.stack(np.meshgrid(*[g] * d_in, indexing="ij"), axis=-1).reshape(-1, d_in)
    rng = np.random.default_rng(seed)
    G = np.vstack([G, rng.uniform(-A, A, size=(extra, d_in))])
    return float(np.abs(net(G) - G.prod(axis=1)).max())


def _approx_suite(seed: int) -> list[Verdict]:
    out = []
    rng = np.random.default_rng(seed)
    # piecewise Taylor identity and telescoping
    for f, K in ((taylor.sin_target(2.0, 1, 2.0), 8), (taylor.product_target(2, 2.0), 4),
                 (taylor.polynomial_target({(2,): 1.0, (1,): -0.5, (0,): 0.3}, 1, 3.0), 4)):
        pw = taylor.build_pieces(f, taylor.TaylorGrid(f.A, K, f.d))
        X = rng.uniform(-f.A, f.A, size=(500, f.d))
        cells = pw.grid.cell_of(X)
        direct = np.array([taylor.taylor_at(f, pw.grid.corners[pw.grid.flat(r)], x)
                           for r, x in zip(cells, X)])
        err = float(np.abs(taylor.eval_P(pw, X) - direct).max())
        out.append(Verdict("approx", f"piecewise_taylor_identity[{f.name}]", err <= 1e-9,
                           {"max_abs_error": err}))
    # smoothed surrogate decay, d = 1
    f = taylor.sin_target(2.0, 1, 2.0)
    G = _grid_points(1, f.A, 1000)
    e = []
    for K in (8, 16):
        pw = taylor.build_pieces(f, taylor.TaylorGrid(f.A, K, 1))
        e.append(float(np.abs(taylor.eval_P(pw, G) - taylor.eval_Pbar(pw, G)).max()))
    r = e[1] / e[0]
    out.append(Verdict("approx", "smoothed_surrogate_decay[sin]", _ratio_in(r, 2**-2 / 2, 2 * 2**-2),
                       {"sup_8": e[0], "sup_16": e[1], "ratio": r}))
    # monomial networks
    for k in (1, 2, 3):
        for N in (4, 6):
            e1, e2 = monomial_sup_error(k, N, 0.1), monomial_sup_error(k, N, 0.2)
            ok = _ratio_in(e2 / e1, 2**N / 4, 4 * 2**N) and construct.build_monomial_net(
                k, N).moment_residual() <= construct.MOMENT_TOL
            out.append(Verdict("approx", f"monomial_scaling[k={k},N={N}]", ok,
                               {"sup_0.1": e1, "sup_0.2": e2, "ratio": e2 / e1}))
    # product networks: error is O(A^N), i.e. err / A^N does not grow as A shrinks
    for d_in in (2, 3, 4):
        N = 5
        errs = {A: product_sup_error(d_in, N, A, seed=seed) for A in (0.2, 0.1, 0.05)}
        c = {A: v / A**N for A, v in errs.items()}
        ok = c[0.1] <= c[0.2] * 1.5 and c[0.05] <= c[0.2] * 1.5
        out.append(Verdict("approx", f"product_order[d_in={d_in},N={N}]", ok,
                           {"sup": {str(a): v for a, v in errs.items()}}))
    # assembled network
    f = taylor.sin_target(2.0, 1, 2.0)
    e = [construct.sup_error(construct.assemble_taylor_net(f, K), f) for K in (4, 8)]
    r = e[1] / e[0]
    out.append(Verdict("approx", "assembled_network_decay[sin]", _ratio_in(r, 1 / 8, 1 / 2),
                       {"sup_4": e[0], "sup_8": e[1], "ratio": r}))
    return out


def random_instance(rng, K: int, L: int, r: int, d: int, n: int, weight_scale: float = 1.0,
                    output_scale: float = 1.0) -> tuple[WeightVector, Dataset]:
    topo = Topology(d, K, L, r)
    v = rng.uniform(-weight_scale, weight_scale, topo.n_weights)
    w = WeightVector(topo, v)
    out = rng.uniform(-output_scale, output_scale, K)
    w = w.with_values(np.concatenate([w.inner.ravel(), out]))
    X = rng.uniform(-1, 1, size=(n, d))
    y = np.sin(2 * X.sum(axis=1)) + 0.1 * rng.standard_normal(n)
    return w, Dataset(X, y)


def projected_descent_instance(seed: int):
    """Seeded projected-descent instance (K=4, L=2, r=3, d=1, n=20) meeting the preconditions.

    The ball radius is min(0.5, C^-1/2) so that C delta^2 <= 1; w* is the end
    point of 300 projected steps and the checked run uses 30 steps.
    """
    rng = np.random.default_rng(seed)
    t = Topology(1, 4, 2, 3)
    w0 = WeightVector(t, rng.uniform(-1, 1, t.n_weights))
    X = rng.uniform(-1, 1, (20, 1))
    data = Dataset(X, np.sin(2 * X[:, 0]) + 0.1 * rng.normal(size=20))
    beta = max(1.0, float(np.abs(data.ys).max()))
    C, _, _ = lipschitz_probe(w0, data, 0.5, samples=16)
    delta = min(0.5, 1 / math.sqrt(C)) if C > 0 else 0.5
    _, _, L = lipschitz_probe(w0, data, delta, samples=16)
    ball = Projection(w0, delta)
    star = run_gd(w0, data, GdConfig(1 / L, 300, ball, beta)).weights
    return w0, star, data, GdConfig(1 / L, 30, ball, beta)


def localisation_instance(seed: int) -> tuple[WeightVector, Dataset]:
    """Seeded instance with random sizes K, L, r <= 4, d <= 3 and n <= 20."""
    rng = np.random.default_rng(seed)
    t = Topology(int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 4)),
                 int(rng.integers(1, 5)))
    w = WeightVector(t, rng.uniform(-1, 1, t.n_weights))
    n = int(rng.integers(5, 21))
    X = rng.uniform(-1, 1, (n, t.d))
    return w, Dataset(X, np.sin(2 * X[:, 0]) + 0.1 * rng.normal(size=n))


def _opt_suite(seed: int) -> list[Verdict]:
    out = []
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok_all = True
    for _ in range(5):
        w, data = random_instance(rng, 2, 2, 3, 2, 5)
        ok, rel = gradient_check(w, data)
        ok_all &= ok
        worst = max(worst, rel)
    out.append(Verdict("opt", "gradient_vs_finite_differences", ok_all, {"worst_rel_error": worst}))
    for i in range(3):
        w0, data = localisation_instance(seed + i)
        v = verify_localisation(w0, data, steps=50)
        out.append(Verdict("opt", f"descent_localisation[{i}]", v.holds,
                           {"max_increase": v.max_increase,
                            "max_drift_excess": v.max_drift_excess, "L_est": v.L_est}))
    for i in range(2):
        w0, star, data, cfg = projected_descent_instance(seed + 100 + i)
        v = verify_linearisation_bound(w0, star, data, cfg)
        out.append(Verdict("opt", f"projected_descent_bound[{i}]", v.holds,
                           {"status": v.status, "lhs": v.lhs, "rhs": v.rhs}))
        trace = run_gd(w0, data, cfg)
        inside = bool(np.all(trace.drifts <= cfg.projection.radius + 1e-12))
        out.append(Verdict("opt", f"projection_stays_in_ball[{i}]", inside,
                           {"max_drift": float(trace.drifts.max()), "radius": cfg.projection.radius}))
    return out


def admissible_weights(rng, K: int = 3, L: int = 2, r: int = 3, d: int = 2,
                       A: float = 2.0, B: float = 1.0, C: float = 1.0) -> WeightVector:
    """Random weights with |input weights| <= A, |hidden| <= B, sum |output| <= C."""
    topo = Topology(d, K, L, r)
    layer0 = rng.uniform(-A, A, size=(K, r, d + 1))
    hidden = rng.uniform(-B, B, size=(K, L - 1, r, r + 1))
    out = rng.uniform(-1, 1, size=K)
    out *= C / max(np.abs(out).sum(), 1e-12)
    return WeightVector.from_blocks(topo, layer0, hidden, out)


def _derivbound_suite(seed: int) -> list[Verdict]:
    out = []
    rng = np.random.default_rng(seed)
    for i in range(10):
        w = admissible_weights(rng, d=1 + i % 2)
        v = verify_derivative_bound(w, a=1.0, grid=41 if w.topology.d == 1 else 21)
        out.append(Verdict("derivbound", f"input_gradient_bound[{i}]", v.holds,
                           {"sample_max": v.sample_max, "certified": v.certified}))
    return out


SUITES = {"approx": _approx_suite, "opt": _opt_suite, "derivbound": _derivbound_suite}


def verify_suite(which: str = "all", seed: int = 0) -> list[Verdict]:
    """Run the named verification suite(s); failures are recorded, not raised."""
    names = list(SUITES) if which == "all" else [which]
    out = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown suite {which!r}")
        try:
            out.extend(SUITES[name](seed))
        except Exception as exc:  # a crash is a failed check, not a harness error
            out.append(Verdict(name, "suite_crashed", False, {"error": repr(exc)}))
    return out


def fit_experiment(cfg: ExperimentConfig, n: int, rep: int = 0):
    """Fit one cell and return (FitReport, Cell) for inspection."""
    seed, report, err = _fit_and_score(cfg, n, rep, cfg.make_target())
    return report, Cell(n, rep, seed, err.value, err.stderr, report.wall_time * 1e3)


__all__ = [
    "CSV_COLUMNS", "Cell", "ExperimentConfig", "McEstimate", "RateReport", "Verdict",
    "covering_bound", "fit_experiment", "fit_slope", "generate_data",
    "make_target", "mc_l2_error", "rate_csv", "rate_study", "run_cell", "verify_suite",
]
