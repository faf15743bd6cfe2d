"""Empirical risk, backpropagated gradients and (projected) gradient descent.

Also holds the empirical checks of the optimisation results: Lipschitz
probing of the network and risk gradients, the linearisation inequality for
projected descent, the localisation bounds of plain descent with step size
1/L, and the inductive bound on input gradients.
"""
from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .network import WeightVector, forward, input_gradient, network_jacobian, weight_gradients

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when gradient descent produces a non-finite risk."""


@dataclass(frozen=True, eq=False)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, float)
        if xs.ndim == 1:
            xs = xs[:, None]
        ys = np.asarray(self.ys, float).ravel()
        if xs.shape[0] < 1:
            raise ValueError("dataset must contain at least one example")
        if xs.shape[0] != ys.shape[0]:
            raise ValueError("xs and ys must have the same number of rows")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.ys.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]


@dataclass(frozen=True)
class Projection:
    center: WeightVector
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("projection radius must be non-negative")


@dataclass(frozen=True)
class GdConfig:
    step_size: float
    steps: int
    projection: Projection | None = None
    truncation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.step_size >= 0:
            raise ValueError("step size must be non-negative")
        if self.steps < 0:
            raise ValueError("number of steps must be non-negative")
        if self.truncation <= 0:
            raise ValueError("truncation level must be positive")


@dataclass(frozen=True, eq=False)
class DescentTrace:
    risks: np.ndarray
    drifts: np.ndarray
    weights: WeightVector
    initial: WeightVector = field(repr=False)

    def __len__(self):
        return self.risks.size


def _check(w: WeightVector, data: Dataset):
    if data.d != w.topology.d:
        raise ValueError(f"data dimension {data.d} does not match network d={w.topology.d}")


def empirical_risk(w: WeightVector, data: Dataset) -> float:
    """Mean squared residual (1/n) sum |Y_i - f_w(X_i)|^2."""
    _check(w, data)
    res = data.ys - forward(w, data.xs)
    return float(np.mean(res * res))


# Test hook: index of a gradient coordinate to negate (fault injection).
_FAULT_INDEX: int | None = None


@contextlib.contextmanager
def gradient_fault(index: int):
    """Negate one partial derivative inside this block.

    Used to confirm that the verification suites catch a broken gradient.
    """
    global _FAULT_INDEX
    prev, _FAULT_INDEX = _FAULT_INDEX, index
    try:
        yield
    finally:
        _FAULT_INDEX = prev


def gradient(w: WeightVector, data: Dataset) -> np.ndarray:
    """Gradient of the empirical L2 risk with respect to the flat weights."""
    _check(w, data)
    f = forward(w, data.xs)
    g = weight_gradients(w, data.xs, 2.0 * (f - data.ys) / data.n)
    if _FAULT_INDEX is not None:
        g[_FAULT_INDEX] = -g[_FAULT_INDEX]
    return g


def project_ball(w: WeightVector, center: WeightVector, radius: float) -> WeightVector:
    """Euclidean projection of ``w`` onto the closed ball around ``center``."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    diff = w.values - center.values
    dist = np.linalg.norm(diff)
    if dist <= radius:
        return w
    return w.with_values(center.values + (radius / dist) * diff)


def truncate(z, beta: float):
    """Clamp to [-beta, beta]."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    out = np.clip(z, -beta, beta)
    return float(out) if np.ndim(out) == 0 else out


def run_gd(w0: WeightVector, data: Dataset, cfg: GdConfig) -> DescentTrace:
    """Full-batch gradient descent, optionally projected onto a ball.

    Records the risk and the distance to ``w0`` after every step (index 0 is
    the starting point).  Raises :class:`DivergenceError` as soon as the risk
    stops being finite.
    """
    _check(w0, data)
    proj = cfg.projection
    w = w0
    if proj is not None:
        w = project_ball(w, proj.center, proj.radius)
    risks = np.empty(cfg.steps + 1)
    drifts = np.empty(cfg.steps + 1)
    risks[0] = empirical_risk(w, data)
    drifts[0] = w.distance(w0)
    for t in range(1, cfg.steps + 1):
        v = w.values - cfg.step_size * gradient(w, data)
        w = w.with_values(v)
        if proj is not None:
            w = project_ball(w, proj.center, proj.radius)
        risks[t] = empirical_risk(w, data)
        drifts[t] = w.distance(w0)
        if not np.isfinite(risks[t]):
            raise DivergenceError(
                f"risk became non-finite at step {t} (step size {cfg.step_size:g} too large?)")
    return DescentTrace(risks, drifts, w, w0)


@dataclass(frozen=True)
class LipschitzEstimates:
    C: float
    D: float
    L: float

    def __iter__(self):
        return iter((self.C, self.D, self.L))


def _ball_point(rng, center: np.ndarray, radius: float) -> np.ndarray:
    u = rng.standard_normal(center.size)
    u /= np.linalg.norm(u)
    return center + radius * rng.uniform() ** (1.0 / center.size) * u


def _top_curvature_direction(w: WeightVector, data: Dataset, eps: float,
                             iters: int = 30) -> np.ndarray:
    # power iteration with finite-difference Hessian-vector products
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(w.values.size)
    v /= np.linalg.norm(v)
    g0 = gradient(w, data)
    for _ in range(iters):
        hv = (gradient(w.with_values(w.values + eps * v), data) - g0) / eps
        nrm = np.linalg.norm(hv)
        if nrm == 0:
            break
        v = hv / nrm
    return v


def lipschitz_probe(center: WeightVector, data: Dataset, radius: float,
                    samples: int = 32, seed: int = 0, curvature_points: int = 4,
                    network_ratio: bool = True) -> LipschitzEstimates:
    """Empirical Lipschitz and gradient-norm constants on a weight ball.

    Returns ``(C, D, L)``:

    * ``C`` - max over sampled pairs and data points of
      ||grad_w f_{w1}(x) - grad_w f_{w2}(x)|| / ||w1 - w2||,
    * ``D`` - max sampled ||grad F_n(w)||,
    * ``L`` - max sampled ||grad F_n(w1) - grad F_n(w2)|| / ||w1 - w2||.

    Pairs are drawn uniformly from the ball.  Uniform pairs only see average
    curvature, so at the centre and at the first ``curvature_points`` sampled
    points a short pair along the dominant curvature direction (power
    iteration) is added as well.  Larger ``samples`` extends the same
    pseudo-random sequence, so the estimates are non-decreasing in
    ``samples``.  ``network_ratio=False`` skips the per-example Jacobians and
    reports ``C = nan``.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    c = center.values
    scale = max(1.0, float(np.linalg.norm(c)))
    D = float(np.linalg.norm(gradient(center, data)))
    # below this the pair differences drown in rounding error
    if radius <= 1e-9 * scale:
        return LipschitzEstimates(0.0, D, 0.0)

    def ratios(a: np.ndarray, b: np.ndarray):
        wa, wb = center.with_values(a), center.with_values(b)
        dist = np.linalg.norm(a - b)
        ga, gb = gradient(wa, data), gradient(wb, data)
        cr = float("nan")
        if network_ratio:
            Ja, Jb = network_jacobian(wa, data.xs), network_jacobian(wb, data.xs)
            cr = float(np.max(np.linalg.norm(Ja - Jb, axis=1)) / dist)
        lr = float(np.linalg.norm(ga - gb) / dist)
        return cr, lr, float(np.linalg.norm(ga)), float(np.linalg.norm(gb))

    C = 0.0 if network_ratio else float("nan")
    Lc = 0.0
    step = min(radius, 1e-4 * scale)

    def curvature_pair(a: np.ndarray):
        nonlocal C, Lc, D
        v = _top_curvature_direction(center.with_values(a), data, eps=1e-6 * scale)
        cr, lr, ga, gb = ratios(a, a + step * v)
        C, Lc, D = max(C, cr), max(Lc, lr), max(D, ga, gb)

    curvature_pair(c)
    rng = np.random.default_rng(seed)
    done = 0
    while done < samples:
        a = _ball_point(rng, c, radius)
        b = _ball_point(rng, c, radius)
        if np.linalg.norm(a - b) == 0:
            continue
        cr, lr, ga, gb = ratios(a, b)
        C, Lc, D = max(C, cr), max(Lc, lr), max(D, ga, gb)
        if done < curvature_points and np.linalg.norm(a - c) + step <= radius:
            curvature_pair(a)
        done += 1
    return LipschitzEstimates(C, D, Lc)


@dataclass(frozen=True)
class LinearisationVerdict:
    """Outcome of the linearisation inequality check for projected descent."""

    status: str
    lhs: float = float("nan")
    rhs: float = float("nan")
    terms: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.status == "ok" and self.lhs <= self.rhs + 1e-9


def verify_linearisation_bound(w0: WeightVector, w_star: WeightVector, data: Dataset,
                  cfg: GdConfig, samples: int = 16, seed: int = 0) -> LinearisationVerdict:
    """Run projected descent and compare both sides of the linearisation bound.

        min_{t < t_n} F_n(w_t) <= F_n(w*) + ||w* - w0||^2 / (2 lambda t_n)
                                  + 12 beta C delta^2 + lambda D^2 / 2

    ``cfg.projection`` must be the ball of radius ``delta`` around ``w0``; C and
    D are estimated on that ball with :func:`lipschitz_probe`.  Violated
    preconditions are reported through ``status`` rather than raised.
    """
    proj = cfg.projection
    if proj is None:
        return LinearisationVerdict("precondition: projection ball required")
    if proj.center.distance(w0) > 0:
        return LinearisationVerdict("precondition: ball must be centred at w0")
    beta, delta, lam, steps = cfg.truncation, proj.radius, cfg.step_size, cfg.steps
    if steps < 1:
        return LinearisationVerdict("precondition: need at least one step")
    if beta < 1:
        return LinearisationVerdict("precondition: beta_n >= 1")
    if np.max(np.abs(data.ys)) > beta:
        return LinearisationVerdict("precondition: |Y_i| <= beta_n")
    if w_star.distance(w0) > delta * (1 + 1e-12):
        return LinearisationVerdict("precondition: w* outside the ball")
    if np.max(np.abs(forward(w_star, data.xs))) > beta:
        return LinearisationVerdict("precondition: |f_w*(X_i)| <= beta_n")
    C, D, _ = lipschitz_probe(w0, data, delta, samples=samples, seed=seed)
    if C * delta**2 > 1:
        return LinearisationVerdict("precondition: C_n delta_n^2 <= 1",
                             terms={"C": C, "delta": delta})
    trace = run_gd(w0, data, cfg)
    lhs = float(np.min(trace.risks[:steps]))
    terms = {
        "risk_star": empirical_risk(w_star, data),
        "distance": w_star.distance(w0) ** 2 / (2 * lam * steps) if lam > 0 else (
            0.0 if w_star.distance(w0) == 0 else float("inf")),
        "linearisation": 12 * beta * C * delta**2,
        "step": 0.5 * lam * D**2,
        "C": C,
        "D": D,
    }
    rhs = terms["risk_star"] + terms["distance"] + terms["linearisation"] + terms["step"]
    return LinearisationVerdict("ok", lhs, rhs, terms)


@dataclass(frozen=True)
class LocalisationVerdict:
    monotone: bool
    drift_ok: bool
    L_est: float
    max_increase: float
    max_drift_excess: float

    @property
    def holds(self) -> bool:
        return self.monotone and self.drift_ok


def verify_localisation(w0: WeightVector, data: Dataset, steps: int,
                        samples: int = 16, seed: int = 0,
                        radius: float | None = None) -> LocalisationVerdict:
    """Plain descent with step 1/L_est: monotone risk and bounded drift.

    Checks F(w_k) <= F(w_{k-1}) and
    ||w_k - w_0|| <= sqrt(2 k (F(w_0) - F(w_k)) / L_est) + 1e-9 for all k.
    L_est comes from :func:`lipschitz_probe` on the ball of radius
    sqrt(8 t max(F(w_0), 1) / L) around ``w0``, with L from a first probe near
    ``w0``; this is the region on which the bound needs the Lipschitz property.
    """
    F0 = empirical_risk(w0, data)
    if radius is None:
        _, _, L1 = lipschitz_probe(w0, data, 1e-3, samples=samples, seed=seed,
                                   network_ratio=False)
        radius = np.sqrt(8 * steps * max(F0, 1.0) / max(L1, 1e-12))
    _, _, L_est = lipschitz_probe(w0, data, radius, samples=samples, seed=seed,
                                  network_ratio=False)
    if L_est <= 0:
        raise ValueError("degenerate instance: zero curvature estimate")
    trace = run_gd(w0, data, GdConfig(1.0 / L_est, steps))
    inc = np.diff(trace.risks)
    # allow for rounding of the risk evaluation itself
    tol = 1e-13 * max(1.0, F0)
    k = np.arange(1, steps + 1)
    bound = np.sqrt(np.maximum(2 * k * (F0 - trace.risks[1:]) / L_est, 0.0)) + 1e-9
    excess = trace.drifts[1:] - bound
    return LocalisationVerdict(
        monotone=bool(np.all(inc <= tol)),
        drift_ok=bool(np.all(excess <= 0)),
        L_est=L_est,
        max_increase=float(inc.max(initial=-np.inf)),
        max_drift_excess=float(excess.max(initial=-np.inf)),
    )


@dataclass(frozen=True)
class DerivativeBoundVerdict:
    sample_max: float
    certified: float
    closed_form: float

    @property
    def holds(self) -> bool:
        return self.sample_max <= self.certified


def certified_input_gradient_bound(w: WeightVector) -> np.ndarray:
    """Layerwise bound on sup_x |d f_w / d x^(s)| for every input coordinate s.

    A layer-1 unit gets |w^{(0)}_{i,s}| / 4; each further layer multiplies the
    absolute row weights into the bounds of the layer below, again times
    sup|sigma'| = 1/4.  Returns one bound per input coordinate.
    """
    t = w.topology
    b = 0.25 * np.abs(w.layer0[:, :, 1:])  # (K, r, d)
    H = w.hidden
    for l in range(t.L - 1):
        b = 0.25 * np.einsum("kij,kjs->kis", np.abs(H[:, l, :, 1:]), b)
    return np.abs(w.output) @ b[:, 0, :]


def verify_derivative_bound(w: WeightVector, a: float, grid: int = 41,
                            h: float = 1e-5) -> DerivativeBoundVerdict:
    """Compare sampled input gradients with the certified inductive bound.

    Samples central finite differences on a tensor grid over [-a, a]^d and
    reports the largest absolute partial.  ``closed_form`` is
    C * B^{L-1} * A * r^{L-1} / 4^L with C, B, A the weight magnitudes of the
    output, hidden and input layers (the first-order derivative bound).
    """
    t = w.topology
    axes = [np.linspace(-a, a, grid)] * t.d
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, t.d)
    fd = np.empty_like(X)
    for s in range(t.d):
        e = np.zeros(t.d)
        e[s] = h
        fd[:, s] = (forward(w, X + e) - forward(w, X - e)) / (2 * h)
    sample_max = float(np.max(np.abs(fd)))
    certified = float(np.max(certified_input_gradient_bound(w)))
    C = float(np.sum(np.abs(w.output)))
    B = float(np.max(np.abs(w.hidden[:, :, :, 1:]), initial=1.0))
    A = float(np.max(np.abs(w.layer0[:, :, 1:])))
    closed = C * max(B, 1.0) ** (t.L - 1) * A * t.r ** (t.L - 1) / 4.0**t.L
    return DerivativeBoundVerdict(sample_max, certified, closed)


def sampled_input_gradient_max(w: WeightVector, X: np.ndarray) -> float:
    """Largest absolute analytic input partial over the rows of X."""
    return float(np.max(np.abs(input_gradient(w, X))))


def _risk_extended(values: np.ndarray, topology, X: np.ndarray, y: np.ndarray) -> np.longdouble:
    # independent subnet-by-subnet evaluation in extended precision
    t = topology
    S = t.subnet_size
    f = np.zeros(X.shape[0], dtype=np.longdouble)
    with np.errstate(over="ignore"):
        for k in range(t.K):
            blk = values[k * S:(k + 1) * S]
            h = X
            pos = 0
            for l in range(t.L):
                cols = (t.d if l == 0 else t.r) + 1
                W = blk[pos:pos + t.r * cols].reshape(t.r, cols)
                pos += t.r * cols
                if l == t.L - 1:
                    W = W[:1]
                h = 1 / (1 + np.exp(-(W[:, 0] + h @ W[:, 1:].T)))
            f += values[t.K * S + k] * h[:, 0]
    r = y - f
    return np.mean(r * r)


def finite_difference_gradient(w: WeightVector, data: Dataset, h: float = 1e-5) -> np.ndarray:
    """Central differences of the empirical risk, evaluated in extended precision.

    Extended precision keeps the rounding error of the difference quotient far
    below the 1e-5 relative tolerance even for partials near 1e-8.
    """
    t = w.topology
    v = w.values.astype(np.longdouble)
    X = data.xs.astype(np.longdouble)
    y = data.ys.astype(np.longdouble)
    out = np.empty(v.size)
    for i in range(v.size):
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        out[i] = float((_risk_extended(vp, t, X, y) - _risk_extended(vm, t, X, y)) / (2 * h))
    return out


def gradient_check(w: WeightVector, data: Dataset, h: float = 1e-5, rtol: float = 1e-5,
                   atol: float = 1e-8) -> tuple[bool, float]:
    """Compare :func:`gradient` with central differences.

    Coordinates with |analytic| >= atol must agree to relative error rtol, the
    rest to absolute error atol.  Returns (ok, worst relative error).
    """
    g = gradient(w, data)
    fd = finite_difference_gradient(w, data, h)
    big = np.abs(g) >= atol
    rel = np.abs(g - fd)[big] / np.abs(g[big])
    worst = float(rel.max(initial=0.0))
    ok = worst <= rtol and bool(np.all(np.abs(g - fd)[~big] <= atol))
    return ok, worst
