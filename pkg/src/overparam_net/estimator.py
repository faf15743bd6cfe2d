"""The over-parametrised network regression estimator.

Hyperparameters follow the rate theorem's formulas, initialisation draws the
inner weights uniformly and sets the output layer to zero, training is plain
full-batch gradient descent and predictions are truncated at beta_n.  The
planted mode writes a known good set of subnets into the initial weights,
which is how the convergence proof argues (random initialisation lands near
such weights with some probability); at feasible sizes that probability is
essentially zero, so planting is the only way to exercise that regime.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .construct import SubnetBlueprint
from .network import Topology, WeightVector, forward
from .taylor import degree_for_smoothness
from .training import Dataset, DescentTrace, GdConfig, lipschitz_probe, run_gd, truncate


@dataclass(frozen=True)
class Constants:
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 10.0 / math.log(10.0)
    c5: float = 1.0
    c6: float = 1.0

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c5", "c6"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TheoremSchedule:
    p: float
    C: float
    d: int
    n: int
    K_n: int
    constants: Constants = Constants()
    notes: tuple = ()

    @property
    def q(self) -> int:
        return degree_for_smoothness(self.p)

    @property
    def smoothness_fraction(self) -> float:
        return self.p - self.q

    @property
    def L(self) -> int:
        return math.ceil(math.log2(self.q + self.d)) + 1

    @property
    def r(self) -> int:
        return 2 * math.ceil((2 * self.p + self.d) ** 2)

    @property
    def tau(self) -> float:
        return 1.0 / (2 * self.p + self.d)

    @property
    def beta_n(self) -> float:
        return self.constants.c3 * math.log(self.n)

    @property
    def lambda_n(self) -> float:
        return self.constants.c5 / (self.n * self.K_n**3)

    @property
    def t_n(self) -> int:
        return max(1, math.ceil(self.constants.c6 * self.K_n**3 / self.beta_n))

    @property
    def init_range(self) -> float:
        """Half-width c2 ln(n) n^tau of the input-layer initialisation."""
        return self.constants.c2 * math.log(self.n) * self.n**self.tau

    @property
    def required_K_exponent(self) -> int:
        """Exponent e in the theorem's requirement K_n >= n^e (up to constants)."""
        L, r, d = self.L, self.r, self.d
        return 4 * r * (r + 1) * (L - 1) + r * (4 * d + 6) + 6

    @property
    def topology(self) -> Topology:
        return Topology(self.d, self.K_n, self.L, self.r)

    def as_dict(self) -> dict:
        keys = ("p", "C", "d", "n", "K_n", "q", "L", "r", "tau", "beta_n", "lambda_n",
                "t_n", "init_range", "required_K_exponent")
        out = {k: getattr(self, k) for k in keys}
        out["constants"] = vars(self.constants).copy()
        out["notes"] = list(self.notes)
        return out


def schedule_from_theorem(p: float, C: float, d: int, n: int, K_n: int,
                          constants: Constants | None = None) -> TheoremSchedule:
    """Apply the theorem's hyperparameter formulas (natural logarithms)."""
    if n < 2:
        raise ValueError("need n >= 2")
    if d < 1 or K_n < 1:
        raise ValueError("need d >= 1 and K_n >= 1")
    notes = ()
    if p < 0.5:
        msg = f"p={p} < 1/2: the rate guarantee does not apply"
        warnings.warn(msg, stacklevel=2)
        notes = (msg,)
    return TheoremSchedule(p, C, d, n, K_n, constants or Constants(), notes)


def init_weights(topology: Topology, schedule: TheoremSchedule, n: int | None = None,
                 seed: int = 0) -> WeightVector:
    """Output layer 0, hidden layers U[-c1, c1], input layer U[-c2 ln n n^tau, +]."""
    n = schedule.n if n is None else n
    rng = np.random.default_rng(seed)
    t = topology
    a = schedule.constants.c2 * math.log(n) * n**schedule.tau
    layer0 = rng.uniform(-a, a, size=(t.K, t.r, t.d + 1))
    c1 = schedule.constants.c1
    hidden = rng.uniform(-c1, c1, size=(t.K, t.L - 1, t.r, t.r + 1))
    return WeightVector.from_blocks(t, layer0, hidden, np.zeros(t.K))


def plant_oracle(w0: WeightVector, blueprints, epsilon: float, seed: int = 0) -> WeightVector:
    """Overwrite the inner weights of the first subnets with blueprints plus U[-eps, eps] noise.

    Output weights are left untouched, so an initial network stays zero.
    """
    blueprints = list(blueprints)
    t = w0.topology
    if len(blueprints) > t.K:
        raise ValueError(f"{len(blueprints)} blueprints exceed capacity K={t.K}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    inner = w0.inner.copy()
    rng = np.random.default_rng(seed)
    for k, bp in enumerate(blueprints):
        if (bp.d, bp.L, bp.r) != (t.d, t.L, t.r):
            raise ValueError("blueprint shape does not match the topology")
        v = bp.inner_values()
        if epsilon > 0:
            v = v + rng.uniform(-epsilon, epsilon, size=v.size)
        inner[k] = v
    values = np.concatenate([inner.ravel(), w0.output])
    return w0.with_values(values)


@dataclass(frozen=True)
class Planted:
    blueprints: tuple
    epsilon: float = 0.0


@dataclass(frozen=True, eq=False)
class FitReport:
    schedule: TheoremSchedule
    trace: DescentTrace
    wall_time: float
    beta_n: float
    step_size: float
    steps: int
    mode: str
    seed: int
    initial: WeightVector = field(repr=False)

    @property
    def weights(self) -> WeightVector:
        return self.trace.weights

    def __call__(self, x):
        return predict(self, x)


def probe_step_size(w: WeightVector, data: Dataset, radius: float = 1e-2,
                    samples: int = 8, seed: int = 0) -> float:
    """1 / L_est with L_est the empirical gradient Lipschitz constant near ``w``."""
    _, _, L = lipschitz_probe(w, data, radius, samples=samples, seed=seed, network_ratio=False)
    if not L > 0:
        raise ValueError("zero curvature estimate; pass an explicit step size")
    return 1.0 / L


def fit(data: Dataset, schedule: TheoremSchedule, mode="random", seed: int = 0,
        step_size: float | str | None = None, steps: int | None = None,
        topology: Topology | None = None) -> FitReport:
    """Initialise (and optionally plant), then run plain gradient descent.

    ``step_size`` and ``steps`` default to lambda_n and t_n.  ``step_size="probe"``
    uses 1/L_est from :func:`probe_step_size` at the initial weights.
    ``"probe-min"`` in planted mode takes the smaller of that and 1/L_est at the
    point where the output weights equal the planted ones.  ``mode`` is
    ``"random"`` or a :class:`Planted` instance.
    """
    if data.d != schedule.d:
        raise ValueError("data dimension does not match the schedule")
    topology = schedule.topology if topology is None else topology
    start = time.perf_counter()
    w0 = init_weights(topology, schedule, seed=seed)
    mode_name = "random"
    if isinstance(mode, Planted):
        w0 = plant_oracle(w0, mode.blueprints, mode.epsilon, seed=seed + 1)
        mode_name = "planted"
    elif mode != "random":
        raise ValueError(f"unknown mode {mode!r}")
    steps = schedule.t_n if steps is None else int(steps)
    if step_size is None:
        lam = schedule.lambda_n
    elif step_size in ("probe", "probe-min"):
        lam = probe_step_size(w0, data, seed=seed)
        if step_size == "probe-min" and isinstance(mode, Planted):
            # curvature grows once the output weights reach the planted solution
            target = w0.with_values(np.concatenate(
                [w0.inner.ravel(), _planted_outputs(topology, mode.blueprints)]))
            lam = min(lam, probe_step_size(target, data, seed=seed))
    else:
        lam = float(step_size)
    trace = run_gd(w0, data, GdConfig(lam, steps, truncation=schedule.beta_n, seed=seed))
    return FitReport(schedule, trace, time.perf_counter() - start, schedule.beta_n, lam,
                     steps, mode_name, seed, w0)


def _planted_outputs(topology: Topology, blueprints) -> np.ndarray:
    out = np.zeros(topology.K)
    for k, bp in enumerate(blueprints):
        out[k] = bp.output
    return out


def predict(report: FitReport, x):
    """Truncated network output T_{beta_n} f_w(x)."""
    return truncate(forward(report.weights, x), report.beta_n)
