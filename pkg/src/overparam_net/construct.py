"""Explicit sigmoid networks that approximate monomials, products and P-bar.

All constructions are compiled into plain layered networks (``LayeredNet``)
whose hidden units are logistic neurons.  A layered network with several
top-layer neurons is split into single-output subnets (``SubnetBlueprint``)
that fit the parallel estimator layout, one per top neuron with a nonzero
readout coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .network import Topology, WeightVector, forward, sigma_deriv, sigmoid
from .taylor import (PiecewiseTaylor, SmoothTarget, TaylorGrid, build_pieces,
                     default_smoothing, multi_indices)

MOMENT_TOL = 1e-9
MIN_BETA_GAP = 1e-6


class ConstructionError(ValueError):
    """Raised when a requested network cannot be built as specified."""


def default_betas(N: int) -> np.ndarray:
    return np.arange(1, N + 1) / N


def solve_moment_system(k: int, N: int, betas=None) -> np.ndarray:
    """alphas with sum_j alpha_j beta_j^l = [l == k] for l < N."""
    if N <= k:
        raise ConstructionError(f"need N > k, got N={N}, k={k}")
    betas = default_betas(N) if betas is None else np.asarray(betas, float)
    if betas.shape != (N,):
        raise ConstructionError("need exactly N betas")
    gaps = np.abs(betas[:, None] - betas[None, :])
    np.fill_diagonal(gaps, np.inf)
    if gaps.min() < MIN_BETA_GAP:
        raise ConstructionError("betas must be pairwise distinct")
    V = np.vander(betas, N, increasing=True).T  # V[l, j] = beta_j^l
    e = np.zeros(N)
    e[k] = 1.0
    alphas = np.linalg.solve(V, e)
    resid = np.abs(V @ alphas - e).max()
    if not resid <= MOMENT_TOL:
        raise ConstructionError(
            f"moment system ill-conditioned: residual {resid:.3e}, cond {np.linalg.cond(V):.3e}")
    return alphas


@lru_cache(maxsize=None)
def choose_t_sigma(k: int) -> float:
    """Grid point of [-4, 4] (step 0.01) maximising |sigma^(k)|."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ts = np.arange(-400, 401) / 100.0
    return float(ts[np.argmax(np.abs(sigma_deriv(k, ts)))])


@dataclass(frozen=True, eq=False)
class MonomialNetSpec:
    """One hidden layer of N neurons approximating x^k near 0."""

    k: int
    N: int
    t_sigma: float
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    scale: float
    A: float = 1.0

    @property
    def readout(self) -> np.ndarray:
        return self.scale * self.alphas

    def moment_residual(self) -> float:
        V = np.vander(self.betas, self.N, increasing=True).T
        e = np.zeros(self.N)
        e[self.k] = 1.0
        return float(np.abs(V @ self.alphas - e).max())

    def __call__(self, x):
        x = np.asarray(x, float)
        return sigmoid(np.multiply.outer(x, self.betas) + self.t_sigma) @ self.readout


@lru_cache(maxsize=None)
def _monomial(k: int, N: int) -> MonomialNetSpec:
    t = choose_t_sigma(k)
    betas = default_betas(N)
    alphas = solve_moment_system(k, N, betas)
    betas.flags.writeable = False
    alphas.flags.writeable = False
    return MonomialNetSpec(k, N, t, betas, alphas, math.factorial(k) / float(sigma_deriv(k, t)))


def build_monomial_net(k: int, N: int, A: float = 1.0) -> MonomialNetSpec:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < A <= 1:
        raise ValueError("input half-width must lie in (0, 1]")
    m = _monomial(k, N)
    return MonomialNetSpec(m.k, m.N, m.t_sigma, m.betas, m.alphas, m.scale, A)


# Layered networks -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LayeredNet:
    """Feed-forward sigmoid network with an affine readout of its top layer.

    ``layers[l]`` has shape (width_l, width_{l-1} + 1) with the bias in column 0.
    """

    d: int
    layers: tuple
    readout: np.ndarray
    offset: float = 0.0

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(W.shape[0] for W in self.layers)

    def top_units(self, X: np.ndarray) -> np.ndarray:
        h = np.asarray(X, float).reshape(-1, self.d)
        for W in self.layers:
            h = sigmoid(W[:, 0] + h @ W[:, 1:].T)
        return h

    def __call__(self, X):
        if self.depth == 0:
            return np.full(np.asarray(X).reshape(-1, self.d).shape[0], self.offset)
        return self.top_units(X) @ self.readout + self.offset


@dataclass(frozen=True)
class _Signal:
    """Affine function const + sum coef[i] * unit_i of the current layer."""

    const: float
    coef: dict

    def __add__(self, other):
        c = dict(self.coef)
        for i, v in other.coef.items():
            c[i] = c.get(i, 0.0) + v
        return _Signal(self.const + other.const, c)

    def __mul__(self, s: float):
        return _Signal(self.const * s, {i: v * s for i, v in self.coef.items()})

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + other * -1.0


class _Builder:
    """Appends layers of logistic neurons whose inputs are signals of the previous layer."""

    def __init__(self, d: int):
        self.d = d
        self.layers: list[np.ndarray] = []
        self.width = d
        self.rows: list[tuple[float, dict]] = []

    def input(self, j: int) -> _Signal:
        return _Signal(0.0, {j: 1.0})

    def neuron(self, sig: _Signal) -> _Signal:
        self.rows.append((sig.const, dict(sig.coef)))
        return _Signal(0.0, {len(self.rows) - 1: 1.0})

    def monomial(self, net: MonomialNetSpec, sig: _Signal) -> _Signal:
        out = _Signal(0.0, {})
        for b, c in zip(net.betas, net.readout):
            out = out + self.neuron(sig * b + _Signal(net.t_sigma, {})) * c
        return out

    def identity(self, sig: _Signal, N: int) -> _Signal:
        return self.monomial(_monomial(1, N), sig)

    def mult(self, a: _Signal, b: _Signal, N: int) -> _Signal:
        sq = _monomial(2, N)
        return (self.monomial(sq, a + b) - self.monomial(sq, a - b)) * 0.25

    def commit(self) -> None:
        W = np.zeros((len(self.rows), self.width + 1))
        for i, (c, coef) in enumerate(self.rows):
            W[i, 0] = c
            for j, v in coef.items():
                W[i, 1 + j] = v
        self.layers.append(W)
        self.width = len(self.rows)
        self.rows = []

    def finish(self, sig: _Signal) -> LayeredNet:
        readout = np.zeros(self.width)
        for i, v in sig.coef.items():
            readout[i] = v
        return LayeredNet(self.d, tuple(self.layers), readout, sig.const)


def _product_tree(b: _Builder, sigs: list[_Signal], N: int) -> _Signal:
    """Pairwise multiply signals layer by layer; an unpaired signal goes through f_id."""
    while len(sigs) > 1:
        nxt = [b.mult(sigs[i], sigs[i + 1], N) for i in range(0, len(sigs) - 1, 2)]
        if len(sigs) % 2:
            nxt.append(b.identity(sigs[-1], N))
        b.commit()
        sigs = nxt
    return sigs[0]


def _pad_identity(b: _Builder, sig: _Signal, depth: int, N: int) -> _Signal:
    while len(b.layers) < depth:
        sig = b.identity(sig, N)
        b.commit()
    return sig


def tree_depth(n_factors: int) -> int:
    return math.ceil(math.log2(n_factors)) if n_factors > 1 else 0


@dataclass(frozen=True, eq=False)
class MultNet:
    """Product network on [-A, A]^d_in built from a binary tree of multipliers."""

    d_in: int
    N: int
    A: float
    net: LayeredNet

    @property
    def depth(self) -> int:
        return self.net.depth

    @property
    def widths(self) -> tuple[int, ...]:
        return self.net.widths

    def __call__(self, *args):
        if len(args) == 1:
            X = np.asarray(args[0], float)
        else:
            X = np.stack(np.broadcast_arrays(*[np.asarray(a, float) for a in args]), axis=-1)
        shape = X.shape[:-1]
        return self.net(X.reshape(-1, self.d_in)).reshape(shape)


def build_mult2(N: int, A: float = 1.0) -> MultNet:
    """f_mult(x, y) = (f_sq(x + y) - f_sq(x - y)) / 4 with 2N hidden neurons."""
    if N <= 2:
        raise ConstructionError("multiplier needs N > 2")
    if not 0 < A <= 1:
        raise ValueError("input half-width must lie in (0, 1]")
    b = _Builder(2)
    out = b.mult(b.input(0), b.input(1), N)
    b.commit()
    return MultNet(2, N, A, b.finish(out))


@lru_cache(maxsize=None)
def mult2_constant(N: int) -> float:
    """Empirical c with sup |f_mult(x, y) - xy| <= c A^N, maximised over A in {0.05, 0.1, 0.2}."""
    m = build_mult2(N, 1.0)
    c = 0.0
    for A in (0.05, 0.1, 0.2):
        g = np.linspace(-A, A, 41)
        x, y = np.meshgrid(g, g)
        c = max(c, float(np.abs(m(x, y) - x * y).max()) / A**N)
    return c


def mult_condition(d_in: int, N: int, A: float) -> float:
    """Left side c * 4^(d N) * A^(N-1) of the product tree's admissibility condition."""
    return mult2_constant(N) * 4.0 ** (d_in * N) * A ** (N - 1)


def build_mult_d(d_in: int, N: int, A: float = 1.0, check_condition: bool = True) -> MultNet:
    """Binary multiplier tree of depth ceil(log2 d_in); d_in = 1 gives f_id."""
    if d_in < 1:
        raise ValueError("d_in must be >= 1")
    if N <= 2:
        raise ConstructionError("multiplier needs N > 2")
    if not 0 < A <= 1:
        raise ValueError("input half-width must lie in (0, 1]")
    if check_condition:
        v = mult_condition(d_in, N, A)
        if v > 1:
            raise ConstructionError(f"admissibility condition violated: c*4^(dN)*A^(N-1) = {v:.3e} > 1")
    b = _Builder(d_in)
    sigs = [b.input(j) for j in range(d_in)]
    if d_in == 1:
        out = b.identity(sigs[0], N)
        b.commit()
    else:
        out = _product_tree(b, sigs, N)
    return MultNet(d_in, N, A, b.finish(out))


# Blueprints and embedding ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class SubnetBlueprint:
    """Weights of one subnet in the estimator layout plus its output weight."""

    layer0: np.ndarray  # (r, d+1)
    hidden: np.ndarray  # (L-1, r, r+1)
    output: float

    @property
    def d(self) -> int:
        return self.layer0.shape[1] - 1

    @property
    def r(self) -> int:
        return self.layer0.shape[0]

    @property
    def L(self) -> int:
        return self.hidden.shape[0] + 1

    @property
    def topology(self) -> Topology:
        return Topology(self.d, 1, self.L, self.r)

    def inner_values(self) -> np.ndarray:
        return np.concatenate([self.layer0.ravel(), self.hidden.ravel()])

    def weight_vector(self) -> WeightVector:
        return WeightVector.from_blocks(self.topology, self.layer0[None], self.hidden[None],
                                        [self.output])

    def __call__(self, x):
        return forward(self.weight_vector(), x)


def split_into_blueprints(net: LayeredNet, L: int, r: int, scale: float = 1.0,
                          tol: float = 0.0) -> list[SubnetBlueprint]:
    """One blueprint per top neuron with nonzero readout; the offset becomes a constant subnet.

    Lower layers are copied into every blueprint.  In each blueprint the chosen
    top neuron sits at position 0 and all other top neurons are dead.
    """
    d = net.d
    if net.depth > L:
        raise ConstructionError(f"network needs depth {net.depth} > L={L}")
    if net.depth and max(net.widths) > r:
        raise ConstructionError(f"network needs width {max(net.widths)} > r={r}")
    out: list[SubnetBlueprint] = []
    if net.depth:
        if net.depth != L:
            raise ConstructionError("pad the network to depth L before splitting")
        blocks = []
        for l, W in enumerate(net.layers):
            prev = d if l == 0 else r
            B = np.zeros((r, prev + 1))
            B[:W.shape[0], :W.shape[1]] = W
            blocks.append(B)
        for i, c in enumerate(net.readout):
            if abs(c) <= tol:
                continue
            tops = blocks[-1]
            top = np.zeros_like(tops)
            top[0] = tops[i]
            layers = blocks[:-1] + [top]
            hidden = np.array(layers[1:]) if L > 1 else np.zeros((0, r, r + 1))
            out.append(SubnetBlueprint(layers[0], hidden, float(c * scale)))
    if net.offset != 0.0:
        out.append(constant_blueprint(net.offset * scale, d, L, r))
    return out


def constant_blueprint(c: float, d: int, L: int, r: int) -> SubnetBlueprint:
    """All-zero subnet; its top neuron is sigmoid(0) = 1/2, so output 2c gives c."""
    return SubnetBlueprint(np.zeros((r, d + 1)), np.zeros((L - 1, r, r + 1)), 2.0 * c)


def embed_blueprints(blueprints, topology: Topology, slots=None) -> WeightVector:
    """Write blueprints into the given subnet slots of a zero weight vector."""
    blueprints = list(blueprints)
    slots = list(range(len(blueprints))) if slots is None else [int(s) for s in slots]
    if len(slots) != len(blueprints):
        raise ValueError("need one slot per blueprint")
    if len(set(slots)) != len(slots):
        raise ValueError("duplicate slot")
    if any(not 0 <= s < topology.K for s in slots):
        raise ValueError("slot out of range")
    layer0 = np.zeros((topology.K, topology.r, topology.d + 1))
    hidden = np.zeros((topology.K, topology.L - 1, topology.r, topology.r + 1))
    output = np.zeros(topology.K)
    for s, bp in zip(slots, blueprints):
        if (bp.d, bp.L, bp.r) != (topology.d, topology.L, topology.r):
            raise ValueError(f"blueprint shape (d={bp.d}, L={bp.L}, r={bp.r}) does not fit {topology}")
        layer0[s] = bp.layer0
        hidden[s] = bp.hidden
        output[s] = bp.output
    return WeightVector.from_blocks(topology, layer0, hidden, output)


# Assembly of P-bar ----------------------------------------------------------

def default_N(p: float, d: int) -> int:
    """ceil(2p + 2d), capped at 8 for the conditioning of the moment system."""
    return min(8, math.ceil(2 * p + 2 * d))


def default_depth(q: int, d: int) -> int:
    return math.ceil(math.log2(q + d)) + 1 if q + d > 1 else 1


def _summand_net(d: int, alpha, u: np.ndarray, with_indicator: bool, L: int, N: int,
                 M: float, g: float) -> tuple[LayeredNet, int]:
    """Network for g^m * prod_j (x_j - u_j)^alpha_j * prod_j sigmoid(M (x_j - u_j)).

    Returns the layered net and the number m of factors.  The first layer holds
    f_id(g (x_j - u_j)) for every linear factor and sigmoid(M (x_j - u_j)) for
    every indicator factor (read out with weight g); then the product tree,
    then identity layers up to depth L.
    """
    b = _Builder(d)
    factors = []
    for j, a in enumerate(alpha):
        for _ in range(a):
            factors.append(b.identity((b.input(j) + _Signal(-u[j], {})) * g, N))
    if with_indicator:
        for j in range(d):
            factors.append(b.neuron((b.input(j) + _Signal(-u[j], {})) * M) * g)
    b.commit()
    sig = _product_tree(b, factors, N)
    sig = _pad_identity(b, sig, L, N)
    return b.finish(sig), len(factors)


@dataclass(frozen=True, eq=False)
class AssembledNet:
    """A sum of subnet blueprints approximating a smooth target on [-A, A)^d."""

    blueprints: tuple
    pieces: PiecewiseTaylor
    L: int
    r: int
    N: int
    input_scale: float
    summand_count: int
    required_width: int
    required_depth: int

    @property
    def d(self) -> int:
        return self.pieces.grid.d

    @property
    def topology(self) -> Topology:
        return Topology(self.d, max(1, len(self.blueprints)), self.L, self.r)

    def weight_vector(self) -> WeightVector:
        return embed_blueprints(self.blueprints, self.topology)

    def __call__(self, x):
        return forward(self.weight_vector(), x)


def required_shape(d: int, q: int, N: int) -> tuple[int, int]:
    """(depth, width) needed to compile any summand of P-bar."""
    m = q + d
    width = N * q + d
    n = m
    while n > 1:
        width = max(width, 2 * N * (n // 2) + N * (n % 2))
        n = (n + 1) // 2
    depth = 1 + tree_depth(m)
    return depth, max(width, N)


def assemble_taylor_net(f: SmoothTarget, K: int, L: int | None = None, r: int | None = None,
                        N: int | None = None, M: float | None = None,
                        input_scale: float = 1.0, min_K: int = 1,
                        coef_tol: float = 0.0) -> AssembledNet:
    """Compile P-bar of f on a K^d grid into subnet blueprints.

    Each summand c_{k,alpha} (x - u_k)^alpha prod_j sigmoid(M (x_j - u_kj)) is a
    product of at most q + d factors; with g = input_scale / K every factor is
    scaled by g before the multiplier tree and the output is rescaled by g^-m.
    Monomials of P_0 carry no indicator factors; the constant of P_0 is a
    constant subnet.
    """
    if K < min_K:
        raise ConstructionError(f"K={K} below the configured minimum {min_K}")
    d, q = f.d, f.q
    N = default_N(f.p, d) if N is None else N
    if N <= max(2, q):
        raise ConstructionError(f"N={N} too small")
    need_depth, need_width = required_shape(d, q, N)
    L = max(need_depth, default_depth(q, d)) if L is None else L
    r = need_width if r is None else r
    if L < need_depth or r < need_width:
        raise ConstructionError(
            f"network too small: need L >= {need_depth} and r >= {need_width}, got L={L}, r={r}")
    grid = TaylorGrid(f.A, K, d)
    pw = build_pieces(f, grid, M=default_smoothing(K) if M is None else M)
    g = input_scale / K
    alphas = multi_indices(d, q)
    blueprints: list[SubnetBlueprint] = []
    summands = 0
    for kk, u in enumerate(grid.corners):
        for ai, alpha in enumerate(alphas):
            c = pw.coeffs[kk, ai]
            if abs(c) <= coef_tol:
                continue
            summands += 1
            first = kk == 0
            if first and sum(alpha) == 0:
                blueprints.append(constant_blueprint(c, d, L, r))
                continue
            net, m = _summand_net(d, alpha, u, not first, L, N, pw.M, g)
            blueprints.extend(split_into_blueprints(net, L, r, scale=c / g**m))
    return AssembledNet(tuple(blueprints), pw, L, r, N, input_scale, summands, need_width, need_depth)


def sup_error(h, f: SmoothTarget, points: int = 2001) -> float:
    """max |f - h| over a regular grid of [-A, A)^d (about ``points`` points)."""
    per_axis = max(2, int(round(points ** (1.0 / f.d))))
    a = np.linspace(-f.A, f.A, per_axis, endpoint=False)
    G = np.stack(np.meshgrid(*[a] * f.d, indexing="ij"), axis=-1).reshape(-1, f.d)
    return float(np.max(np.abs(f(G) - h(G))))
