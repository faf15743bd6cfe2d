"""Multivariate Taylor polynomials and the recursive piecewise Taylor polynomial.

The cube [-A, A]^d is split into K^d cells with lower corners u_k.  The pieces
are defined recursively,

    P_0 = T(f)_{q, u_0},     P_k = T(f - sum_{u_l < u_k} P_l)_{q, u_k},

and ``P(x) = sum_k P_k(x) 1[x >= u_k]`` coincides on every cell with the
Taylor polynomial of f at the cell's corner.  ``Pbar`` replaces each
indicator by a product of steep sigmoids.

Polynomials are stored as coefficient vectors over the monomials
(x - center)^alpha, |alpha| <= q, in graded lexicographic order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np

from .network import sigmoid


def degree_for_smoothness(p: float) -> int:
    """Largest integer q with p - q in (0, 1]."""
    if p <= 0:
        raise ValueError("smoothness p must be positive")
    return math.ceil(p) - 1


@lru_cache(maxsize=None)
def multi_indices(d: int, q: int) -> tuple[tuple[int, ...], ...]:
    """All alpha in N_0^d with |alpha| <= q, graded lexicographic order."""
    out = [a for a in itertools.product(range(q + 1), repeat=d) if sum(a) <= q]
    out.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
    return tuple(out)


def monomials(Z: np.ndarray, alphas) -> np.ndarray:
    """Evaluate z^alpha for every alpha; Z has shape (..., d)."""
    A = np.asarray(alphas, dtype=int)  # (m, d)
    return np.prod(Z[..., None, :] ** A, axis=-1)


@dataclass(frozen=True)
class SmoothTarget:
    """A (p, C)-smooth function with partial derivatives up to order q.

    ``func(X)`` and ``partial_fn(alpha, X)`` take arrays of shape (n, d).
    """

    func: Callable[[np.ndarray], np.ndarray]
    partial_fn: Callable[[tuple, np.ndarray], np.ndarray]
    d: int
    p: float
    C: float = 1.0
    A: float = 1.0
    name: str = "f"

    @property
    def q(self) -> int:
        return degree_for_smoothness(self.p)

    @property
    def beta(self) -> float:
        return self.p - self.q

    def _points(self, x) -> tuple[np.ndarray, bool]:
        X = np.asarray(x, float)
        if X.ndim <= 1:
            return X.reshape(1, self.d), True
        return X, False

    def evaluate(self, x):
        X, single = self._points(x)
        out = np.asarray(self.func(X), float).reshape(X.shape[0])
        return float(out[0]) if single else out

    __call__ = evaluate

    def partial(self, alpha, x):
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.d:
            raise ValueError("multi-index length must equal d")
        X, single = self._points(x)
        if sum(alpha) == 0:
            out = np.asarray(self.func(X), float)
        else:
            out = np.asarray(self.partial_fn(alpha, X), float)
        out = np.broadcast_to(out, (X.shape[0],)).astype(float)
        return float(out[0]) if single else out

    @classmethod
    def from_expr(cls, expr: str, d: int, p: float, C: float = 1.0, A: float = 1.0,
                  name: str | None = None) -> "SmoothTarget":
        """Build a target from a sympy expression in x1, ..., xd."""
        import sympy

        syms = sympy.symbols(f"x1:{d + 1}")
        e = sympy.sympify(expr, locals={str(s): s for s in syms})

        @lru_cache(maxsize=None)
        def compiled(alpha):
            de = e
            for s, a in zip(syms, alpha):
                if a:
                    de = sympy.diff(de, s, a)
            return sympy.lambdify(syms, de, "numpy")

        def partial_fn(alpha, X):
            return compiled(tuple(alpha))(*X.T)

        def func(X):
            return compiled((0,) * d)(*X.T)

        return cls(func, partial_fn, d, p, C, A, name or expr)


def taylor_coefficients(f: SmoothTarget, U: np.ndarray, q: int | None = None) -> np.ndarray:
    """Coefficients d^alpha f(u) / alpha! at every row of U, shape (n, m)."""
    q = f.q if q is None else q
    U = np.atleast_2d(np.asarray(U, float))
    alphas = multi_indices(f.d, q)
    cols = [f.partial(a, U) / math.prod(math.factorial(k) for k in a) for a in alphas]
    return np.stack(cols, axis=1)


def taylor_at(f: SmoothTarget, u, x, q: int | None = None):
    """Degree-q Taylor polynomial of f around u, evaluated at x (point or batch)."""
    q = f.q if q is None else q
    u = np.asarray(u, float).reshape(f.d)
    X = np.asarray(x, float)
    single = X.ndim <= 1
    X = X.reshape(-1, f.d)
    c = taylor_coefficients(f, u[None, :], q)[0]
    out = monomials(X - u, multi_indices(f.d, q)) @ c
    return float(out[0]) if single else out


@lru_cache(maxsize=None)
def _recenter_tables(d: int, q: int):
    """Index pairs (alpha, beta <= alpha) with their binomial weights."""
    alphas = multi_indices(d, q)
    pos = {a: i for i, a in enumerate(alphas)}
    src, dst, weight, expo = [], [], [], []
    for a in alphas:
        for b in itertools.product(*(range(k + 1) for k in a)):
            src.append(pos[a])
            dst.append(pos[b])
            weight.append(math.prod(math.comb(x, y) for x, y in zip(a, b)))
            expo.append([x - y for x, y in zip(a, b)])
    m = len(alphas)
    scatter = np.zeros((len(src), m))
    scatter[np.arange(len(src)), dst] = 1.0
    return np.array(src), np.array(weight, float), np.array(expo, int), scatter


def recenter(coeffs: np.ndarray, shifts: np.ndarray, d: int, q: int) -> np.ndarray:
    """Re-expand polynomials around new centres by exact binomial expansion.

    ``coeffs`` (n, m) are coefficients around old centres a_i; ``shifts`` (n, d)
    are b_i - a_i.  Returns coefficients around b_i, since
    (x - a)^alpha = sum_{beta <= alpha} binom(alpha, beta) s^(alpha-beta) (x - b)^beta.
    """
    src, weight, expo, scatter = _recenter_tables(d, q)
    S = np.atleast_2d(np.asarray(shifts, float))
    pw = np.prod(S[:, None, :] ** expo[None, :, :], axis=-1)  # (n, pairs)
    contrib = np.atleast_2d(coeffs)[:, src] * weight * pw
    return contrib @ scatter


@dataclass(frozen=True)
class TaylorGrid:
    A: float
    K: int
    d: int

    def __post_init__(self):
        if self.K < 1 or self.A <= 0:
            raise ValueError("need K >= 1 and A > 0")

    @property
    def delta(self) -> float:
        return 2.0 * self.A / self.K

    @property
    def axis_corners(self) -> np.ndarray:
        return -self.A + np.arange(self.K) * self.delta

    @cached_property
    def indices(self) -> np.ndarray:
        """All cell indices in I = {0..K-1}^d, shape (K^d, d), C order."""
        return np.array(list(itertools.product(range(self.K), repeat=self.d)), dtype=int)

    @cached_property
    def corners(self) -> np.ndarray:
        return -self.A + self.indices * self.delta

    def flat(self, k) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(k, int)), (self.K,) * self.d))

    def cell_of(self, X: np.ndarray) -> np.ndarray:
        """Cell index r with x in [u_r, u_r + delta) (last cell closed at A)."""
        r = np.floor((np.asarray(X, float) + self.A) / self.delta).astype(int)
        return np.clip(r, 0, self.K - 1)


def default_smoothing(K: int) -> float:
    """M = K (ln K)^2, at least 1."""
    return max(1.0, K * math.log(K) ** 2)


@dataclass(frozen=True, eq=False)
class PiecewiseTaylor:
    grid: TaylorGrid
    q: int
    coeffs: np.ndarray = field(repr=False)  # (K^d, m), piece k around u_k
    M: float = 1.0

    @property
    def alphas(self):
        return multi_indices(self.grid.d, self.q)

    @property
    def n_pieces(self) -> int:
        return self.coeffs.shape[0]

    def _points(self, x) -> tuple[np.ndarray, bool]:
        X = np.asarray(x, float)
        single = X.ndim <= 1
        X = X.reshape(-1, self.grid.d)
        tol = 1e-12 * self.grid.A
        if np.any(np.abs(X) > self.grid.A + tol):
            raise ValueError("point outside the domain [-A, A]^d")
        return X, single

    def piece_values(self, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """P_k(x) for every piece and every row of X, shape (n, K^d)."""
        U = self.grid.corners
        out = np.empty((X.shape[0], U.shape[0]))
        for s in range(0, X.shape[0], chunk):
            Z = X[s:s + chunk, None, :] - U[None, :, :]
            out[s:s + chunk] = np.einsum("nkm,km->nk", monomials(Z, self.alphas), self.coeffs)
        return out


def build_pieces(f: SmoothTarget, grid: TaylorGrid, M: float | None = None,
                 q: int | None = None) -> PiecewiseTaylor:
    """Compute every P_k by the recursion over the coordinatewise order.

    Predecessor pieces are re-expanded around u_k exactly (they are
    polynomials of degree <= q, so their degree-q Taylor polynomial is the
    polynomial itself) and subtracted from the Taylor polynomial of f.
    """
    if grid.d != f.d:
        raise ValueError("grid and target dimensions differ")
    q = f.q if q is None else q
    M = default_smoothing(grid.K) if M is None else M
    idx = grid.indices
    U = grid.corners
    T = taylor_coefficients(f, U, q)
    coeffs = np.zeros_like(T)
    # product order visits every predecessor u_l < u_k before u_k
    for k in range(idx.shape[0]):
        pred = np.all(idx[:k] <= idx[k], axis=1)
        if not pred.any():
            coeffs[k] = T[k]
            continue
        l = np.nonzero(pred)[0]
        shifted = recenter(coeffs[l], U[k] - U[l], grid.d, q)
        coeffs[k] = T[k] - shifted.sum(axis=0)
    return PiecewiseTaylor(grid, q, coeffs, M)


def eval_P(pw: PiecewiseTaylor, x):
    """P(x) = sum of the pieces whose corner is coordinatewise <= x."""
    X, single = pw._points(x)
    active = np.all(pw.grid.corners[None, :, :] <= X[:, None, :], axis=2)
    out = np.sum(pw.piece_values(X) * active, axis=1)
    return float(out[0]) if single else out


def indicator_surrogate(pw: PiecewiseTaylor, X: np.ndarray) -> np.ndarray:
    """prod_j sigmoid(M (x_j - u_kj)) for every point and corner, (n, K^d)."""
    Z = X[:, None, :] - pw.grid.corners[None, :, :]
    return np.prod(sigmoid(pw.M * Z), axis=2)


def eval_Pbar(pw: PiecewiseTaylor, x):
    """P_0(x) + sum_{k != 0} P_k(x) prod_j sigmoid(M (x_j - u_kj))."""
    X, single = pw._points(x)
    vals = pw.piece_values(X)
    weights = indicator_surrogate(pw, X)
    weights[:, 0] = 1.0
    out = np.sum(vals * weights, axis=1)
    return float(out[0]) if single else out


def slab_sum(pw: PiecewiseTaylor, r, j: int, x) -> float:
    """Sum of P_k(x) over k <= r with k_j == r_j."""
    r = np.asarray(r, int)
    idx = pw.grid.indices
    sel = np.all(idx <= r, axis=1) & (idx[:, j] == r[j])
    X = np.asarray(x, float).reshape(1, pw.grid.d)
    return float(pw.piece_values(X)[0, sel].sum())


def prefix_sum(pw: PiecewiseTaylor, r, x) -> float:
    """Sum of P_k(x) over k <= r (equals the Taylor polynomial at u_r)."""
    r = np.asarray(r, int)
    sel = np.all(pw.grid.indices <= r, axis=1)
    X = np.asarray(x, float).reshape(1, pw.grid.d)
    return float(pw.piece_values(X)[0, sel].sum())


def evaluate_piece(pw: PiecewiseTaylor, k, x):
    """Single piece P_k at x."""
    kk = pw.grid.flat(k)
    X = np.asarray(x, float).reshape(-1, pw.grid.d)
    Z = X - pw.grid.corners[kk]
    return monomials(Z, pw.alphas) @ pw.coeffs[kk]


# Reference targets used by the tests, demos and experiments.

def sin_target(freq: float = 2.0, d: int = 1, p: float = 2.0, A: float = 1.0) -> SmoothTarget:
    """f(x) = sin(freq * sum_j x_j)."""

    def func(X):
        return np.sin(freq * X.sum(axis=1))

    def partial_fn(alpha, X):
        n = sum(alpha)
        return freq**n * np.sin(freq * X.sum(axis=1) + n * np.pi / 2)

    # order-q partials are Lipschitz with constant freq^(q+1) sqrt(d)
    return SmoothTarget(func, partial_fn, d, p, C=freq ** (degree_for_smoothness(p) + 1) * math.sqrt(d),
                        A=A, name=f"sin({freq:g}x)")


def polynomial_target(terms: dict, d: int, p: float, A: float = 1.0,
                      name: str = "poly") -> SmoothTarget:
    """Polynomial sum_alpha c_alpha x^alpha given as {alpha: c_alpha}."""
    items = [(tuple(a), float(c)) for a, c in terms.items()]

    def partial_fn(beta, X):
        out = np.zeros(X.shape[0])
        for a, c in items:
            if any(b > e for b, e in zip(beta, a)):
                continue
            fac = math.prod(math.perm(e, b) for e, b in zip(a, beta))
            out += c * fac * np.prod(X ** (np.array(a) - np.array(beta)), axis=1)
        return out

    def func(X):
        return partial_fn((0,) * d, X)

    return SmoothTarget(func, partial_fn, d, p, C=1.0, A=A, name=name)


def product_target(d: int = 2, p: float = 2.0, A: float = 1.0) -> SmoothTarget:
    """f(x) = x_1 * ... * x_d."""
    return polynomial_target({(1,) * d: 1.0}, d, p, A, name="prod")


def abs_target(d: int = 1, A: float = 1.0) -> SmoothTarget:
    """f(x) = sum_j |x_j| / d, Lipschitz, so (1, 1)-smooth."""

    def func(X):
        return np.abs(X).sum(axis=1) / d

    def partial_fn(alpha, X):
        raise ValueError("|x| has no derivatives of positive order here")

    return SmoothTarget(func, partial_fn, d, 1.0, C=1.0, A=A, name="abs")
