"""Parallel-subnetwork logistic networks.

A network consists of ``K`` independent fully connected subnetworks of depth
``L`` and width ``r`` whose top neurons are combined linearly::

    f_w(x) = sum_k w_out[k] * f_{k,1}^{(L)}(x)

Every hidden neuron is ``sigmoid(bias + weights . previous_layer)``.  Only the
first neuron of the top layer of each subnetwork feeds the output; the other
top-layer neurons exist as weights but never influence ``f_w``.

Weights live in a single flat vector with the canonical layout

    for each subnet k:
        layer-0 block   r x (d+1)     (column 0 is the bias)
        layer-l blocks  r x (r+1)     for l = 1..L-1
    then the K output weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class Topology:
    d: int
    K: int
    L: int
    r: int

    def __post_init__(self):
        for name in ("d", "K", "L", "r"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"topology field {name} must be >= 1")

    @property
    def subnet_size(self) -> int:
        """Number of inner weights of one subnetwork."""
        return self.r * (self.d + 1) + (self.L - 1) * self.r * (self.r + 1)

    @property
    def n_weights(self) -> int:
        return self.K * (self.subnet_size + 1)

    def index(self, k: int, l: int, i: int, j: int) -> int:
        """Flat position of w_{k,i,j}^{(l)}.

        ``l`` runs over 0..L-1 for inner blocks (``i`` the receiving neuron,
        ``j`` the sending neuron with ``j = 0`` the bias, all zero based
        except that column 0 is the bias).  ``l == L`` addresses the output
        weight of subnet ``k``; ``i`` and ``j`` must then be 0.
        """
        d, K, L, r = self.d, self.K, self.L, self.r
        if not 0 <= k < K:
            raise IndexError("subnet index out of range")
        if l == L:
            if i != 0 or j != 0:
                raise IndexError("output weights only have coordinate (0, 0)")
            return K * self.subnet_size + k
        if not 0 <= l < L or not 0 <= i < r:
            raise IndexError("layer or row index out of range")
        cols = d + 1 if l == 0 else r + 1
        if not 0 <= j < cols:
            raise IndexError("column index out of range")
        base = k * self.subnet_size
        if l == 0:
            return base + i * cols + j
        return base + r * (d + 1) + (l - 1) * r * (r + 1) + i * cols + j

    def coords(self, idx: int) -> tuple[int, int, int, int]:
        """Inverse of :meth:`index`."""
        d, K, L, r = self.d, self.K, self.L, self.r
        S = self.subnet_size
        if not 0 <= idx < self.n_weights:
            raise IndexError("flat index out of range")
        if idx >= K * S:
            return idx - K * S, L, 0, 0
        k, rem = divmod(idx, S)
        if rem < r * (d + 1):
            i, j = divmod(rem, d + 1)
            return k, 0, i, j
        rem -= r * (d + 1)
        lm1, rem = divmod(rem, r * (r + 1))
        i, j = divmod(rem, r + 1)
        return k, lm1 + 1, i, j


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Flat weight vector of a :class:`Topology` with structured views.

    The views returned by :attr:`layer0`, :attr:`hidden` and :attr:`output`
    are read-only; use :meth:`copy_values` and the constructor to derive new
    vectors.
    """

    topology: Topology
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.topology.n_weights,):
            raise ValueError(
                f"expected {self.topology.n_weights} weights, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, topology: Topology) -> "WeightVector":
        return cls(topology, np.zeros(topology.n_weights))

    @classmethod
    def from_blocks(cls, topology: Topology, layer0, hidden, output) -> "WeightVector":
        t = topology
        layer0 = np.asarray(layer0, float).reshape(t.K, t.r, t.d + 1)
        hidden = np.asarray(hidden, float).reshape(t.K, t.L - 1, t.r, t.r + 1)
        inner = np.concatenate(
            [layer0.reshape(t.K, -1), hidden.reshape(t.K, -1)], axis=1)
        return cls(t, np.concatenate([inner.ravel(), np.asarray(output, float).ravel()]))

    # structured read-only views
    @property
    def inner(self) -> np.ndarray:
        t = self.topology
        return self.values[: t.K * t.subnet_size].reshape(t.K, t.subnet_size)

    @property
    def layer0(self) -> np.ndarray:
        t = self.topology
        return self.inner[:, : t.r * (t.d + 1)].reshape(t.K, t.r, t.d + 1)

    @property
    def hidden(self) -> np.ndarray:
        """Blocks l = 1..L-1 stacked as (K, L-1, r, r+1)."""
        t = self.topology
        return self.inner[:, t.r * (t.d + 1):].reshape(t.K, t.L - 1, t.r, t.r + 1)

    @property
    def output(self) -> np.ndarray:
        t = self.topology
        return self.values[t.K * t.subnet_size:]

    def copy_values(self) -> np.ndarray:
        return self.values.copy()

    def with_values(self, values) -> "WeightVector":
        return WeightVector(self.topology, values)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def distance(self, other: "WeightVector") -> float:
        return float(np.linalg.norm(self.values - other.values))

    def __sub__(self, other: "WeightVector") -> np.ndarray:
        return self.values - other.values

    def __len__(self):
        return self.values.size


def sigmoid(x):
    """Logistic squasher 1 / (1 + exp(-x)), stable for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SigmaDerivTable:
    """Derivatives of the sigmoid as polynomials in s = sigmoid(x).

    ``coeffs[m][i]`` is the coefficient of s**i in sigma^{(m)}, kept as exact
    fractions.  Uses d/dx P(s) = P'(s) * s * (1 - s).
    """

    order: int
    coeffs: tuple

    @classmethod
    def build(cls, order: int) -> "SigmaDerivTable":
        polys = [[Fraction(0), Fraction(1)]]
        for _ in range(order):
            p = polys[-1]
            dp = [i * p[i] for i in range(1, len(p))]
            # multiply by s - s^2
            nxt = [Fraction(0)] * (len(dp) + 2)
            for i, c in enumerate(dp):
                nxt[i + 1] += c
                nxt[i + 2] -= c
            polys.append(nxt)
        return cls(order, tuple(tuple(p) for p in polys))

    def float_coeffs(self, m: int) -> np.ndarray:
        return np.array([float(c) for c in self.coeffs[m]])

    def __call__(self, m: int, x):
        if not 0 <= m <= self.order:
            raise ValueError(f"derivative order {m} exceeds table order {self.order}")
        s = sigmoid(x)
        c = self.float_coeffs(m)
        return np.polynomial.polynomial.polyval(s, c)


@lru_cache(maxsize=None)
def _table(order: int) -> SigmaDerivTable:
    return SigmaDerivTable.build(order)


def sigma_deriv(m: int, x, table: SigmaDerivTable | None = None):
    """m-th derivative of the sigmoid at x (m = 0 gives sigmoid itself)."""
    if table is None:
        if m < 0:
            raise ValueError("derivative order must be non-negative")
        table = _table(max(m, 1))
    return table(m, x)


def _as_batch(w: WeightVector, x) -> tuple[np.ndarray, bool]:
    """Points are 1-d arrays of length d (or scalars when d == 1); batches are (n, d)."""
    X = np.asarray(x, dtype=float)
    d = w.topology.d
    if X.ndim == 0 and d == 1:
        return X.reshape(1, 1), True
    if X.ndim == 1 and X.size == d:
        return X.reshape(1, d), True
    if X.ndim == 2 and X.shape[1] == d:
        return X, False
    raise ValueError(f"input dimension mismatch: expected d={d}, got shape {X.shape}")


def forward_units(w: WeightVector, x) -> np.ndarray:
    """All hidden activations.

    Returns an array of shape (K, L, r) for a single point or (n, K, L, r)
    for a batch of shape (n, d).
    """
    X, single = _as_batch(w, x)
    t = w.topology
    units = np.empty((X.shape[0], t.K, t.L, t.r))
    W0 = w.layer0
    h = sigmoid(np.einsum("nd,krd->nkr", X, W0[:, :, 1:]) + W0[:, :, 0])
    units[:, :, 0] = h
    H = w.hidden
    for l in range(t.L - 1):
        Wl = H[:, l]
        h = sigmoid(np.einsum("nkj,kij->nki", h, Wl[:, :, 1:]) + Wl[:, :, 0])
        units[:, :, l + 1] = h
    return units[0] if single else units


def _forward_cache(w: WeightVector, X: np.ndarray) -> list[np.ndarray]:
    """Activations needed for f_w: full layers below the top, neuron 0 on top."""
    t = w.topology
    W0 = w.layer0
    H = w.hidden
    acts = []
    if t.L == 1:
        top = sigmoid(X @ W0[:, 0, 1:].T + W0[:, 0, 0])
        return [top]
    h = sigmoid(np.einsum("nd,krd->nkr", X, W0[:, :, 1:]) + W0[:, :, 0])
    acts.append(h)
    for l in range(t.L - 2):
        Wl = H[:, l]
        h = sigmoid(np.einsum("nkj,kij->nki", h, Wl[:, :, 1:]) + Wl[:, :, 0])
        acts.append(h)
    Wt = H[:, t.L - 2, 0]  # (K, r+1): only the first top neuron matters
    top = sigmoid(np.einsum("nkj,kj->nk", h, Wt[:, 1:]) + Wt[:, 0])
    acts.append(top)
    return acts


def forward(w: WeightVector, x):
    """Evaluate f_w at a point (returns float) or a batch (n, d)."""
    X, single = _as_batch(w, x)
    top = _forward_cache(w, X)[-1]
    out = top @ w.output
    return float(out[0]) if single else out


def subnet_outputs(w: WeightVector, x) -> np.ndarray:
    """Top neuron f_{k,1}^{(L)} of every subnet, shape (n, K)."""
    X, _ = _as_batch(w, x)
    return _forward_cache(w, X)[-1]


def weight_gradients(w: WeightVector, X: np.ndarray, g: np.ndarray,
                     per_example: bool = False) -> np.ndarray:
    """Backpropagate output sensitivities ``g`` (one per row of X).

    Returns sum_s g[s] * d f_w(X_s) / d w as a flat vector, or the
    per-example matrix (n, n_weights) when ``per_example`` is set.
    """
    t = w.topology
    X = np.asarray(X, float)
    n = X.shape[0]
    g = np.asarray(g, float).reshape(n)
    acts = _forward_cache(w, X)
    top = acts[-1]
    out = w.output
    # buffers shaped like the canonical blocks, with a leading example axis
    shape_n = (n,) if per_example else ()
    g0 = np.zeros(shape_n + (t.K, t.r, t.d + 1))
    gh = np.zeros(shape_n + (t.K, t.L - 1, t.r, t.r + 1))

    def acc(spec_pe, spec_sum, *ops):
        return np.einsum(spec_pe if per_example else spec_sum, *ops)

    grad_out = acc("nk,n->nk", "nk,n->k", top, g)
    # sensitivity of the top neuron pre-activation
    delta = g[:, None] * out[None, :] * top * (1.0 - top)  # (n, K)
    if t.L == 1:
        g0[..., 0, 0] = acc("nk->nk", "nk->k", delta)
        g0[..., 0, 1:] = acc("nk,nd->nkd", "nk,nd->kd", delta, X)
    else:
        H = w.hidden
        below = acts[-2]
        gh[..., t.L - 2, 0, 0] = acc("nk->nk", "nk->k", delta)
        gh[..., t.L - 2, 0, 1:] = acc("nk,nkj->nkj", "nk,nkj->kj", delta, below)
        # back to the layer below the top: (n, K, r)
        delta = delta[:, :, None] * H[None, :, t.L - 2, 0, 1:] * below * (1.0 - below)
        for l in range(t.L - 2, 0, -1):
            below = acts[l - 1]
            gh[..., l - 1, :, 0] = acc("nki->nki", "nki->ki", delta)
            gh[..., l - 1, :, 1:] = acc("nki,nkj->nkij", "nki,nkj->kij", delta, below)
            delta = np.einsum("nki,kij->nkj", delta, H[:, l - 1, :, 1:]) * below * (1.0 - below)
        g0[..., 0] = acc("nki->nki", "nki->ki", delta)
        g0[..., 1:] = acc("nki,nd->nkid", "nki,nd->kid", delta, X)

    if per_example:
        inner = np.concatenate([g0.reshape(n, t.K, -1), gh.reshape(n, t.K, -1)], axis=2)
        return np.concatenate([inner.reshape(n, -1), grad_out], axis=1)
    inner = np.concatenate([g0.reshape(t.K, -1), gh.reshape(t.K, -1)], axis=1)
    return np.concatenate([inner.ravel(), grad_out])


def network_jacobian(w: WeightVector, x) -> np.ndarray:
    """d f_w(x) / d w for each input row, shape (n, n_weights)."""
    X, _ = _as_batch(w, x)
    return weight_gradients(w, X, np.ones(X.shape[0]), per_example=True)


def input_gradient(w: WeightVector, x) -> np.ndarray:
    """Gradient of f_w with respect to the input, shape (n, d)."""
    X, _ = _as_batch(w, x)
    t = w.topology
    acts = _forward_cache(w, X)
    top = acts[-1]
    delta = w.output[None, :] * top * (1.0 - top)  # (n, K)
    W0 = w.layer0
    if t.L == 1:
        return delta @ W0[:, 0, 1:]
    H = w.hidden
    below = acts[-2]
    delta = delta[:, :, None] * H[None, :, t.L - 2, 0, 1:] * below * (1.0 - below)
    for l in range(t.L - 2, 0, -1):
        below = acts[l - 1]
        delta = np.einsum("nki,kij->nkj", delta, H[:, l - 1, :, 1:]) * below * (1.0 - below)
    return np.einsum("nki,kid->nd", delta, W0[:, :, 1:])
