"""Truncated Wiener chaos for the discretized parabolic Anderson model.

Discretization
--------------
Kernel values are *densities*.  With W_i = W(1_{cell_i}) the n-th chaos is

    I_n(f) = sum_i f(i_1, ..., i_n) :W_{i_1} ... W_{i_n}:

and no cell volumes appear.  The chaos coefficient of u(t, x) is stored as
a time-ordered chain

    g(i_1, ..., i_n) = top(i_n) P[i_n, i_{n-1}] ... P[i_2, i_1],

nonzero only for strictly increasing time cells, with ``top(i)`` the heat
kernel from cell ``i`` to (t, x) and ``P`` the heat kernel between cells
(cell-averaged in space, evaluated at time-cell centers).  Summing g over
ordered tuples equals summing the symmetric f = sym(g) over all tuples,
so g realizes n! f on ordered cells.

Two evaluation paths exist.  When the temporal factor of the covariance
is diagonal (white in time) the Wick corrections vanish on time-ordered
tuples and everything reduces to recursions along the chain.  Otherwise
the Wick product is expanded over partial pairings and each pattern is
contracted with :func:`numpy.einsum`; that path is meant for small grids.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz

from .errors import ArgumentError, ResourceError
from .gaussian_field import KroneckerCovariance, NoiseSample
from .grid import Grid
from .kernels import erf_diff, heat_kernel_cell_average

MAX_ORDER = 12
_LETTERS = "abcdefghijklmnopqrstuvwxyABCDEFGHIJKLMNOPQRSTUVWXY"


# --------------------------------------------------------------------------
# propagators and chain kernels
# --------------------------------------------------------------------------


def _avg_offsets_1d(gap, h, n):
    """k[m] = average over the cell at offset m h of p_gap, m = 0..n-1."""
    m = np.arange(n, dtype=float)
    s = np.sqrt(2.0 * gap)
    return 0.5 * erf_diff((m - 0.5) * h / s, (m + 0.5) * h / s) / h


def heat_matrix(gap: float, grid: Grid) -> np.ndarray:
    """Spatial heat matrix K[y', y] = average over cell y of p_gap(y'_center - .)."""
    K1 = toeplitz(_avg_offsets_1d(gap, grid.dx, grid.nx))
    return K1 if grid.d == 1 else np.kron(K1, K1)


@dataclass(frozen=True, eq=False)
class Propagator:
    """Inter-cell heat propagators, one spatial block per time lag.

    ``blocks[l]`` is the (n_space, n_space) matrix for a lag of ``l``
    time cells (``blocks[0]`` is zero: equal time cells never chain).
    Blocks are symmetric.
    """

    grid: Grid
    blocks: np.ndarray = field(repr=False)

    def dense(self) -> np.ndarray:
        g = self.grid
        ns = g.n_space
        P = np.zeros((g.M, g.M))
        for a in range(g.nt):
            for b in range(a):
                P[a * ns:(a + 1) * ns, b * ns:(b + 1) * ns] = self.blocks[a - b]
        return P

    def forward(self, v: np.ndarray) -> np.ndarray:
        """out[..., tau', :] = sum_{tau < tau'} P_{tau' - tau} v[..., tau, :]."""
        nt = v.shape[-2]
        out = np.zeros_like(v)
        for lag in range(1, nt):
            out[..., lag:, :] += v[..., : nt - lag, :] @ self.blocks[lag]
        return out

    def backward(self, u: np.ndarray) -> np.ndarray:
        """out[..., tau, :] = sum_{tau' > tau} P_{tau' - tau}^T u[..., tau', :]."""
        nt = u.shape[-2]
        out = np.zeros_like(u)
        for lag in range(1, nt):
            out[..., : nt - lag, :] += u[..., lag:, :] @ self.blocks[lag]
        return out


@lru_cache(maxsize=16)
def propagator(grid: Grid) -> Propagator:
    blocks = np.zeros((grid.nt, grid.n_space, grid.n_space))
    for lag in range(1, grid.nt):
        blocks[lag] = heat_matrix(lag * grid.dt, grid)
    blocks.setflags(write=False)
    return Propagator(grid, blocks)


@dataclass(frozen=True, eq=False)
class ChainKernel:
    """Chaos coefficient of order ``n`` in chain form.

    ``top`` has shape (nt, n_space); it is zero on time cells whose center
    is not before ``t``.
    """

    n: int
    top: np.ndarray = field(repr=False)
    prop: Propagator = field(repr=False)
    t: float = 0.0
    x: object = None

    @property
    def grid(self) -> Grid:
        return self.prop.grid

    def with_order(self, n: int) -> "ChainKernel":
        return ChainKernel(n, self.top, self.prop, self.t, self.x)

    def value(self, cells) -> float:
        """g at a tuple of flat cell indices (zero unless strictly time-ordered)."""
        cells = list(cells)
        if len(cells) != self.n:
            raise ArgumentError("tuple length must equal the kernel order")
        ns = self.grid.n_space
        tau = [c // ns for c in cells]
        if any(b <= a for a, b in zip(tau, tau[1:])):
            return 0.0
        val = self.top.ravel()[cells[-1]]
        for a, b in zip(cells, cells[1:]):
            val *= self.prop.blocks[b // ns - a // ns][b % ns, a % ns]
        return float(val)

    def dense(self, symmetric: bool = False) -> np.ndarray:
        """Dense order-n tensor of g (or of f = sym(g) when ``symmetric``)."""
        M = self.grid.M
        if M**self.n > 10**7:
            raise ResourceError("dense tensor too large")
        P = self.prop.dense()
        T = self.top.ravel().copy()
        for _ in range(self.n - 1):
            T = T[..., None] * P
        T = T.transpose(tuple(range(self.n))[::-1]) if self.n > 1 else T
        return symmetrize(T) if symmetric else T


def top_vector(t, x, grid: Grid) -> np.ndarray:
    """top[tau, y] = cell average over y of p_{t - s_tau}(x - .), zero when s_tau >= t."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (grid.d,):
        raise ArgumentError(f"x must be a point in R^{grid.d}")
    top = np.zeros((grid.nt, grid.n_space))
    e = grid.space_edges
    for tau, s in enumerate(grid.time_centers):
        if s >= t:
            break
        gap = t - s
        avg = [heat_kernel_cell_average(gap, xi, e[:-1], e[1:]) for xi in x]
        top[tau] = avg[0] if grid.d == 1 else np.outer(avg[0], avg[1]).ravel()
    return top


def averaged_top(t, R, grid: Grid) -> np.ndarray:
    """Top vector of F_R(t) = int_{B_R} (u(t, x) - 1) dx, by the cell rule in x."""
    if not 0 < t <= grid.T + 1e-12:
        raise ArgumentError("t must lie in (0, T]")
    mask = grid.ball_mask(R).astype(float) * grid.space_volume
    top = np.zeros((grid.nt, grid.n_space))
    for tau, s in enumerate(grid.time_centers):
        if s >= t:
            break
        top[tau] = mask @ heat_matrix(t - s, grid)
    return top


def discretize_kernel(t, x, n, grid: Grid) -> ChainKernel:
    """Chain form of the chaos coefficient of u(t, x) of order ``n``."""
    if n < 1:
        raise ArgumentError("order must be >= 1")
    if not 0 < t <= grid.T + 1e-12:
        raise ArgumentError("t must lie in (0, T]")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.abs(xa) > grid.L):
        raise ArgumentError("x must lie inside the grid")
    return ChainKernel(n, top_vector(t, x, grid), propagator(grid), t, x)


def averaged_kernel(t, R, n, grid: Grid) -> ChainKernel:
    """Chain form of the coefficient of F_R(t) of order ``n``."""
    return ChainKernel(n, averaged_top(t, R, grid), propagator(grid), t, ("ball", R))


# --------------------------------------------------------------------------
# Wick combinatorics
# --------------------------------------------------------------------------


def _partial_pairings(slots):
    slots = tuple(slots)
    if not slots:
        yield ()
        return
    first, rest = slots[0], slots[1:]
    for p in _partial_pairings(rest):  # first stays a singleton
        yield p
    for j, other in enumerate(rest):
        remaining = rest[:j] + rest[j + 1:]
        for p in _partial_pairings(remaining):
            yield ((first, other),) + p


@dataclass(frozen=True)
class WickPlan:
    """All partial pairings of ``n`` slots with their signs (-1)^k."""

    n: int
    pairings: tuple
    signs: tuple

    @classmethod
    def build(cls, n: int, slots=None) -> "WickPlan":
        slots = tuple(range(n)) if slots is None else tuple(slots)
        pairings = tuple(_partial_pairings(slots))
        return cls(n, pairings, tuple((-1) ** len(p) for p in pairings))

    @staticmethod
    def expected_count(n: int) -> int:
        return sum(math.comb(n, 2 * k) * _double_factorial(2 * k - 1) for k in range(n // 2 + 1))

    def singletons(self, pairing):
        paired = {s for pr in pairing for s in pr}
        return tuple(s for s in range(self.n) if s not in paired)


def _double_factorial(m):
    return 1 if m <= 0 else m * _double_factorial(m - 2)


@lru_cache(maxsize=64)
def _plan(n):
    return WickPlan.build(n)


# --------------------------------------------------------------------------
# noise and covariance plumbing
# --------------------------------------------------------------------------


def _noise_array(sample, grid=None) -> tuple[np.ndarray, bool]:
    """Return (W of shape (B, M), was_single)."""
    if isinstance(sample, NoiseSample):
        return sample.values[None, :], True
    W = np.asarray(sample, dtype=float)
    if W.ndim == 1:
        return W[None, :], True
    if W.ndim == 3:
        return W.reshape(W.shape[0], -1), False
    return W, False


def _dense_cov(cov) -> np.ndarray:
    return cov.dense() if isinstance(cov, KroneckerCovariance) else np.asarray(cov, dtype=float)


def _is_white(cov) -> bool:
    return isinstance(cov, KroneckerCovariance) and cov.temporal_is_diagonal


def _check_grid(kernel: ChainKernel, W: np.ndarray):
    if W.shape[-1] != kernel.grid.M:
        raise ArgumentError(f"noise has {W.shape[-1]} cells, kernel grid has {kernel.grid.M}")


# --------------------------------------------------------------------------
# multiple integrals
# --------------------------------------------------------------------------


def _chain_terms(n, letters):
    """einsum operand specs for top and the n-1 propagators of a chain."""
    specs = [letters[n - 1]]
    for k in range(n - 1):
        specs.append(letters[k + 1] + letters[k])
    return specs


def _wick_contract(chain_ops, chain_specs, n, letters, C, W, plugged=(), slots=None):
    """Sum over partial pairings of the non-plugged slots of the chain network.

    Returns an array with leading batch axis followed by one axis per
    plugged slot (in the given order).
    """
    free = [s for s in range(n) if s not in plugged]
    plan = WickPlan.build(len(free), free)
    B = W.shape[0]
    out_idx = "".join(letters[s] for s in plugged)
    total = None
    for pairing, sign in zip(plan.pairings, plan.signs):
        paired = {s for pr in pairing for s in pr}
        singles = [s for s in free if s not in paired]
        ops, specs = list(chain_ops), list(chain_specs)
        for a, b in pairing:
            ops.append(C)
            specs.append(letters[a] + letters[b])
        for s in singles:
            ops.append(W)
            specs.append("z" + letters[s])
        if singles:
            expr = ",".join(specs) + "->z" + out_idx
            val = np.einsum(expr, *ops, optimize="greedy")
        else:
            expr = ",".join(specs) + "->" + out_idx
            val = np.broadcast_to(np.einsum(expr, *ops, optimize="greedy"),
                                  (B,) + (C.shape[0],) * len(plugged))
        total = sign * val if total is None else total + sign * val
    return total


def _general_integral(T: np.ndarray | None, kernel: ChainKernel | None, W, C):
    """I_n for a dense tensor T or a chain kernel, over a batch W (B, M)."""
    if kernel is not None:
        n = kernel.n
        ops = [kernel.top.ravel()] + [kernel.prop.dense()] * (n - 1)
        specs = _chain_terms(n, _LETTERS)
    else:
        n = T.ndim
        ops, specs = [T], [_LETTERS[:n]]
    return _wick_contract(ops, specs, n, _LETTERS, C, W)


def _white_levels(top: np.ndarray, prop: Propagator, W: np.ndarray, N: int) -> np.ndarray:
    """[I_1, ..., I_N] for the chain with top ``top`` (white in time). W: (B, nt, ns)."""
    out = np.zeros((W.shape[0], N))
    v = W
    for k in range(N):
        if k:
            v = W * prop.forward(v)
        out[:, k] = np.einsum("bts,ts->b", v, top)
    return out


def multiple_integral(kernel, sample, cov):
    """I_n(kernel) for one noise sample or a batch of samples.

    ``kernel`` is a :class:`ChainKernel` or a dense order-n tensor.
    ``sample`` is a :class:`NoiseSample`, a flat vector, or a batch of
    shape (B, M) or (B, nt, n_space).
    """
    W, single = _noise_array(sample)
    if isinstance(kernel, ChainKernel):
        _check_grid(kernel, W)
        if kernel.n > MAX_ORDER:
            raise ResourceError(f"order {kernel.n} exceeds cap {MAX_ORDER}")
        if _is_white(cov):
            g = kernel.grid
            val = _white_levels(kernel.top, kernel.prop, W.reshape(-1, g.nt, g.n_space), kernel.n)[:, -1]
        else:
            val = _general_integral(None, kernel, W, _dense_cov(cov))
    else:
        T = np.asarray(kernel, dtype=float)
        if T.ndim == 0:
            return float(T) if single else np.full(W.shape[0], float(T))
        if W.shape[-1] != T.shape[0]:
            raise ArgumentError("tensor size does not match the noise")
        val = _general_integral(T, None, W, _dense_cov(cov))
    return float(val[0]) if single else np.asarray(val)


def _hermite_table(xi, kmax):
    """He_k(xi_m) for k = 0..kmax (probabilists' Hermite)."""
    H = np.empty((kmax + 1, len(xi)))
    H[0] = 1.0
    if kmax >= 1:
        H[1] = xi
    for k in range(1, kmax):
        H[k + 1] = xi * H[k] - k * H[k - 1]
    return H


def multiple_integral_oracle(tensor, L, xi) -> float:
    """I_n(tensor) for W = L xi by whitening and Hermite products.

    Exhaustive over all M^n index tuples; limited to M^n <= 1e6.
    """
    T = np.asarray(tensor, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n, M = T.ndim, len(xi)
    if n == 0:
        return float(T)
    if M**n > 10**6:
        raise ResourceError("oracle limited to M^n <= 1e6")
    L = np.asarray(L, dtype=float)
    for k in range(n):
        T = np.moveaxis(np.tensordot(T, L, axes=([k], [0])), -1, k)
    H = _hermite_table(xi, n)
    total = 0.0
    for idx in itertools.product(range(M), repeat=n):
        c = T[idx]
        if c == 0.0:
            continue
        counts = np.bincount(idx, minlength=M)
        total += c * np.prod(H[counts, np.arange(M)])
    return float(total)


# --------------------------------------------------------------------------
# second moments
# --------------------------------------------------------------------------


def _white_second_moments(tops: np.ndarray, prop: Propagator, T0diag, S, nmax: int) -> np.ndarray:
    """E[I_n^2] for n = 1..nmax for each top in ``tops`` (K, nt, ns), white time.

    Uses Q_1(tau) = T0[tau,tau] S and
    Q_{k+1}(tau') = T0[tau',tau'] S o sum_{tau<tau'} P Q_k(tau) P^T.
    """
    active = np.nonzero(np.any(tops != 0, axis=(0, 2)))[0]
    nta = int(active.max()) + 1 if active.size else 0
    out = np.zeros((tops.shape[0], nmax))
    if nta == 0:
        return out
    Q = np.array([T0diag[tau] * S for tau in range(nta)])
    for k in range(nmax):
        if k:
            newQ = np.zeros_like(Q)
            for tp in range(k, nta):
                acc = np.zeros_like(S)
                for tau in range(k - 1, tp):
                    Pb = prop.blocks[tp - tau]
                    acc += Pb @ Q[tau] @ Pb.T
                newQ[tp] = T0diag[tp] * S * acc
            Q = newQ
        if k >= nta:
            break
        out[:, k] = np.einsum("kts,tsr,ktr->k", tops[:, :nta], Q, tops[:, :nta])
    return out


def _general_second_moment(kernel: ChainKernel, C: np.ndarray) -> float:
    """sum over permutations sigma of <g, sigma g> with covariance C."""
    n = kernel.n
    if math.factorial(n) * kernel.grid.M ** 2 > 5e8:
        raise ResourceError("colored second moment limited to small grids and orders")
    P = kernel.prop.dense()
    top = kernel.top.ravel()
    A, B = _LETTERS[:n], _LETTERS[n:2 * n]
    base_ops = [top] + [P] * (n - 1) + [top] + [P] * (n - 1)
    base_specs = _chain_terms(n, A) + _chain_terms(n, B)
    total = 0.0
    for sigma in itertools.permutations(range(n)):
        ops = base_ops + [C] * n
        specs = base_specs + [A[k] + B[sigma[k]] for k in range(n)]
        total += float(np.einsum(",".join(specs) + "->", *ops, optimize="greedy"))
    return total


def second_moment(kernel, cov) -> float:
    """E[I_n(kernel)^2] = n! ||sym kernel||^2, computed deterministically."""
    if isinstance(kernel, ChainKernel):
        if _is_white(cov):
            m = _white_second_moments(kernel.top[None], kernel.prop, np.diag(cov.T0), cov.S, kernel.n)
            return float(m[0, -1])
        return _general_second_moment(kernel, _dense_cov(cov))
    T = np.asarray(kernel, dtype=float)
    C = _dense_cov(cov)
    n = T.ndim
    A, B = _LETTERS[:n], _LETTERS[n:2 * n]
    total = 0.0
    for sigma in itertools.permutations(range(n)):
        specs = [A, B] + [A[k] + B[sigma[k]] for k in range(n)]
        total += float(np.einsum(",".join(specs) + "->", T, T, *([C] * n), optimize="greedy"))
    return total


def second_moment_table(tops: np.ndarray, prop: Propagator, cov, nmax: int) -> np.ndarray:
    """E[I_n^2], n = 1..nmax, for several top vectors sharing one propagator.

    ``tops`` has shape (K, nt, n_space); returns (K, nmax).
    """
    tops = np.asarray(tops, dtype=float)
    if _is_white(cov):
        return _white_second_moments(tops, prop, np.diag(cov.T0), cov.S, nmax)
    C = _dense_cov(cov)
    return np.array([[_general_second_moment(ChainKernel(n, top, prop), C) for n in range(1, nmax + 1)]
                     for top in tops])


def second_moments(kernel: ChainKernel, cov, nmax: int) -> np.ndarray:
    """[E I_1^2, ..., E I_nmax^2] for the chain family sharing ``kernel.top``."""
    if _is_white(cov):
        return _white_second_moments(kernel.top[None], kernel.prop, np.diag(cov.T0), cov.S, nmax)[0]
    return np.array([_general_second_moment(kernel.with_order(n), _dense_cov(cov))
                     for n in range(1, nmax + 1)])


# --------------------------------------------------------------------------
# solution and truncation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChaosSolution:
    """Chaos levels [1, I_1, ..., I_N] (last axis) of a truncated expansion."""

    levels: np.ndarray
    N: int

    @property
    def u(self):
        return self.levels.sum(axis=-1)


def chaos_levels(kernel: ChainKernel, N: int, sample, cov) -> ChaosSolution:
    """All levels up to N for the chain family of ``kernel`` (its order is ignored)."""
    if N < 0:
        raise ArgumentError("N must be >= 0")
    if N > MAX_ORDER:
        raise ResourceError(f"truncation order {N} exceeds cap {MAX_ORDER}")
    W, single = _noise_array(sample)
    _check_grid(kernel, W)
    g = kernel.grid
    lv = np.ones((W.shape[0], N + 1))
    if N:
        if _is_white(cov):
            lv[:, 1:] = _white_levels(kernel.top, kernel.prop, W.reshape(-1, g.nt, g.n_space), N)
        else:
            C = _dense_cov(cov)
            for n in range(1, N + 1):
                lv[:, n] = _general_integral(None, kernel.with_order(n), W, C)
    return ChaosSolution(lv[0] if single else lv, N)


def solve_u(t, x, N, grid: Grid, sample, cov):
    """Truncated chaos solution u(t, x) = 1 + sum_{n <= N} I_n(f_{t,x,n})."""
    if N == 0:
        W, single = _noise_array(sample)
        return 1.0 if single else np.ones(W.shape[0])
    sol = chaos_levels(discretize_kernel(t, x, 1, grid), N, sample, cov)
    return float(sol.u) if np.ndim(sol.u) == 0 else sol.u


@dataclass(frozen=True)
class TailCertificate:
    moments: np.ndarray
    tails: np.ndarray
    extrapolated: bool
    ratio: float

    def order_for(self, rel_target: float = 1e-3) -> int:
        total = self.moments.sum() + self.tails[-1] if len(self.tails) else 0.0
        for N in range(1, len(self.tails) + 1):
            if self.tails[N - 1] <= rel_target * total:
                return N
        return len(self.tails)


def tail_certificate(kernel: ChainKernel, cov, cap: int = MAX_ORDER) -> TailCertificate:
    """Second moments up to the discrete chaos depth (or ``cap``) plus tails.

    ``tails[N-1]`` bounds sum_{n > N} E[I_n^2].  The discrete expansion stops
    at the number of active time cells; beyond ``cap`` the last ratio is
    extrapolated geometrically.
    """
    nta = int(np.count_nonzero(np.any(kernel.top != 0, axis=1)))
    nmax = max(1, min(nta, cap))
    m = second_moments(kernel, cov, nmax)
    extrapolated = nta > cap
    ratio = float(m[-1] / m[-2]) if nmax >= 2 and m[-2] > 0 else 0.0
    extra = 0.0
    if extrapolated:
        if ratio >= 1:
            warnings.warn("chaos second moments are not decaying at the cap; "
                          "grid or t too aggressive", RuntimeWarning, stacklevel=2)
            extra = math.inf
        else:
            extra = m[-1] * ratio / (1 - ratio)
    tails = np.array([m[N:].sum() + extra for N in range(1, nmax + 1)])
    return TailCertificate(m, tails, extrapolated, ratio)


def truncation_tail_bound(N, t, spec, grid: Grid, x=None, cov=None) -> float:
    """Upper bound on sum_{n > N} E[I_n(f_{t,x,n})^2] (x defaults to the origin)."""
    from .gaussian_field import build_covariance

    if N < 1:
        raise ArgumentError("N must be >= 1")
    x = np.zeros(grid.d) if x is None else x
    cov = build_covariance(grid, spec) if cov is None else cov
    cert = tail_certificate(discretize_kernel(t, x, 1, grid), cov)
    return float(cert.tails[N - 1]) if N <= len(cert.tails) else 0.0


# --------------------------------------------------------------------------
# contractions and the product formula
# --------------------------------------------------------------------------


def symmetrize(T: np.ndarray) -> np.ndarray:
    n = T.ndim
    if n <= 1:
        return T.copy()
    acc = np.zeros_like(T)
    for p in itertools.permutations(range(n)):
        acc += np.transpose(T, p)
    return acc / math.factorial(n)


def contraction(f, g, r: int, cov) -> np.ndarray:
    """f (x)_r g: contract the last r slots of f with the last r slots of g through cov."""
    f, g = np.asarray(f, dtype=float), np.asarray(g, dtype=float)
    n, m = f.ndim, g.ndim
    if not 0 <= r <= min(n, m):
        raise ArgumentError(f"r={r} outside [0, min(n, m)]")
    C = _dense_cov(cov)
    A = _LETTERS[:n]
    B = _LETTERS[n:n + m]
    specs = [A, B] + [A[n - r + k] + B[m - r + k] for k in range(r)]
    out = A[: n - r] + B[: m - r]
    return np.einsum(",".join(specs) + "->" + out, f, g, *([C] * r), optimize="greedy")


@dataclass(frozen=True)
class ProductCheck:
    lhs: float
    rhs: float


def product_formula_check(f, g, sample, cov) -> ProductCheck:
    """I_n(f) I_m(g) against sum_r r! C(n,r) C(m,r) I_{n+m-2r}(f (x)_r g)."""
    fs, gs = symmetrize(np.asarray(f, float)), symmetrize(np.asarray(g, float))
    n, m = fs.ndim, gs.ndim
    lhs = multiple_integral(fs, sample, cov) * multiple_integral(gs, sample, cov)
    rhs = 0.0
    for r in range(min(n, m) + 1):
        h = contraction(fs, gs, r, cov)
        rhs += math.factorial(r) * math.comb(n, r) * math.comb(m, r) * multiple_integral(h, sample, cov)
    return ProductCheck(float(lhs), float(rhs))


# --------------------------------------------------------------------------
# Malliavin derivatives
# --------------------------------------------------------------------------


def _white_D(top, prop, W, N):
    """All-cell first derivative for the white path; W (B, nt, ns)."""
    lower = [np.ones_like(W)]
    v = W
    for a in range(1, N):
        if a > 1:
            v = W * prop.forward(v)
        lower.append(prop.forward(v))
    upper = [np.broadcast_to(top, W.shape)]
    for b in range(1, N):
        upper.append(prop.backward(upper[-1] * W))
    cum = np.cumsum(np.stack(upper), axis=0)
    return sum(lower[a] * cum[N - 1 - a] for a in range(N))


def malliavin_D_field(kernel: ChainKernel, N: int, sample, cov) -> np.ndarray:
    """D_{cell} of the truncated expansion, for every cell: shape (B, M) or (M,)."""
    if N < 1:
        raise ArgumentError("N must be >= 1 for a nonzero derivative")
    W, single = _noise_array(sample)
    _check_grid(kernel, W)
    g = kernel.grid
    if _is_white(cov):
        D = _white_D(kernel.top, kernel.prop, W.reshape(-1, g.nt, g.n_space), N).reshape(W.shape)
    else:
        C = _dense_cov(cov)
        P = kernel.prop.dense()
        D = np.zeros(W.shape)
        for n in range(1, N + 1):
            ops = [kernel.top.ravel()] + [P] * (n - 1)
            specs = _chain_terms(n, _LETTERS)
            for slot in range(n):
                D += _wick_contract(ops, specs, n, _LETTERS, C, W, plugged=(slot,))
    return D[0] if single else D


def _white_D2(top, prop, W, N, chunk=64):
    """All-pair second derivative for the white path; returns (B, M, M)."""
    g = prop.grid
    B = W.shape[0]
    M = g.M
    Wf = W.reshape(B, M)
    P = prop.dense()
    lower = [np.ones_like(W)]
    v = W
    for a in range(1, N - 1):
        if a > 1:
            v = W * prop.forward(v)
        lower.append(prop.forward(v))
    upper = [np.broadcast_to(top, W.shape)]
    for b in range(1, N - 1):
        upper.append(prop.backward(upper[-1] * W))
    L = np.stack(lower).reshape(len(lower), B, M)
    U = np.cumsum(np.stack(upper), axis=0).reshape(len(upper), B, M)
    out = np.zeros((B, M, M))
    for s in range(0, B, chunk):
        sl = slice(s, s + chunk)
        Mc = np.broadcast_to(P, (Wf[sl].shape[0], M, M)).copy()
        acc = np.zeros_like(Mc)
        for c in range(N - 1):
            if c:
                Mc = P @ (Wf[sl][:, :, None] * Mc)
            # sum over a + b <= N - 2 - c of L_a[j1] U_b[j2]
            for a in range(N - 1 - c):
                acc += U[N - 2 - c - a, sl][:, :, None] * Mc * L[a, sl][:, None, :]
        out[sl] = acc + np.transpose(acc, (0, 2, 1))
    return out


def malliavin_D2_field(kernel: ChainKernel, N: int, sample, cov) -> np.ndarray:
    """D_{c1} D_{c2} of the truncated expansion for all cell pairs: (B, M, M) or (M, M)."""
    if N < 2:
        W, single = _noise_array(sample)
        z = np.zeros((W.shape[0], W.shape[1], W.shape[1]))
        return z[0] if single else z
    W, single = _noise_array(sample)
    _check_grid(kernel, W)
    g = kernel.grid
    if _is_white(cov):
        D2 = _white_D2(kernel.top, kernel.prop, W.reshape(-1, g.nt, g.n_space), N)
    else:
        C = _dense_cov(cov)
        P = kernel.prop.dense()
        D2 = np.zeros((W.shape[0], g.M, g.M))
        for n in range(2, N + 1):
            ops = [kernel.top.ravel()] + [P] * (n - 1)
            specs = _chain_terms(n, _LETTERS)
            for s1 in range(n):
                for s2 in range(n):
                    if s1 != s2:
                        D2 += _wick_contract(ops, specs, n, _LETTERS, C, W, plugged=(s1, s2))
    return D2[0] if single else D2


def _check_cell_time(cell, t, grid):
    tau = cell // grid.n_space
    if not 0 <= cell < grid.M:
        raise ArgumentError("cell index out of range")
    if grid.time_centers[tau] >= t:
        raise ArgumentError("cell time must precede t")


def malliavin_D(cell, t, x, N, grid: Grid, sample, cov):
    """Density-valued D_{s,y} u(t, x) for (s, y) in ``cell``."""
    _check_cell_time(cell, t, grid)
    D = malliavin_D_field(discretize_kernel(t, x, 1, grid), N, sample, cov)
    return D[..., cell]


def malliavin_D2(cell1, cell2, t, x, N, grid: Grid, sample, cov):
    """Density-valued D_{c1} D_{c2} u(t, x)."""
    _check_cell_time(cell1, t, grid)
    _check_cell_time(cell2, t, grid)
    if N < 2:
        raise ArgumentError("N must be >= 2")
    D2 = malliavin_D2_field(discretize_kernel(t, x, 1, grid), N, sample, cov)
    return D2[..., cell1, cell2]
