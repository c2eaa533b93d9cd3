"""Second-order Poincare quantities and Malliavin-Stein bounds for F_R(t).

L^4 norms of the first and second Malliavin derivatives of F_R(t) are
estimated per cell from a common set of noise replicas.  The replicas
are split into ``groups`` disjoint batches; the batch-to-batch spread of
the resulting estimates gives the reported standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..chaos_engine import averaged_kernel, malliavin_D2_field, malliavin_D_field
from ..errors import ArgumentError, ResourceError
from ..gaussian_field import GaussianLattice, KroneckerCovariance, factorize, sample_batch
from ..grid import Grid
from ..noise_model import gagliardo_cell_kernel

MAX_CELLS = 4096


@dataclass(frozen=True)
class PoincareEstimate:
    value: float
    stderr: float
    method: str
    replicas: int


def _as_lattice(grid: Grid, cov) -> GaussianLattice:
    if isinstance(cov, GaussianLattice):
        return cov
    if not isinstance(cov, KroneckerCovariance):
        raise ArgumentError("expected a KroneckerCovariance or GaussianLattice")
    fT, fS = factorize(cov)
    return GaussianLattice(grid, cov, fT, fS)


def _derivative_batches(t, R, N, grid, lattice, replicas, seed, chunk=64, second=True):
    """Yield (D, D2) for consecutive replica chunks of F_R(t)."""
    kernel = averaged_kernel(t, R, 1, grid)
    for start in range(0, replicas, chunk):
        n = min(chunk, replicas - start)
        W = sample_batch(lattice, seed, n, start)
        D = malliavin_D_field(kernel, N, W, lattice.cov)
        D2 = malliavin_D2_field(kernel, N, W, lattice.cov) if second else None
        yield start, D, D2


def _group_of(idx, replicas, groups):
    return (idx * groups) // replicas


def _group_se(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")


# --------------------------------------------------------------------------
# regular case
# --------------------------------------------------------------------------


def A_regular_from_norms(X, Y, C) -> float:
    """Factored evaluation of A given X[a,b] = ||D_a D_b F||_4 and Y[a] = ||D_a F||_4.

    A = sum C[a,a'] C[b,b'] C[c,c'] X[a,b] X[c,b'] Y[a'] Y[c'] = v^T C v
    with v = X^T C Y.
    """
    v = X.T @ (C @ Y)
    return float(v @ C @ v)


def A_regular_exhaustive(X, Y, C) -> float:
    """Literal six-fold sum (tiny grids only)."""
    if C.shape[0] ** 6 > 5e7:
        raise ResourceError("exhaustive six-fold sum limited to tiny grids")
    return float(np.einsum("ap,bq,cr,ab,cq,p,r->", C, C, C, X, X, Y, Y, optimize=False))


def A_regular_sampled(X, Y, C, n_tuples, seed=0):
    """Importance sampling of cell 6-tuples with proposal proportional to |C|.

    Returns (estimate, standard error) conditional on the norms.
    """
    rng = np.random.default_rng(seed)
    w = np.abs(C).ravel()
    Z = w.sum()
    M = C.shape[0]
    idx = rng.choice(w.size, size=(3, n_tuples), p=w / Z)
    a, ap = np.divmod(idx[0], M)
    b, bp = np.divmod(idx[1], M)
    c, cp = np.divmod(idx[2], M)
    sign = np.sign(C[a, ap] * C[b, bp] * C[c, cp])
    vals = Z**3 * sign * X[a, b] * X[c, bp] * Y[ap] * Y[cp]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_tuples))


def regular_norms(t, R, N, grid, cov, replicas, seed, groups=8):
    """Per-group and pooled L^4 norms of D F_R and D^2 F_R.

    Returns (X_groups, Y_groups, X, Y) with shapes (G, M, M), (G, M),
    (M, M), (M,).
    """
    lattice = _as_lattice(grid, cov)
    M = grid.M
    if M > MAX_CELLS:
        raise ResourceError(f"{M} cells exceed the cap {MAX_CELLS}")
    S1 = np.zeros((groups, M))
    S2 = np.zeros((groups, M, M))
    counts = np.zeros(groups)
    for start, D, D2 in _derivative_batches(t, R, N, grid, lattice, replicas, seed):
        g = _group_of(start + np.arange(D.shape[0]), replicas, groups)
        np.add.at(S1, g, D**4)
        np.add.at(S2, g, D2**4)
        np.add.at(counts, g, 1)
    Yg = (S1 / counts[:, None]) ** 0.25
    Xg = (S2 / counts[:, None, None]) ** 0.25
    Y = (S1.sum(0) / replicas) ** 0.25
    X = (S2.sum(0) / replicas) ** 0.25
    return Xg, Yg, X, Y


def poincare_A_regular(t, R, N, grid: Grid, cov, mc_tuples=0, replicas=1000, seed=0,
                       method="factored", groups=8) -> PoincareEstimate:
    """Estimate of the regular-case quantity A for F_R(t).

    ``method`` is ``"factored"`` (exact contraction given the norms),
    ``"sampled"`` (importance sampling of ``mc_tuples`` cell 6-tuples) or
    ``"exhaustive"`` (literal six-fold sum).
    """
    if N == 0:
        return PoincareEstimate(0.0, 0.0, method, replicas)
    if replicas < 2 * groups:
        raise ArgumentError("need at least two replicas per group")
    lat = _as_lattice(grid, cov)
    C = lat.cov.dense()
    Xg, Yg, X, Y = regular_norms(t, R, N, grid, lat, replicas, seed, groups)
    if method == "factored":
        val = A_regular_from_norms(X, Y, C)
        se = _group_se([A_regular_from_norms(Xg[k], Yg[k], C) for k in range(groups)])
    elif method == "exhaustive":
        val = A_regular_exhaustive(X, Y, C)
        se = _group_se([A_regular_from_norms(Xg[k], Yg[k], C) for k in range(groups)])
    elif method == "sampled":
        if mc_tuples < 2:
            raise ArgumentError("sampled method needs mc_tuples >= 2")
        val, se = A_regular_sampled(X, Y, C, mc_tuples, seed)
    else:
        raise ArgumentError(f"unknown method {method!r}")
    return PoincareEstimate(val, se, method, replicas)


# --------------------------------------------------------------------------
# rough case
# --------------------------------------------------------------------------


def _extend(D, grid):
    """Append the outside-of-domain spatial cell (value 0) to a derivative field."""
    B = D.shape[0]
    De = np.zeros((B, grid.nt, grid.nx + 1))
    De[:, :, :-1] = D.reshape(B, grid.nt, grid.nx)
    return De


def _extend2(D2, grid):
    B = D2.shape[0]
    nt, nx = grid.nt, grid.nx
    E = np.zeros((B, nt, nx + 1, nt, nx + 1))
    E[:, :, :-1, :, :-1] = D2.reshape(B, nt, nx, nt, nx)
    return E


def _rough_first_sums(De, groups_idx, groups):
    """Per-group sums of |D_{r,z} - D_{r,z'}|^4, shape (G, nt, Z, Z)."""
    diff = De[:, :, :, None] - De[:, :, None, :]
    out = np.zeros((groups,) + diff.shape[1:])
    np.add.at(out, groups_idx, diff**4)
    return out


def _rect_fourth_sums(E, r, s, groups_idx, groups):
    """Per-group sums of the rectangular increment to the 4th power for time pair (r, s).

    Returns (G, Z, Z, Z, Z) indexed [z, z', y, y'].  With U = X_z - X_z',
    sum (U_y - U_y')^4 expands into power sums and the cross sums
    U^3.U, U^2.U^2, which are batched matrix products.
    """
    X = E[:, r, :, s, :]  # (B, Z, Y)
    _, Z, Y = X.shape
    iu, ju = np.triu_indices(Z, 1)
    out = np.zeros((groups, Z, Z, Y, Y))
    for gk in range(groups):
        Xg = X[groups_idx == gk]
        U = np.ascontiguousarray((Xg[:, iu, :] - Xg[:, ju, :]).transpose(1, 0, 2))  # (P, b, Y)
        U2 = U * U
        m4 = np.sum(U2 * U2, axis=1)
        m31 = np.matmul((U2 * U).transpose(0, 2, 1), U)
        m22 = np.matmul(U2.transpose(0, 2, 1), U2)
        val = m4[:, :, None] + m4[:, None, :] - 4.0 * (m31 + m31.transpose(0, 2, 1)) + 6.0 * m22
        val[:, np.arange(Y), np.arange(Y)] = 0.0
        out[gk, iu, ju] = np.maximum(val, 0.0)
    out += np.transpose(out, (0, 2, 1, 3, 4))
    return out


def A_rough_from_fields(D, D2, T0, K, grid, groups_idx=None, groups=1):
    """Rough-case A from derivative samples, by exhaustive cell summation.

    ``D`` has shape (B, M), ``D2`` (B, M, M); ``K`` is the extended
    Gagliardo cell kernel.  Returns an array of per-group values followed
    by the pooled value.
    """
    B = D.shape[0]
    gi = np.zeros(B, dtype=int) if groups_idx is None else np.asarray(groups_idx)
    counts = np.bincount(gi, minlength=groups).astype(float)
    De, E = _extend(D, grid), _extend2(D2, grid)
    nt = grid.nt
    S1 = _rough_first_sums(De, gi, groups)
    sets = [(S1[k] / counts[k], k) for k in range(groups)] + [(S1.sum(0) / B, None)]
    Z = grid.nx + 1
    H = np.zeros((groups + 1, nt, Z, Z))
    A_w = [K[None] * np.einsum("rq,qzw->rzw", T0, m1**0.25) for m1, _ in sets]
    for r in range(nt):
        for s in range(r, nt):
            if not np.any(E[:, r, :, s, :]):
                continue
            S2 = _rect_fourth_sums(E, r, s, gi, groups)
            for k in range(groups + 1):
                m4 = S2[k] / counts[k] if k < groups else S2.sum(0) / B
                Nrm = m4**0.25
                H[k, s] += np.einsum("zw,zwyv->yv", A_w[k][r], Nrm)
                if s != r:
                    H[k, r] += np.einsum("yv,zwyv->zw", A_w[k][s], Nrm)
    return np.array([np.einsum("sq,yv,syv,qyv->", T0, K, H[k], H[k]) for k in range(groups + 1)])


def A_rough_sampled(D, D2, T0, K, grid, n_outer, n_inner=32, seed=0):
    """Nested importance sampling of the rough-case A.

    Outer tuples (s, s', y, y') are drawn proportionally to T0 and K; the
    two inner sums are estimated from independent draws of (r, z, z') so
    their product is unbiased.  Returns (estimate, standard error).
    """
    rng = np.random.default_rng(seed)
    De, E = _extend(D, grid), _extend2(D2, grid)
    nt, Z = grid.nt, grid.nx + 1
    m1 = np.mean((De[:, :, :, None] - De[:, :, None, :]) ** 4, axis=0) ** 0.25
    Aw = K[None] * np.einsum("rq,qzw->rzw", T0, m1)
    pa = np.abs(Aw).ravel()
    Za = pa.sum()
    pt = np.abs(T0).ravel()
    pk = np.abs(K).ravel()
    Zt, Zk = pt.sum(), pk.sum()
    ss = rng.choice(pt.size, n_outer, p=pt / Zt)
    yy = rng.choice(pk.size, n_outer, p=pk / Zk)
    s, sp = np.divmod(ss, nt)
    y, yp = np.divmod(yy, Z)

    def inner(tau, chunk=64):
        idx = rng.choice(pa.size, (n_outer, n_inner), p=pa / Za)
        r, rest = np.divmod(idx, Z * Z)
        z, zp = np.divmod(rest, Z)
        out = np.empty(n_outer)
        for a in range(0, n_outer, chunk):
            sl = slice(a, a + chunk)
            T, YY, YP = tau[sl, None], y[sl, None], yp[sl, None]
            rr, zz, zq = r[sl], z[sl], zp[sl]
            inc = (E[:, rr, zz, T, YY] - E[:, rr, zz, T, YP]
                   - E[:, rr, zq, T, YY] + E[:, rr, zq, T, YP])
            out[sl] = Za * np.mean(np.mean(inc**4, axis=0) ** 0.25, axis=1)
        return out

    sign = np.sign(T0[s, sp] * K[y, yp])
    vals = Zt * Zk * sign * inner(s) * inner(sp)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_outer))


def poincare_A_rough(t, R, N, grid: Grid, cov, mc_tuples=0, replicas=1000, seed=0, *, H1,
                     method="exhaustive", groups=8, n_inner=32) -> PoincareEstimate:
    """Estimate of the rough-case quantity A (Gagliardo form) for F_R(t)."""
    if grid.d != 1:
        raise ArgumentError("rough case requires d = 1")
    if N == 0:
        return PoincareEstimate(0.0, 0.0, method, replicas)
    lat = _as_lattice(grid, cov)
    if grid.M > 512:
        raise ResourceError("rough A is limited to grids with at most 512 cells")
    K = gagliardo_cell_kernel(grid, H1)
    T0 = lat.cov.T0
    Ds, D2s = [], []
    for _, D, D2 in _derivative_batches(t, R, N, grid, lat, replicas, seed):
        Ds.append(D)
        D2s.append(D2)
    D, D2 = np.concatenate(Ds), np.concatenate(D2s)
    if method == "exhaustive":
        gi = _group_of(np.arange(replicas), replicas, groups)
        vals = A_rough_from_fields(D, D2, T0, K, grid, gi, groups)
        return PoincareEstimate(float(vals[-1]), _group_se(vals[:-1]), method, replicas)
    if method == "sampled":
        if mc_tuples < 2:
            raise ArgumentError("sampled method needs mc_tuples >= 2")
        val, se = A_rough_sampled(D, D2, T0, K, grid, mc_tuples, n_inner, seed)
        return PoincareEstimate(val, se, method, replicas)
    raise ArgumentError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# Malliavin-Stein bounds
# --------------------------------------------------------------------------

_STEIN_FACTOR = {"regular": 4.0, "rough": 2.0 * math.sqrt(3.0)}


def stein_bound(sigma2, A, case="regular") -> float:
    """4 sqrt(A)/sigma^2 (regular) or 2 sqrt(3) sqrt(A)/sigma^2 (rough)."""
    if not sigma2 > 0:
        raise ArgumentError("sigma2 must be positive")
    if A < 0:
        raise ArgumentError("A must be nonnegative")
    if case not in _STEIN_FACTOR:
        raise ArgumentError(f"case must be one of {sorted(_STEIN_FACTOR)}")
    return _STEIN_FACTOR[case] * math.sqrt(A) / sigma2


def stein_bound_se(sigma2, A, A_se, case="regular") -> float:
    """Delta-method standard error of :func:`stein_bound`."""
    if A <= 0:
        return 0.0
    return _STEIN_FACTOR[case] * A_se / (2.0 * math.sqrt(A) * sigma2)
