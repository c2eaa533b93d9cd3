"""Empirical constants in the Malliavin-derivative moment bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..chaos_engine import discretize_kernel, malliavin_D2_field, malliavin_D_field
from ..errors import ArgumentError
from ..gaussian_field import sample_batch
from ..grid import Grid
from ..kernels import heat_kernel, lambda_apply, phi_operator
from .poincare import _as_lattice


@dataclass(frozen=True)
class SweepResult:
    """Maximal ratio of a derivative L^p norm to its bound, per family.

    ``rows`` lists one dict per sampled cell (family, coordinates, ratio).
    """

    max_ratio: float
    by_family: dict
    rows: list = field(default_factory=list, repr=False)


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, np.inf)


def md_bound_sweep(t, x, N, grid: Grid, cov, replicas=500, p=4, seed=0, *, n_cells=1000,
                   spec=None, chunk=32, min_rel_bound=1e-12) -> SweepResult:
    """Ratios ||D^m u(t,x)||_p / bound at randomly sampled cells.

    Families: ``m1`` (against f_{t,x,1}), ``m2`` (against f_{t,x,2}) and,
    when ``spec`` is rough, ``inc`` (first-derivative spatial increments
    against Phi_{t-s,y'} p_{4(t-s)}) and ``rect`` (rectangular increments
    of D^2 against Lambda(p_{4(t-s)}, p_{4(s-r)})).  The discrete chain
    values serve as f, so ``m1`` with N = 1 is exactly 1.  Cells are drawn
    where f_{t,x,1} exceeds ``min_rel_bound`` times its maximum.  Ratios at
    cells where the bound underflows to zero are reported as nonfinite
    in ``rows`` and left out of the maxima.
    """
    if p not in (2, 4):
        raise ArgumentError("p must be 2 or 4")
    if grid.d != 1:
        raise ArgumentError("sweeps are implemented for d = 1")
    lat = _as_lattice(grid, cov)
    kernel = discretize_kernel(t, x, 1, grid)
    ns = grid.n_space
    top = kernel.top.ravel()
    blocks = kernel.prop.blocks

    def P(b, a):
        return blocks[b // ns - a // ns, b % ns, a % ns]

    rng = np.random.default_rng([seed, 7])
    # deep tails measure the cell rule's added variance, not the bound
    active = np.nonzero(top > min_rel_bound * top.max())[0]
    c1 = rng.choice(active, n_cells)
    pairs = []
    while len(pairs) < n_cells:
        a, b = rng.choice(active, 2, replace=False)
        a, b = (a, b) if a // ns < b // ns else (b, a)
        if a // ns != b // ns and P(b, a) > min_rel_bound * blocks[b // ns - a // ns].max():
            pairs.append((a, b))
    pairs = np.array(pairs)
    rough = spec is not None and spec.is_rough
    if rough:
        H0 = spec.temporal.hurst
        beta = H0 - 0.25
        inc = []
        while len(inc) < n_cells:
            c = rng.choice(active)
            y2 = rng.integers(ns)
            if y2 != c % ns:
                inc.append((c, (c // ns) * ns + y2))
        inc = np.array(inc)
        rect = []
        while len(rect) < n_cells:
            a, b = pairs[rng.integers(len(pairs))]
            za, yb = rng.integers(ns), rng.integers(ns)
            if za != a % ns and yb != b % ns:
                rect.append((a, (a // ns) * ns + za, b, (b // ns) * ns + yb))
        rect = np.array(rect)

    acc = {"m1": np.zeros(n_cells), "m2": np.zeros(n_cells)}
    if rough:
        acc["inc"] = np.zeros(n_cells)
        acc["rect"] = np.zeros(n_cells)
    for start in range(0, replicas, chunk):
        n = min(chunk, replicas - start)
        W = sample_batch(lat, seed, n, start)
        D = malliavin_D_field(kernel, N, W, lat.cov)
        acc["m1"] += np.sum(np.abs(D[:, c1]) ** p, axis=0)
        if rough:
            acc["inc"] += np.sum(np.abs(D[:, inc[:, 1]] - D[:, inc[:, 0]]) ** p, axis=0)
        if N >= 2:
            D2 = malliavin_D2_field(kernel, N, W, lat.cov)
            acc["m2"] += np.sum(np.abs(D2[:, pairs[:, 0], pairs[:, 1]]) ** p, axis=0)
            if rough:
                r, rz, s, sy = rect.T
                v = D2[:, rz, sy] - D2[:, rz, s] - D2[:, r, sy] + D2[:, r, s]
                acc["rect"] += np.sum(np.abs(v) ** p, axis=0)
    norms = {k: (v / replicas) ** (1.0 / p) for k, v in acc.items()}

    ratios = {"m1": _ratio(norms["m1"], top[c1])}
    rows = [{"family": "m1", "cell": int(c), "ratio": float(q)} for c, q in zip(c1, ratios["m1"])]
    if N >= 2:
        f2 = top[pairs[:, 1]] * P(pairs[:, 1], pairs[:, 0]) / 2.0
        ratios["m2"] = _ratio(norms["m2"], f2)
        rows += [{"family": "m2", "cell": int(a), "cell2": int(b), "ratio": float(q)}
                 for (a, b), q in zip(pairs, ratios["m2"])]
    if rough:
        sc, yc = grid.time_centers, grid.space_centers_1d
        s = sc[inc[:, 0] // ns]
        y = yc[inc[:, 0] % ns]
        yp = yc[inc[:, 1] % ns] - y
        gap = t - s
        p4 = lambda z: heat_kernel(4 * gap, z)  # noqa: E731
        bound = phi_operator(gap, yp, beta)(p4)(y - x)
        ratios["inc"] = _ratio(norms["inc"], bound)
        rows += [{"family": "inc", "cell": int(a), "cell2": int(b), "ratio": float(q)}
                 for (a, b), q in zip(inc, ratios["inc"])]
        if N >= 2:
            r, rz, s_, sy = rect.T
            rt, st = sc[r // ns], sc[s_ // ns]
            z, y = yc[r % ns], yc[s_ % ns]
            zp, yq = yc[rz % ns] - z, yc[sy % ns] - y
            lam = np.array([
                lambda_apply(rt[k], zp[k], st[k], yq[k], t,
                             lambda u, g=t - st[k]: heat_kernel(4 * g, u),
                             lambda u, g=st[k] - rt[k]: heat_kernel(4 * g, u),
                             x - y[k], y[k] - z[k], H0)
                for k in range(n_cells)])
            ratios["rect"] = _ratio(norms["rect"], lam)
            rows += [{"family": "rect", "cell": int(a), "cell2": int(b), "ratio": float(q)}
                     for (a, _, b, _), q in zip(rect, ratios["rect"])]
    # cells whose bound underflows to zero carry no information
    by_family = {k: float(np.max(v[np.isfinite(v)])) for k, v in ratios.items()}
    return SweepResult(max(by_family.values()), by_family, rows)
