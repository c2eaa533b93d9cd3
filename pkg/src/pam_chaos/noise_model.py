"""Covariance structure of the driving noise.

The noise is a centered Gaussian field with separable covariance
gamma0(t - s) * gamma1(x - y).  Two temporal kernels are supported (the
Dirac delta and the Riesz kernel |t|^(2 H0 - 2)) and three spatial
families (an integrable nonnegative-definite function, the Riesz kernel
|x|^(-beta), and the fractional-Brownian covariance with Hurst H1 < 1/2).

Everything downstream works with *cell-integrated* covariances, i.e. the
values <1_A, 1_B> for space-time boxes A and B.  Closed forms are used
whenever the kernel has an elementary second antiderivative.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special
from scipy.linalg import toeplitz

from . import _quadrature as quad
from .errors import ArgumentError, HypothesisViolation, UnsupportedCaseError
from .grid import Grid

REGULAR = "H1-regular"
ROUGH = "H2-rough"


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TemporalKernel:
    kind: str
    H0: float | None = None

    def __post_init__(self):
        if self.kind == "dirac":
            if self.H0 not in (None, 0.5):
                raise ArgumentError("the Dirac kernel carries no parameter")
        elif self.kind == "riesz_time":
            if self.H0 is None or not 0.5 < self.H0 < 1.0:
                raise HypothesisViolation([f"H0={self.H0} outside (1/2, 1)"])
        else:
            raise ArgumentError(f"unknown temporal kernel kind {self.kind!r}")

    @classmethod
    def dirac(cls) -> "TemporalKernel":
        return cls("dirac")

    @classmethod
    def riesz(cls, H0: float) -> "TemporalKernel":
        return cls("riesz_time", H0)

    @property
    def hurst(self) -> float:
        """H0, with the white-in-time convention H0 = 1/2 for the Dirac kernel."""
        return 0.5 if self.kind == "dirac" else self.H0

    @property
    def is_white(self) -> bool:
        return self.kind == "dirac"


def _gaussian_bump(ell, d):
    def func(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1) if d > 1 else (x[..., 0] ** 2 if x.ndim and x.shape[-1:] == (1,) else x**2)
        return np.exp(-0.5 * r2 / ell**2)

    def factor(z):
        return np.exp(-0.5 * np.asarray(z, dtype=float) ** 2 / ell**2)

    def density(r):
        return (ell**2 / (2 * np.pi)) ** (d / 2) * np.exp(-0.5 * ell**2 * np.asarray(r) ** 2)

    return func, factor, density


@dataclass(frozen=True)
class SpatialKernel:
    """Spatial covariance gamma1 together with its spectral density.

    Use the constructors :meth:`gaussian_bump`, :meth:`integrable`,
    :meth:`riesz` and :meth:`rough_fbm`.  ``spectral_density`` is the
    radial density of the spectral measure mu with respect to Lebesgue
    measure, under the convention gamma1(x) = int exp(-i xi.x) mu(d xi).
    """

    kind: str
    d: int = 1
    beta: float | None = None
    H1: float | None = None
    func: Callable | None = field(default=None, compare=False, repr=False)
    l1_norm: float | None = None
    spectral_density: Callable | None = field(default=None, compare=False, repr=False)
    factor_1d: Callable | None = field(default=None, compare=False, repr=False)
    label: str = ""
    params: tuple = ()

    def __post_init__(self):
        if self.d < 1:
            raise ArgumentError("dimension must be a positive integer")
        if self.kind == "riesz":
            # local integrability only; Dalang's beta < 2 is a hypothesis-level check
            if self.beta is None or not 0.0 < self.beta < self.d:
                raise HypothesisViolation([f"beta={self.beta} outside (0, d={self.d})"])
        elif self.kind == "rough_fbm":
            if self.d != 1:
                raise HypothesisViolation(["rough_fbm requires d = 1"])
            if self.H1 is None or not 0.0 < self.H1 < 0.5:
                raise HypothesisViolation([f"H1={self.H1} outside (0, 1/2)"])
        elif self.kind == "integrable":
            if self.func is None or self.l1_norm is None:
                raise ArgumentError("integrable kernel needs func and l1_norm")
            if not (0.0 < self.l1_norm < math.inf):
                raise HypothesisViolation(["||gamma1||_L1 must be finite and > 0"])
        else:
            raise ArgumentError(f"unknown spatial kernel kind {self.kind!r}")

    @classmethod
    def gaussian_bump(cls, ell: float = 1.0, d: int = 1) -> "SpatialKernel":
        """gamma1(x) = exp(-|x|^2 / (2 ell^2)), the default integrable kernel."""
        if ell <= 0:
            raise ArgumentError("bump width must be positive")
        func, factor, density = _gaussian_bump(ell, d)
        return cls("integrable", d=d, func=func, l1_norm=(2 * np.pi * ell**2) ** (d / 2),
                   spectral_density=density, factor_1d=factor,
                   label="gaussian_bump", params=(("ell", ell),))

    @classmethod
    def integrable(cls, func, l1_norm, d=1, spectral_density=None, label="custom"):
        return cls("integrable", d=d, func=func, l1_norm=l1_norm,
                   spectral_density=spectral_density, label=label)

    @classmethod
    def riesz(cls, beta: float, d: int = 1) -> "SpatialKernel":
        c = special.gamma((d - beta) / 2) / (2**beta * np.pi ** (d / 2) * special.gamma(beta / 2))
        return cls("riesz", d=d, beta=beta,
                   func=lambda x, b=beta: _radius(x) ** (-b),
                   spectral_density=lambda r, c=c, b=beta, d=d: c * np.asarray(r, float) ** (b - d),
                   label="riesz", params=(("beta", beta),))

    @classmethod
    def rough_fbm(cls, H1: float) -> "SpatialKernel":
        c = fbm_spectral_constant(H1) if 0 < H1 < 0.5 else float("nan")
        return cls("rough_fbm", d=1, H1=H1,
                   spectral_density=lambda r, c=c, h=H1: c * np.asarray(r, float) ** (1 - 2 * h),
                   label="rough_fbm", params=(("H1", H1),))

    @property
    def singular_exponent(self) -> float | None:
        return self.beta if self.kind == "riesz" else None


def _radius(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return abs(x)
    if x.shape[-1] in (1, 2, 3) and x.ndim > 1:
        return np.sqrt(np.sum(x * x, axis=-1))
    return np.abs(x)


@dataclass(frozen=True)
class NoiseSpec:
    """Full covariance model: temporal kernel, spatial kernel, hypothesis tag."""

    temporal: TemporalKernel
    spatial: SpatialKernel
    hypothesis_tag: str | None = None

    def __post_init__(self):
        if self.hypothesis_tag is None:
            tag = ROUGH if self.spatial.kind == "rough_fbm" else REGULAR
            object.__setattr__(self, "hypothesis_tag", tag)

    @property
    def d(self) -> int:
        return self.spatial.d

    @property
    def is_rough(self) -> bool:
        return self.hypothesis_tag == ROUGH

    def violations(self) -> list[str]:
        """Violated hypothesis clauses; empty when the spec is admissible."""
        out = []
        sp, tm = self.spatial, self.temporal
        if self.hypothesis_tag == ROUGH:
            if sp.kind != "rough_fbm":
                out.append("H2-rough requires a rough_fbm spatial kernel")
            else:
                s = tm.hurst + sp.H1
                if not s > 0.75:
                    out.append(f"H0+H1 <= 3/4 (H0+H1 = {s:g})")
        elif self.hypothesis_tag == REGULAR:
            if sp.kind not in ("integrable", "riesz"):
                out.append("H1-regular requires an integrable or riesz spatial kernel")
            if sp.kind == "riesz" and not sp.beta < min(2.0, sp.d):
                out.append(f"beta >= min(2, d) (beta = {sp.beta:g}, d = {sp.d}); Dalang's condition fails")
        else:
            out.append(f"unknown hypothesis tag {self.hypothesis_tag!r}")
        return out

    def validate(self) -> "NoiseSpec":
        v = self.violations()
        if v:
            raise HypothesisViolation(v)
        return self

    # -- config round trip (flat key paths) --------------------------------

    def to_config(self) -> dict:
        cfg = {"temporal.kind": self.temporal.kind, "spatial.kind": self.spatial.kind,
               "spatial.d": self.spatial.d}
        if self.temporal.kind == "riesz_time":
            cfg["temporal.H0"] = self.temporal.H0
        if self.spatial.kind == "riesz":
            cfg["spatial.beta"] = self.spatial.beta
        if self.spatial.kind == "rough_fbm":
            cfg["spatial.H1"] = self.spatial.H1
        if self.spatial.kind == "integrable":
            cfg["spatial.ell"] = dict(self.spatial.params).get("ell", 1.0)
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "NoiseSpec":
        """Build from flat keys ``temporal.kind``, ``temporal.H0``, ``spatial.*``."""
        errors = []
        tkind = cfg.get("temporal.kind", "dirac")
        H0 = cfg.get("temporal.H0")
        if tkind == "dirac" and H0 not in (None, 0.5):
            tkind = "riesz_time"
        if H0 is not None and float(H0) == 0.5:
            tkind = "dirac"  # H0 = 1/2 is white in time
        try:
            temporal = TemporalKernel.dirac() if tkind == "dirac" else TemporalKernel.riesz(float(H0))
        except HypothesisViolation as exc:
            errors += exc.clauses
            temporal = None
        skind = cfg.get("spatial.kind", "integrable")
        d = int(cfg.get("spatial.d", 1))
        try:
            if skind == "integrable":
                spatial = SpatialKernel.gaussian_bump(float(cfg.get("spatial.ell", 1.0)), d)
            elif skind == "riesz":
                spatial = SpatialKernel.riesz(float(cfg["spatial.beta"]), d)
            elif skind == "rough_fbm":
                if d != 1:
                    raise HypothesisViolation(["rough_fbm requires d = 1"])
                spatial = SpatialKernel.rough_fbm(float(cfg["spatial.H1"]))
            else:
                raise ArgumentError(f"unknown spatial.kind {skind!r}")
        except HypothesisViolation as exc:
            errors += exc.clauses
            spatial = None
        if errors:
            raise HypothesisViolation(errors)
        return cls(temporal, spatial)


# --------------------------------------------------------------------------
# temporal factor
# --------------------------------------------------------------------------


def _riesz_antiderivative(x, H):
    # second antiderivative of |x|^(2H-2)
    return np.abs(x) ** (2 * H) / (2 * H * (2 * H - 1))


def _rectangle_increment(G, a_lo, a_hi, b_lo, b_hi):
    return G(a_hi - b_lo) - G(a_lo - b_lo) - G(a_hi - b_hi) + G(a_lo - b_hi)


def gamma0_cell_integral(a_lo, a_hi, b_lo, b_hi, k: TemporalKernel) -> float:
    """int_a int_b gamma0(t - s) dt ds over two time intervals."""
    if not (a_lo < a_hi and b_lo < b_hi) or min(a_lo, b_lo) < 0:
        raise ArgumentError("intervals must be nondegenerate and lie in [0, inf)")
    if k.is_white:
        return max(0.0, min(a_hi, b_hi) - max(a_lo, b_lo))
    return float(_rectangle_increment(lambda x: _riesz_antiderivative(x, k.H0), a_lo, a_hi, b_lo, b_hi))


def temporal_cell_matrix(edges, k: TemporalKernel) -> np.ndarray:
    """Matrix of gamma0 cell integrals for consecutive intervals given by ``edges``."""
    e = np.asarray(edges, dtype=float)
    lo, hi = e[:-1], e[1:]
    if k.is_white:
        return np.diag(hi - lo)
    A_lo, B_lo = np.meshgrid(lo, lo, indexing="ij")
    A_hi, B_hi = np.meshgrid(hi, hi, indexing="ij")
    G = lambda x: _riesz_antiderivative(x, k.H0)  # noqa: E731
    return _rectangle_increment(G, A_lo, A_hi, B_lo, B_hi)


def capital_gamma(t: float, k: TemporalKernel) -> float:
    """Gamma_t = int_{-t}^{t} gamma0(s) ds."""
    if not t > 0:
        raise ArgumentError("t must be positive")
    if k.is_white:
        return 1.0
    H = k.H0
    return 2.0 * t ** (2 * H - 1) / (2 * H - 1)


# --------------------------------------------------------------------------
# spatial factor
# --------------------------------------------------------------------------


def fbm_spectral_constant(H1: float) -> float:
    """Constant c with gamma1 = FT of c |xi|^(1-2H1) for unit-variance fBm increments."""
    return special.gamma(2 * H1 + 1) * np.sin(np.pi * H1) / (2 * np.pi)


def gagliardo_constant(H1: float) -> float:
    """c_{H1} = pi^-1 int (1 - cos x) |x|^(2H1 - 2) dx, by quadrature.

    With this constant the spectral norm equals the Gagliardo seminorm
    of order 1/2 - H1.
    """
    f = lambda x: (1 - np.cos(x)) * x ** (2 * H1 - 2)  # noqa: E731
    a, _ = integrate.quad(f, 0, 1, epsrel=1e-12)
    b, _ = integrate.quad(lambda x: x ** (2 * H1 - 2), 1, np.inf, epsrel=1e-12)
    c, _ = integrate.quad(lambda x: x ** (2 * H1 - 2), 1, np.inf, weight="cos", wvar=1.0)
    return 2 * (a + b - c) / np.pi


def gagliardo_weight(H1: float) -> float:
    """kappa such that unit-fBm <phi, psi> = kappa * double-difference integral.

    <phi, psi> = kappa int int (phi(x)-phi(y))(psi(x)-psi(y)) |x-y|^(2H1-2) dx dy.
    """
    return H1 * (1 - 2 * H1) / 2


def _as_box(cell, d):
    b = np.asarray(cell, dtype=float)
    if b.ndim == 1:
        b = b[None, :]
    if b.shape != (d, 2) or np.any(b[:, 1] <= b[:, 0]):
        raise ArgumentError("cells must be nondegenerate boxes of shape (d, 2)")
    return b


def spatial_cell_cov(cell_a, cell_b, k: SpatialKernel) -> float:
    """Spatial factor of Cov(W(1_A), W(1_B)) for two boxes.

    Boxes are given as ``(lo, hi)`` in d = 1 or as ``[[lo, hi], ...]``.
    """
    d = k.d
    if k.kind == "rough_fbm" and d != 1:
        raise UnsupportedCaseError("rough_fbm is only defined for d = 1")
    a, b = _as_box(cell_a, d), _as_box(cell_b, d)
    if k.kind == "rough_fbm":
        (x1, x2), (y1, y2) = a[0], b[0]
        h = 2 * k.H1
        return 0.5 * (abs(x2 - y1) ** h + abs(x1 - y2) ** h - abs(x2 - y2) ** h - abs(x1 - y1) ** h)
    if k.kind == "riesz" and d == 1:
        beta = k.beta
        G = lambda x: np.abs(x) ** (2 - beta) / ((2 - beta) * (1 - beta))  # noqa: E731
        return float(_rectangle_increment(G, a[0, 0], a[0, 1], b[0, 0], b[0, 1]))
    if k.factor_1d is not None:
        out = 1.0
        for i in range(d):
            out *= quad.box_pair_integral_1d(k.factor_1d, a[i, 0], a[i, 1], b[i, 0], b[i, 1])
        return out
    if d == 1:
        return quad.box_pair_integral_1d(lambda z: k.func(z[:, None]), a[0, 0], a[0, 1], b[0, 0], b[0, 1])
    if d == 2:
        return quad.box_pair_integral_2d(k.func, a, b, k.singular_exponent)
    raise UnsupportedCaseError("covariance assembly is implemented for d <= 2")


def _offset_table_1d(k, h, n):
    """s[m] = spatial_cell_cov([0,h], [m h, (m+1) h]) for m = 0..n-1."""
    m = np.arange(n, dtype=float)
    if k.kind == "rough_fbm":
        H = 2 * k.H1
        return 0.5 * (np.abs(m + 1) ** H + np.abs(m - 1) ** H - 2 * np.abs(m) ** H) * h**H
    if k.kind == "riesz" and k.d == 1:
        beta = k.beta
        G = lambda x: np.abs(x) ** (2 - beta) / ((2 - beta) * (1 - beta))  # noqa: E731
        return (G(m + 1) + G(m - 1) - 2 * G(m)) * h ** (2 - beta)
    f = k.factor_1d if k.factor_1d is not None else (lambda z: k.func(z[:, None]))
    return np.array([quad.box_pair_integral_1d(f, 0.0, h, mi * h, (mi + 1) * h) for mi in m])


def spatial_cell_matrix(grid: Grid, k: SpatialKernel) -> np.ndarray:
    """Spatial cell-covariance matrix over all spatial cells of ``grid``."""
    if k.d != grid.d:
        raise UnsupportedCaseError(f"kernel dimension {k.d} does not match grid dimension {grid.d}")
    n, h = grid.nx, grid.dx
    if grid.d == 1:
        return toeplitz(_offset_table_1d(k, h, n))
    if k.kind == "rough_fbm":
        raise UnsupportedCaseError("rough_fbm is only defined for d = 1")
    if k.factor_1d is not None:
        S1 = toeplitz(_offset_table_1d(k, h, n))
        return np.kron(S1, S1)
    table = np.empty((n, n))
    for m1 in range(n):
        for m2 in range(m1, n):
            v = spatial_cell_cov([[0, h], [0, h]], [[m1 * h, (m1 + 1) * h], [m2 * h, (m2 + 1) * h]], k)
            table[m1, m2] = table[m2, m1] = v
    idx = np.arange(n)
    D = np.abs(idx[:, None] - idx[None, :])
    return table[D[:, None, :, None], D[None, :, None, :]].reshape(n * n, n * n)


def spatial_cell_cov_spectral(cell_a, cell_b, k: SpatialKernel, cutoff_factor=40.0) -> float:
    """Same quantity as :func:`spatial_cell_cov` computed from the spectral measure (d = 1).

    Uses int mu(d xi) F1_A(xi) conj(F1_B(xi)) with the oscillatory tail
    handled by a Fourier-weighted rule.
    """
    if k.d != 1 or k.spectral_density is None:
        raise UnsupportedCaseError("spectral route implemented for d = 1 kernels with a spectral density")
    a, b = _as_box(cell_a, 1)[0], _as_box(cell_b, 1)[0]
    rho = k.spectral_density
    terms = [(+1, a[0] - b[0]), (-1, a[0] - b[1]), (-1, a[1] - b[0]), (+1, a[1] - b[1])]
    width = min(a[1] - a[0], b[1] - b[0])
    A = cutoff_factor / width
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        total = _spectral_terms(terms, rho, A)
    return 2.0 * total


def _spectral_terms(terms, rho, A):
    total = 0.0
    for sgn, dist in terms:
        # int_0^inf (cos(xi d) - 1) rho(xi) / xi^2 d xi ; sum of signs is zero
        def head(x, dist=dist):
            if x < 1e-8:
                return -0.5 * dist * dist * float(rho(x)) if x > 0 else 0.0
            return (np.cos(x * dist) - 1.0) * float(rho(x)) / (x * x)

        brk = [p for p in (1.0 / max(abs(dist), 1e-300),) if p < A] if dist else None
        v, _ = integrate.quad(head, 0.0, A, limit=2000, epsabs=1e-13, epsrel=1e-10, points=brk)
        g = lambda x: float(rho(x)) / (x * x)  # noqa: E731
        tail_const, _ = integrate.quad(g, A, np.inf, limit=500, epsabs=1e-14)
        if dist != 0.0:
            tail_cos, _ = integrate.quad(g, A, np.inf, weight="cos", wvar=abs(dist), limlst=200)
        else:
            tail_cos = tail_const
        total += sgn * (v + tail_cos - tail_const)
    return total


def gagliardo_cell_kernel(grid: Grid, H1: float) -> np.ndarray:
    """Cell-integrated weights kappa |u - v|^(2H1 - 2) for the rough case.

    Returns a symmetric ``(nx + 1, nx + 1)`` matrix; the last index stands
    for the complement of [-L, L], where all fields vanish.  Diagonal
    entries are zero (differences vanish within a cell).
    """
    if grid.d != 1:
        raise UnsupportedCaseError("Gagliardo weights are defined for d = 1")
    e = grid.space_edges
    lo, hi = e[:-1], e[1:]
    H = 2 * H1
    P = lambda x: np.abs(x) ** H  # noqa: E731
    A_lo, B_lo = np.meshgrid(lo, lo, indexing="ij")
    A_hi, B_hi = np.meshgrid(hi, hi, indexing="ij")
    K = -0.25 * _rectangle_increment(P, A_lo, A_hi, B_lo, B_hi)
    np.fill_diagonal(K, 0.0)
    L = grid.L
    out = 0.25 * (P(L - lo) - P(L - hi) + P(hi + L) - P(lo + L))
    n = grid.nx
    full = np.zeros((n + 1, n + 1))
    full[:n, :n] = K
    full[:n, n] = full[n, :n] = out
    return full


def gagliardo_form(phi, psi, K) -> float:
    """sum_{z,z'} K[z,z'] (phi_z - phi_z')(psi_z - psi_z') over extended cells."""
    p = np.append(np.asarray(phi, float), 0.0)
    q = np.append(np.asarray(psi, float), 0.0)
    dp = p[:, None] - p[None, :]
    dq = q[:, None] - q[None, :]
    return float(np.sum(K * dp * dq))


# --------------------------------------------------------------------------
# spectral diagnostics
# --------------------------------------------------------------------------


def _sphere_area(d):
    return 2 * np.pi ** (d / 2) / special.gamma(d / 2)


@dataclass(frozen=True)
class SpectralMeasure:
    """Radially symmetric spectral measure mu(d xi) = density(|xi|) d xi on R^d."""

    density: Callable
    d: int = 1


def _as_spectral(obj) -> SpectralMeasure:
    if isinstance(obj, SpectralMeasure):
        return obj
    sp = obj.spatial if isinstance(obj, NoiseSpec) else obj
    if sp.spectral_density is None:
        raise UnsupportedCaseError("kernel has no spectral density")
    return SpectralMeasure(sp.spectral_density, sp.d)


@dataclass(frozen=True)
class DalangResult:
    admissible: bool
    tail_value: float


def dalang_check(spec, cutoff: float = 1e3) -> DalangResult:
    """Dalang's condition int mu(d xi) / (1 + |xi|^2) < inf.

    ``admissible`` is decided analytically per kernel family;
    ``tail_value`` is the integral truncated to |xi| <= cutoff.
    """
    if not cutoff > 0:
        raise ArgumentError("cutoff must be positive")
    sp = spec.spatial if isinstance(spec, NoiseSpec) else spec
    if sp.kind == "riesz":
        admissible = 0 < sp.beta < 2
    else:
        admissible = True
    mu = _as_spectral(sp)
    f = lambda r: float(mu.density(r)) * r ** (mu.d - 1) / (1 + r * r)  # noqa: E731
    pts = [p for p in (1.0, 10.0, 100.0) if p < cutoff]
    val, _ = integrate.quad(f, 0.0, cutoff, points=pts or None, limit=500)
    return DalangResult(bool(admissible), _sphere_area(mu.d) * val)


def cn_dn(N: float, spec) -> tuple[float, float]:
    """C_N = int_{|xi| >= N} mu(d xi)/|xi|^2 and D_N = mu(|xi| <= N)."""
    if not N > 0:
        raise ArgumentError("N must be positive")
    if isinstance(spec, NoiseSpec) and spec.is_rough:
        raise UnsupportedCaseError("C_N, D_N are defined for the regular case")
    if isinstance(spec, SpatialKernel) and spec.kind == "rough_fbm":
        raise UnsupportedCaseError("C_N, D_N are defined for the regular case")
    mu = _as_spectral(spec)
    d = mu.d
    c, _ = integrate.quad(lambda r: float(mu.density(r)) * r ** (d - 3), N, np.inf, limit=500)
    dn, _ = integrate.quad(lambda r: float(mu.density(r)) * r ** (d - 1), 0.0, N, limit=500)
    s = _sphere_area(d)
    return s * c, s * dn


# --------------------------------------------------------------------------
# inner products on grid functions
# --------------------------------------------------------------------------


def _check_grid_function(f, grid):
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.nt, grid.n_space):
        raise ArgumentError(f"grid function must have shape {(grid.nt, grid.n_space)}, got {f.shape}")
    return f


def inner_product_H(phi, psi, spec: NoiseSpec, grid: Grid, spatial_matrix=None) -> float:
    """<phi, psi>_H for piecewise-constant functions given by their cell values."""
    phi = _check_grid_function(phi, grid)
    psi = _check_grid_function(psi, grid)
    T0 = temporal_cell_matrix(grid.time_edges, spec.temporal)
    S = spatial_cell_matrix(grid, spec.spatial) if spatial_matrix is None else spatial_matrix
    return float(np.sum((T0 @ phi @ S) * psi))


def inner_product_H_spectral(phi, psi, spec: NoiseSpec, grid: Grid) -> float:
    """Same as :func:`inner_product_H` but with spatial factors from the spectral route."""
    if grid.d != 1:
        raise UnsupportedCaseError("spectral route implemented for d = 1")
    h = grid.dx
    table = [spatial_cell_cov_spectral((0.0, h), (m * h, (m + 1) * h), spec.spatial)
             for m in range(grid.nx)]
    return inner_product_H(phi, psi, spec, grid, spatial_matrix=toeplitz(table))


def mixed_norm(phi, spec: NoiseSpec, grid: Grid, S=None) -> float:
    """||phi||_{L^{1/H0}(R_+; H_1)} for a grid function."""
    phi = _check_grid_function(phi, grid)
    S = spatial_cell_matrix(grid, spec.spatial) if S is None else S
    h = np.sqrt(np.maximum(np.einsum("ti,ij,tj->t", phi, S, phi), 0.0))
    H0 = spec.temporal.hurst
    return float((grid.dt * np.sum(h ** (1.0 / H0))) ** H0)


@dataclass(frozen=True)
class EmbeddingResult:
    lhs: float
    rhs: float


def embedding_bound(phi, psi, spec: NoiseSpec, grid: Grid, c_H0: float) -> EmbeddingResult:
    """|<phi, psi>_H| against c_H0 ||phi||_{L^{1/H0}(H1)} ||psi||_{L^{1/H0}(H1)}."""
    if spec.temporal.is_white:
        raise UnsupportedCaseError("the embedding applies to H0 > 1/2")
    if not c_H0 > 0:
        raise ArgumentError("c_H0 must be positive")
    S = spatial_cell_matrix(grid, spec.spatial)
    lhs = abs(inner_product_H(phi, psi, spec, grid, spatial_matrix=S))
    rhs = c_H0 * mixed_norm(phi, spec, grid, S) * mixed_norm(psi, spec, grid, S)
    return EmbeddingResult(lhs, rhs)


def embedding_constant_search(spec: NoiseSpec, grid: Grid, n_trials: int = 200, seed: int = 0) -> float:
    """Largest observed |<phi,psi>| / (||phi|| ||psi||) over a random test family.

    The family mixes single-cell indicators, time-localized bumps and
    nonnegative random fields.
    """
    rng = np.random.default_rng(seed)
    S = spatial_cell_matrix(grid, spec.spatial)
    T0 = temporal_cell_matrix(grid.time_edges, spec.temporal)
    shape = (grid.nt, grid.n_space)
    worst = 0.0
    for trial in range(n_trials):
        kind = trial % 3
        fs = []
        for _ in range(2):
            f = np.zeros(shape)
            if kind == 0:
                f[rng.integers(grid.nt), rng.integers(grid.n_space)] = 1.0
            elif kind == 1:
                f[rng.integers(grid.nt)] = rng.random(grid.n_space)
            else:
                f = rng.random(shape) ** rng.uniform(1, 6)
            fs.append(f)
        lhs = abs(np.sum((T0 @ fs[0] @ S) * fs[1]))
        den = mixed_norm(fs[0], spec, grid, S) * mixed_norm(fs[1], spec, grid, S)
        if den > 0:
            worst = max(worst, lhs / den)
    return worst
