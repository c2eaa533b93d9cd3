"""Cell-integrated Gaussian noise on a space-time grid.

The covariance of the cell values W_i = W(1_{cell_i}) is separable,
``cov = T0 (x) S``, and is kept in that factored form: each factor is
Cholesky-decomposed on its own and a realization is ``L_T xi L_S^T`` for
an ``(nt, n_space)`` array ``xi`` of standard normals.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, NumericalError
from .grid import Grid
from .noise_model import NoiseSpec, spatial_cell_matrix, temporal_cell_matrix

__all__ = [
    "Grid", "KroneckerCovariance", "Factor", "GaussianLattice", "NoiseSample",
    "build_covariance", "factorize", "make_lattice", "sample", "sample_batch",
    "replica_rng", "dump_matrices", "load_matrices",
]

JITTER_SEQUENCE = (0.0, 1e-14, 1e-12, 1e-10, 1e-8)


@dataclass(frozen=True)
class KroneckerCovariance:
    """Separable covariance with temporal factor ``T0`` and spatial factor ``S``."""

    T0: np.ndarray
    S: np.ndarray

    @property
    def M(self) -> int:
        return self.T0.shape[0] * self.S.shape[0]

    @property
    def temporal_is_diagonal(self) -> bool:
        return bool(np.all(self.T0 == np.diag(np.diag(self.T0))))

    def dense(self) -> np.ndarray:
        return np.kron(self.T0, self.S)

    def entry(self, i: int, j: int) -> float:
        ns = self.S.shape[0]
        return float(self.T0[i // ns, j // ns] * self.S[i % ns, j % ns])

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """cov @ v for flat time-major vectors (last axis of length M)."""
        nt, ns = self.T0.shape[0], self.S.shape[0]
        V = v.reshape(v.shape[:-1] + (nt, ns))
        return (self.T0 @ V @ self.S.T).reshape(v.shape)


def build_covariance(grid: Grid, spec: NoiseSpec) -> KroneckerCovariance:
    """Cell-pair covariance of the noise on ``grid`` in Kronecker form."""
    T0 = temporal_cell_matrix(grid.time_edges, spec.temporal)
    S = spatial_cell_matrix(grid, spec.spatial)
    # exact symmetry, so cov == cov.T bit for bit
    return KroneckerCovariance(0.5 * (T0 + T0.T), 0.5 * (S + S.T))


@dataclass(frozen=True)
class Factor:
    """Lower-triangular ``L`` with ``L L^T = A + jitter I``."""

    L: np.ndarray
    jitter: float


def _factorize_dense(A: np.ndarray) -> Factor:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError("covariance must be a square matrix")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ArgumentError("covariance must be symmetric")
    A = 0.5 * (A + A.T)
    scale = float(np.max(np.diag(A))) if A.size else 1.0
    eye = np.eye(A.shape[0])
    for rel in JITTER_SEQUENCE:
        jitter = rel * scale
        try:
            return Factor(np.linalg.cholesky(A + jitter * eye), jitter)
        except np.linalg.LinAlgError:
            continue
    lam = float(np.linalg.eigvalsh(A)[0])
    raise NumericalError(f"covariance not PSD within jitter cap; smallest eigenvalue {lam:.3e}")


def factorize(cov):
    """Cholesky factor with escalating diagonal jitter.

    Accepts a dense matrix (returns a :class:`Factor`) or a
    :class:`KroneckerCovariance` (returns a pair of factors).
    """
    if isinstance(cov, KroneckerCovariance):
        return _factorize_dense(cov.T0), _factorize_dense(cov.S)
    return _factorize_dense(cov)


@dataclass(frozen=True)
class GaussianLattice:
    grid: Grid
    cov: KroneckerCovariance
    factor_T: Factor
    factor_S: Factor

    @property
    def jitter(self) -> float:
        """Effective diagonal jitter of the assembled Kronecker factor (upper bound)."""
        fT, fS = self.factor_T, self.factor_S
        dT, dS = np.max(np.diag(self.cov.T0)), np.max(np.diag(self.cov.S))
        return fT.jitter * dS + fS.jitter * dT + fT.jitter * fS.jitter

    def factor(self) -> np.ndarray:
        """Dense lower-triangular factor of the full covariance."""
        return np.kron(self.factor_T.L, self.factor_S.L)

    def color(self, xi: np.ndarray) -> np.ndarray:
        """Map standard normals of shape (..., nt, n_space) to noise cell values."""
        return self.factor_T.L @ xi @ self.factor_S.L.T


def make_lattice(grid: Grid, spec: NoiseSpec) -> GaussianLattice:
    cov = build_covariance(grid, spec)
    fT, fS = factorize(cov)
    return GaussianLattice(grid, cov, fT, fS)


@dataclass(frozen=True)
class NoiseSample:
    """One realization; ``values`` is the flat time-major vector of length M."""

    values: np.ndarray = field(repr=False)
    seed: int

    def as_field(self, grid: Grid) -> np.ndarray:
        return self.values.reshape(grid.nt, grid.n_space)


def replica_rng(master_seed: int, k: int) -> np.random.Generator:
    """Independent stream of replica ``k`` derived from ``master_seed``."""
    return np.random.default_rng([int(master_seed), int(k)])


def sample(lattice: GaussianLattice, seed: int) -> NoiseSample:
    g = lattice.grid
    xi = np.random.default_rng(seed).standard_normal((g.nt, g.n_space))
    return NoiseSample(lattice.color(xi).ravel(), seed)


def sample_batch(lattice: GaussianLattice, master_seed: int, n: int, start: int = 0) -> np.ndarray:
    """Replicas ``start .. start+n-1`` as an array of shape (n, nt, n_space).

    Replica ``k`` depends only on ``(master_seed, k)``, so any split into
    batches yields the same realizations.
    """
    g = lattice.grid
    xi = np.empty((n, g.nt, g.n_space))
    for j in range(n):
        xi[j] = replica_rng(master_seed, start + j).standard_normal((g.nt, g.n_space))
    return lattice.color(xi)


_MAGIC = b"PAMCOV01"


def dump_matrices(lattice: GaussianLattice, path) -> None:
    """Write the dense covariance and factor (row-major float64) with a small header."""
    g = lattice.grid
    cov, L = lattice.cov.dense(), lattice.factor()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqqqdd", cov.shape[0], g.nt, g.nx, g.d, g.T, g.L))
        fh.write(np.ascontiguousarray(cov, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(L, dtype="<f8").tobytes())


def load_matrices(path):
    """Inverse of :func:`dump_matrices`; returns ``(grid, cov, factor)``."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ArgumentError("not a covariance dump")
        M, nt, nx, d, T, L = struct.unpack("<qqqqdd", fh.read(48))
        cov = np.frombuffer(fh.read(8 * M * M), dtype="<f8").reshape(M, M)
        fac = np.frombuffer(fh.read(8 * M * M), dtype="<f8").reshape(M, M)
    return Grid(T, nt, L, nx, d), cov, fac
