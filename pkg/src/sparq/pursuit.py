"""Sparse coding over a fixed dictionary via orthogonal matching pursuit.

`omp` codes a single signal with an explicit residual; `batch_omp` codes
many signals sharing one dictionary from a precomputed Gram matrix, using
progressively updated Cholesky factors so that each signal costs
O(n * m * tau). Both produce the same codes up to floating-point noise.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import solve_triangular

# Stop coding a signal once its residual norm falls below this fraction of
# the signal norm, even before `sparsity` atoms have been selected.
EXIT_TOLERANCE = 1e-6

# Columns of the dictionary must be unit norm within this tolerance.
UNIT_NORM_TOLERANCE = 1e-9

# Squared Cholesky diagonal below which adding an atom would make the
# selected system numerically singular; the offending atom is skipped.
_RANK_EPS = 1e-12

# The compiled coder is internally parallel; numba's default threading
# layer is not re-entrant, so concurrent callers are serialized here.
_KERNEL_GUARD = threading.Lock()


@dataclass(frozen=True)
class Dictionary:
    """Overcomplete dictionary of unit-norm atoms, one per column.

    ``sparsity`` and ``patch_side`` are optional provenance metadata used
    by the persistence format and for pipeline consistency checks; they do
    not affect coding.
    """

    atoms: np.ndarray
    sparsity: int | None = None
    patch_side: int | None = None

    def __post_init__(self):
        atoms = np.ascontiguousarray(np.asarray(self.atoms, dtype=np.float64))
        if atoms.ndim != 2:
            raise ValueError(f"atoms must be a 2-D matrix, got shape {atoms.shape}")
        n, m = atoms.shape
        if m <= n:
            raise ValueError(f"dictionary must be overcomplete (atoms > dim), got {n}x{m}")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("dictionary contains non-finite entries")
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(norms == 0.0):
            raise ValueError("dictionary contains a zero atom")
        if np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOLERANCE:
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ValueError(f"atoms must be unit norm within {UNIT_NORM_TOLERANCE}, worst deviation {worst:g}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def signal_dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SparseCode:
    """Sparse coefficient vector: sorted support indices plus their values."""

    n_atoms: int
    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if support.shape != values.shape:
            raise ValueError("support and values must have equal length")
        if support.size:
            if support[0] < 0 or support[-1] >= self.n_atoms:
                raise ValueError("support index out of range")
            if np.any(np.diff(support) <= 0):
                raise ValueError("support must be strictly increasing")
            if np.any(values == 0.0):
                raise ValueError("support entries must carry nonzero values")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "values", values)

    @property
    def n_nonzero(self) -> int:
        return self.support.size

    def dense(self) -> np.ndarray:
        out = np.zeros(self.n_atoms)
        out[self.support] = self.values
        return out


def _make_code(n_atoms: int, support, values) -> SparseCode:
    support = np.asarray(support, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=np.float64).ravel()
    live = values != 0.0
    support, values = support[live], values[live]
    order = np.argsort(support)
    return SparseCode(n_atoms, support[order], values[order])


def _check_sparsity(sparsity: int, signal_dim: int) -> int:
    tau = int(sparsity)
    if tau < 1:
        raise ValueError(f"sparsity must be positive, got {sparsity}")
    if tau > signal_dim:
        raise ValueError(f"sparsity {tau} exceeds signal dimension {signal_dim}")
    return tau


def omp(dictionary: Dictionary, signal, sparsity: int) -> SparseCode:
    """Greedy sparse coding of one signal.

    At each step the atom with the largest absolute inner product with the
    current residual is selected (ties resolved toward the lowest index),
    all selected coefficients are re-fit by least squares, and the residual
    is updated. Stops after ``sparsity`` atoms or once the residual norm
    drops below ``EXIT_TOLERANCE`` times the signal norm. Atoms whose
    addition would make the selected system singular are skipped.
    """
    atoms = dictionary.atoms
    n, m = atoms.shape
    y = np.asarray(signal, dtype=np.float64).ravel()
    if y.shape[0] != n:
        raise ValueError(f"signal length {y.shape[0]} does not match dictionary dimension {n}")
    tau = _check_sparsity(sparsity, n)
    norm0 = float(np.linalg.norm(y))
    if norm0 == 0.0:
        return _make_code(m, [], [])
    exit_norm = EXIT_TOLERANCE * norm0
    residual = y.copy()
    h0 = atoms.T @ y
    low = np.zeros((tau, tau))
    skip = np.zeros(m, dtype=bool)
    support: list[int] = []
    coef = np.zeros(0)
    while len(support) < tau:
        corr = atoms.T @ residual
        corr[skip] = 0.0
        pick = int(np.argmax(np.abs(corr)))
        if abs(corr[pick]) <= 0.0:
            break
        j = len(support)
        if j:
            cross = atoms[:, support].T @ atoms[:, pick]
            w = solve_triangular(low[:j, :j], cross, lower=True)
            head = 1.0 - float(w @ w)
            if head <= _RANK_EPS:
                skip[pick] = True
                continue
            low[j, :j] = w
            low[j, j] = np.sqrt(head)
        else:
            low[0, 0] = 1.0
        support.append(pick)
        skip[pick] = True
        j += 1
        z = solve_triangular(low[:j, :j], h0[support], lower=True)
        coef = solve_triangular(low[:j, :j].T, z, lower=False)
        residual = y - atoms[:, support] @ coef
        if np.linalg.norm(residual) <= exit_norm:
            break
    return _make_code(m, support, coef)


def batch_omp(dictionary: Dictionary, signals, sparsity: int) -> list[SparseCode]:
    """Code every column of ``signals``; equivalent to per-column `omp`.

    The Gram matrix of the dictionary is computed once and selection,
    Cholesky updates, and coefficient solves are carried out jointly over
    blocks of signals.
    """
    atoms = dictionary.atoms
    y = np.asarray(signals, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != atoms.shape[0]:
        raise ValueError(
            f"signals must be a {atoms.shape[0]}-row matrix, got shape {y.shape}"
        )
    tau = _check_sparsity(sparsity, atoms.shape[0])
    support, counts, coefs, _ = _batch_omp_arrays(atoms, y, tau)
    out = []
    for col in range(y.shape[1]):
        k = counts[col]
        out.append(_make_code(atoms.shape[1], support[:k, col], coefs[:k, col]))
    return out


def reconstruct(dictionary: Dictionary, code: SparseCode) -> np.ndarray:
    """Evaluate the dictionary expansion of a sparse code."""
    if code.n_atoms != dictionary.n_atoms:
        raise ValueError(
            f"code ambient dimension {code.n_atoms} does not match dictionary ({dictionary.n_atoms})"
        )
    if code.support.size and code.support[-1] >= dictionary.n_atoms:
        raise ValueError("support index out of range")
    if not code.support.size:
        return np.zeros(dictionary.signal_dim)
    return dictionary.atoms[:, code.support] @ code.values


def _batch_omp_arrays(atoms: np.ndarray, signals: np.ndarray, sparsity: int,
                      exit_rel: float = EXIT_TOLERANCE):
    """Array-level batch OMP used by the learning and scoring pipelines.

    Returns ``(support, counts, coefs, eps)`` where column ``i`` of
    ``support``/``coefs`` holds the first ``counts[i]`` selected atoms in
    selection order and ``eps[i]`` is the squared residual estimate.
    """
    n_signals = signals.shape[1]
    tau = sparsity
    gram = np.ascontiguousarray(atoms.T @ atoms)
    correlations = np.ascontiguousarray((atoms.T @ signals).T)
    energies = np.einsum("nc,nc->c", signals, signals)
    support = np.full((n_signals, tau), -1, dtype=np.int64)
    counts = np.zeros(n_signals, dtype=np.int64)
    coefs = np.zeros((n_signals, tau))
    eps = np.zeros(n_signals)
    with _KERNEL_GUARD:
        _omp_kernel(gram, correlations, energies, tau, float(exit_rel),
                    support, counts, coefs, eps)
    return support.T, counts, coefs.T, eps


@numba.njit(cache=True, parallel=True)
def _omp_kernel(gram, correlations, energies, tau, exit_rel,
                support, counts, coefs, eps_out):  # pragma: no cover - compiled
    n_signals, m = correlations.shape[0], gram.shape[0]
    for sig in numba.prange(n_signals):
        alpha = correlations[sig].copy()
        eps = energies[sig]
        exit2 = exit_rel * exit_rel * eps
        # psi[t] holds the dictionary correlations of the t-th
        # orthonormalized selection direction; its entries at the selected
        # indices are the progressive Cholesky rows.
        psi = np.empty((tau, m))
        low = np.zeros((tau, tau))
        proj = np.zeros(tau)
        sel = np.zeros(m, dtype=np.bool_)
        taken = 0
        while taken < tau and eps > exit2:
            best = -1.0
            pick = -1
            for j in range(m):
                if not sel[j]:
                    a = abs(alpha[j])
                    if a > best:
                        best = a
                        pick = j
            if pick < 0 or best <= 0.0:
                break
            head2 = 1.0
            for t in range(taken):
                w = psi[t, pick]
                head2 -= w * w
            if head2 <= _RANK_EPS:
                sel[pick] = True
                continue
            head = np.sqrt(head2)
            buf = psi[taken]
            for j in range(m):
                buf[j] = gram[pick, j]
            for t in range(taken):
                w = psi[t, pick]
                for j in range(m):
                    buf[j] -= w * psi[t, j]
            c = alpha[pick] / head
            for j in range(m):
                buf[j] /= head
                alpha[j] -= buf[j] * c
            for t in range(taken):
                low[taken, t] = psi[t, pick]
            low[taken, taken] = head
            proj[taken] = c
            support[sig, taken] = pick
            sel[pick] = True
            eps -= c * c
            taken += 1
        # Back substitution of the transposed Cholesky factor.
        for t in range(taken - 1, -1, -1):
            acc = proj[t]
            for u in range(t + 1, taken):
                acc -= low[u, t] * coefs[sig, u]
            coefs[sig, t] = acc / low[t, t]
        counts[sig] = taken
        eps_out[sig] = max(eps, 0.0)


def dense_codes(support: np.ndarray, counts: np.ndarray, coefs: np.ndarray,
                n_atoms: int) -> np.ndarray:
    """Scatter array-level batch OMP output into a dense (n_atoms, s) matrix."""
    tau, n_signals = support.shape
    out = np.zeros((n_atoms, n_signals))
    mask = np.arange(tau)[:, None] < counts[None, :]
    cols = np.broadcast_to(np.arange(n_signals), (tau, n_signals))
    out[support[mask], cols[mask]] = coefs[mask]
    return out
