"""Dictionary learning by K-SVD: batch sparse coding alternated with
sequential rank-one atom updates, plus a binary persistence format.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .image import PatchSet
from .pursuit import Dictionary, _batch_omp_arrays, dense_codes

# Two training vectors whose directions agree beyond this cosine are
# treated as duplicates during initialization.
_DUPLICATE_COSINE = 0.999

_POWER_TOL = 1e-10
_POWER_MAX_ITER = 100

_MAGIC = b"SPQD"
_FORMAT_VERSION = 1


class DictionaryFormatError(ValueError):
    """Raised when a dictionary file is malformed or corrupted."""


@dataclass(frozen=True)
class LearnConfig:
    """Training parameters for learning a patch dictionary."""

    n_atoms: int = 242
    sparsity: int = 12
    iterations: int = 30
    seed: int = 0
    patch_side: int = 11
    # Stop early once the relative drop of the training error falls below
    # this; None disables early stopping.
    min_improvement: float | None = 1e-4

    def __post_init__(self):
        if self.n_atoms <= self.patch_side * self.patch_side:
            raise ValueError(
                f"n_atoms={self.n_atoms} must exceed the patch dimension "
                f"{self.patch_side * self.patch_side}"
            )
        if not 0 < self.sparsity < self.n_atoms:
            raise ValueError(f"sparsity must lie in (0, n_atoms), got {self.sparsity}")
        if self.sparsity > self.patch_side * self.patch_side:
            raise ValueError("sparsity cannot exceed the patch dimension")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")


@dataclass
class TrainingReport:
    """Per-iteration diagnostics of a K-SVD run.

    ``errors`` holds the root-mean-square reconstruction error
    ||P - Phi X||_F / sqrt(n k) measured at the end of each iteration;
    ``replaced`` counts atoms reseeded because no signal used them.
    """

    errors: list[float] = field(default_factory=list)
    replaced: list[int] = field(default_factory=list)


def _sign_fix(vec: np.ndarray) -> float:
    """Return -1.0 if the largest-magnitude entry is negative, else 1.0."""
    peak = np.argmax(np.abs(vec))
    return -1.0 if vec[peak] < 0.0 else 1.0


def _init_atoms(signals: np.ndarray, n_atoms: int, rng: np.random.Generator,
                strict: bool = True) -> np.ndarray:
    """Seed atoms from random distinct training vectors.

    Candidates whose direction nearly duplicates an accepted atom
    (|cosine| > 0.999) are redrawn. When the training set cannot supply
    ``n_atoms`` distinct directions, strict mode raises while lax mode
    (used inside the learning loop, where unused atoms are reseeded
    anyway) fills the shortfall with random unit vectors.
    """
    n, count = signals.shape
    if count < n_atoms:
        raise ValueError(f"need at least {n_atoms} training vectors, got {count}")
    norms = np.linalg.norm(signals, axis=0)
    candidates = np.flatnonzero(norms > 1e-12)
    accepted = np.empty((n, n_atoms))
    taken = 0
    for idx in rng.permutation(candidates):
        unit = signals[:, idx] / norms[idx]
        if taken and np.max(np.abs(accepted[:, :taken].T @ unit)) > _DUPLICATE_COSINE:
            continue
        accepted[:, taken] = unit * _sign_fix(unit)
        taken += 1
        if taken == n_atoms:
            break
    if taken < n_atoms:
        if strict:
            raise ValueError(
                f"too few distinct training vectors: found {taken} of {n_atoms} required"
            )
        while taken < n_atoms:
            unit = rng.standard_normal(n)
            unit /= np.linalg.norm(unit)
            accepted[:, taken] = unit * _sign_fix(unit)
            taken += 1
    return accepted


def _leading_direction(residual: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Principal left singular direction of ``residual`` by power iteration.

    Warm-started from ``start`` so the Rayleigh quotient never drops below
    the starting value, which keeps every atom update non-increasing in
    restricted reconstruction error regardless of convergence.
    """
    fro = np.linalg.norm(residual)
    if fro <= 1e-15:
        return start
    d = start
    if np.linalg.norm(residual.T @ d) <= 1e-12 * fro:
        col = int(np.argmax(np.einsum("nc,nc->c", residual, residual)))
        d = residual[:, col] / np.linalg.norm(residual[:, col])
    for _ in range(_POWER_MAX_ITER):
        step = residual @ (residual.T @ d)
        nrm = np.linalg.norm(step)
        if nrm <= 1e-15:
            break
        nxt = step / nrm
        if np.linalg.norm(nxt - d) <= _POWER_TOL:
            d = nxt
            break
        d = nxt
    return d


def _ksvd(signals: np.ndarray, n_atoms: int, sparsity: int, iterations: int,
          rng: np.random.Generator, min_improvement: float | None):
    n, count = signals.shape
    atoms = _init_atoms(signals, n_atoms, rng, strict=False)
    codes = np.zeros((n_atoms, count))
    old_col_err = np.einsum("nc,nc->c", signals, signals)
    residual = signals.copy()
    denom = np.sqrt(float(n) * float(count))
    report = TrainingReport()
    for iteration in range(iterations):
        support, counts, coefs, _ = _batch_omp_arrays(atoms, signals, sparsity)
        new_codes = dense_codes(support, counts, coefs, n_atoms)
        new_residual = signals - atoms @ new_codes
        new_col_err = np.einsum("nc,nc->c", new_residual, new_residual)
        # Keep the previous code for any column the greedy pass made worse;
        # this pins the training error to be non-increasing.
        regressed = new_col_err > old_col_err
        if regressed.any():
            new_codes[:, regressed] = codes[:, regressed]
            new_residual[:, regressed] = residual[:, regressed]
        codes = new_codes
        residual = new_residual

        replaced = 0
        reseeded: set[int] = set()
        for atom_idx in range(n_atoms):
            used = np.flatnonzero(codes[atom_idx])
            if used.size == 0:
                col = _worst_column(signals, residual, reseeded)
                if col is None:
                    continue
                reseeded.add(col)
                fresh = signals[:, col]
                fresh = fresh / np.linalg.norm(fresh)
                atoms[:, atom_idx] = fresh * _sign_fix(fresh)
                replaced += 1
                continue
            err = residual[:, used] + np.outer(atoms[:, atom_idx], codes[atom_idx, used])
            direction = _leading_direction(err, atoms[:, atom_idx])
            direction = direction * _sign_fix(direction)
            row = err.T @ direction
            residual[:, used] = err - np.outer(direction, row)
            atoms[:, atom_idx] = direction
            codes[atom_idx, used] = row

        residual = signals - atoms @ codes
        old_col_err = np.einsum("nc,nc->c", residual, residual)
        error = float(np.sqrt(old_col_err.sum())) / denom
        report.errors.append(error)
        report.replaced.append(replaced)
        if min_improvement is not None and iteration:
            prev = report.errors[-2]
            if prev <= 0.0 or (prev - error) / prev < min_improvement:
                break
    return atoms, report


def _worst_column(signals: np.ndarray, residual: np.ndarray, skip: set[int]):
    """Index of the worst-reconstructed usable training vector."""
    err = np.einsum("nc,nc->c", residual, residual)
    for col in np.argsort(-err):
        col = int(col)
        if col in skip:
            continue
        if np.linalg.norm(signals[:, col]) > 1e-12:
            return col
    return None


def init_dictionary(patches, n_atoms: int, seed=0) -> Dictionary:
    """Initial dictionary drawn from random distinct training patches."""
    signals = patches.data if isinstance(patches, PatchSet) else np.asarray(patches, dtype=np.float64)
    rng = np.random.default_rng(seed)
    side = patches.patch_side if isinstance(patches, PatchSet) else None
    return Dictionary(_init_atoms(signals, n_atoms, rng), patch_side=side)


def learn(patches: PatchSet, config: LearnConfig) -> tuple[Dictionary, TrainingReport]:
    """Learn an overcomplete dictionary from training patches.

    Each iteration sparse-codes every patch against the current dictionary
    and then updates the atoms one at a time: the columns using an atom
    define a residual matrix whose leading singular pair replaces the atom
    and its coefficient row. Atoms used by no column are reseeded from the
    worst-reconstructed patch.
    """
    if patches.patch_side != config.patch_side:
        raise ValueError(
            f"patches have side {patches.patch_side}, config expects {config.patch_side}"
        )
    if patches.count == 0:
        raise ValueError("cannot learn from an empty patch set")
    rng = np.random.default_rng(config.seed)
    atoms, report = _ksvd(
        patches.data, config.n_atoms, config.sparsity, config.iterations,
        rng, config.min_improvement,
    )
    dictionary = Dictionary(atoms, sparsity=config.sparsity, patch_side=config.patch_side)
    return dictionary, report


def save_dictionary(dictionary: Dictionary, path) -> None:
    """Write a dictionary to the binary `.spqd` format.

    Layout: magic ``SPQD``, then format version, signal dimension, atom
    count, sparsity, and patch side as little-endian u32, then the atom
    matrix as little-endian float64 in column-major order, then a 64-bit
    BLAKE2b checksum of everything before it.
    """
    atoms = dictionary.atoms
    header = _MAGIC + struct.pack(
        "<IIIII",
        _FORMAT_VERSION,
        atoms.shape[0],
        atoms.shape[1],
        dictionary.sparsity or 0,
        dictionary.patch_side or 0,
    )
    payload = header + atoms.flatten(order="F").astype("<f8").tobytes()
    checksum = hashlib.blake2b(payload, digest_size=8).digest()
    Path(path).write_bytes(payload + checksum)


def load_dictionary(path) -> Dictionary:
    """Read a `.spqd` file; the round trip through save is bit exact."""
    blob = Path(path).read_bytes()
    head_len = len(_MAGIC) + 20
    if len(blob) < head_len + 8:
        raise DictionaryFormatError(f"{path}: file truncated")
    if blob[: len(_MAGIC)] != _MAGIC:
        raise DictionaryFormatError(f"{path}: bad magic")
    version, dim, n_atoms, sparsity, patch_side = struct.unpack(
        "<IIIII", blob[len(_MAGIC): head_len]
    )
    if version != _FORMAT_VERSION:
        raise DictionaryFormatError(f"{path}: unsupported format version {version}")
    expected = head_len + dim * n_atoms * 8 + 8
    if len(blob) != expected:
        raise DictionaryFormatError(
            f"{path}: expected {expected} bytes for a {dim}x{n_atoms} dictionary, got {len(blob)}"
        )
    payload, checksum = blob[:-8], blob[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != checksum:
        raise DictionaryFormatError(f"{path}: checksum mismatch")
    atoms = np.frombuffer(blob[head_len:-8], dtype="<f8").reshape(
        (dim, n_atoms), order="F"
    )
    try:
        return Dictionary(
            atoms.astype(np.float64),
            sparsity=sparsity or None,
            patch_side=patch_side or None,
        )
    except ValueError as exc:
        raise DictionaryFormatError(f"{path}: {exc}") from exc


class KSvd(TransformerMixin, BaseEstimator):
    """Dictionary learning estimator with the scikit-learn conventions.

    ``fit`` expects samples in rows; the learned dictionary is exposed both
    as :class:`Dictionary` (``dictionary_``) and as the raw atom matrix
    (``atoms_``). ``transform`` returns dense sparse-code rows.

    Parameters
    ----------
    n_atoms : int
        Atom count; must exceed the feature dimension (overcomplete).
    sparsity : int
        Maximum nonzeros per sample code.
    n_iterations : int
        Number of coding/update rounds.
    min_improvement : float or None
        Early-stop threshold on the relative training-error drop.
    random_state : int, Generator, or None
        Seeds atom initialization.
    """

    def __init__(self, n_atoms=242, sparsity=12, n_iterations=30,
                 min_improvement=1e-4, random_state=None):
        self.n_atoms = n_atoms
        self.sparsity = sparsity
        self.n_iterations = n_iterations
        self.min_improvement = min_improvement
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.n_atoms <= X.shape[1]:
            raise ValueError(
                f"n_atoms={self.n_atoms} must exceed the feature dimension {X.shape[1]}"
            )
        if not 0 < self.sparsity <= X.shape[1]:
            raise ValueError(f"sparsity must lie in [1, n_features], got {self.sparsity}")
        rng = np.random.default_rng(self.random_state)
        atoms, report = _ksvd(
            X.T, self.n_atoms, self.sparsity, self.n_iterations, rng,
            self.min_improvement,
        )
        self.dictionary_ = Dictionary(atoms, sparsity=self.sparsity)
        self.atoms_ = self.dictionary_.atoms
        self.errors_ = list(report.errors)
        self.replaced_ = list(report.replaced)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "dictionary_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        support, counts, coefs, _ = _batch_omp_arrays(self.atoms_, X.T, self.sparsity)
        return dense_codes(support, counts, coefs, self.n_atoms).T
