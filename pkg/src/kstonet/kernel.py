"""RBF kernel evaluation, Gram matrices and bandwidth defaults."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class KernelSpec:
    """Bandwidth of the RBF kernel ``exp(-gamma * ||x - z||^2)``.

    ``per_unit_gamma`` lets every first-layer unit use its own bandwidth;
    when set, its length must equal the number of first-layer units.
    """

    gamma: float
    per_unit_gamma: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.per_unit_gamma is not None:
            object.__setattr__(self, "per_unit_gamma", tuple(float(g) for g in self.per_unit_gamma))
            if any(not np.isfinite(g) or g <= 0 for g in self.per_unit_gamma):
                raise ConfigError("every per-unit gamma must be positive")

    def unit_gammas(self, n_units: int) -> tuple[float, ...]:
        if self.per_unit_gamma is None:
            return (float(self.gamma),) * n_units
        if len(self.per_unit_gamma) != n_units:
            raise ConfigError(
                f"per_unit_gamma has {len(self.per_unit_gamma)} entries, expected {n_units}")
        return self.per_unit_gamma


@dataclass(frozen=True)
class GramMatrix:
    """Read-only matrix of kernel values ``K(X_i, Z_j)``."""

    values: np.ndarray
    gamma: float
    row_ids: np.ndarray = field(repr=False, default=None)
    col_ids: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        n, m = self.values.shape
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(n))
        if self.col_ids is None:
            object.__setattr__(self, "col_ids", np.arange(m))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _as_matrix(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InputError(f"{name} must be a 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite values")
    return X


def rbf_eval(x, z, gamma: float) -> float:
    """Kernel value between two vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    z = np.asarray(z, dtype=np.float64).ravel()
    if x.shape != z.shape:
        raise InputError(f"dimension mismatch: {x.shape[0]} vs {z.shape[0]}")
    if gamma <= 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def default_gamma(X) -> float:
    """``1 / (p * Var(X))`` with the variance pooled over all column-centred entries."""
    X = _as_matrix(X, "X")
    n, p = X.shape
    if n < 2:
        raise InputError("default_gamma needs at least two samples")
    centred = X - X.mean(axis=0)
    var = float(np.mean(centred**2))
    if not var > 0:
        raise ConfigError("inputs have zero variance; set gamma explicitly")
    return 1.0 / (p * var)


def rbf_matrix(X: np.ndarray, Z: np.ndarray, gamma: float) -> np.ndarray:
    """Dense kernel values; rows index ``X``, columns index ``Z``."""
    d2 = cdist(X, Z, metric="sqeuclidean")
    np.multiply(d2, -gamma, out=d2)
    return np.exp(d2, out=d2)


def gram(X, Z=None, gamma: float = 1.0, row_ids: Sequence[int] | None = None,
         col_ids: Sequence[int] | None = None) -> GramMatrix:
    """Kernel matrix between the rows of ``X`` and ``Z`` (``Z`` defaults to ``X``)."""
    X = _as_matrix(X, "X")
    Z = X if Z is None else _as_matrix(Z, "Z")
    if X.shape[1] != Z.shape[1]:
        raise InputError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    if not gamma > 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    values = rbf_matrix(X, Z, gamma)
    values.setflags(write=False)
    return GramMatrix(values, float(gamma),
                      None if row_ids is None else np.asarray(row_ids),
                      None if col_ids is None else np.asarray(col_ids))


def _digest(a: np.ndarray) -> str:
    a = np.ascontiguousarray(a, dtype=np.float64)
    h = hashlib.blake2b(a.tobytes(), digest_size=16)
    h.update(str(a.shape).encode())
    return h.hexdigest()


class GramCache:
    """Memoises Gram matrices keyed by the content of both inputs and gamma."""

    def __init__(self):
        self._store: dict[tuple[str, str, float], GramMatrix] = {}

    def __len__(self):
        return len(self._store)

    def get(self, X, Z=None, gamma: float = 1.0) -> GramMatrix:
        X = _as_matrix(X, "X")
        Zm = X if Z is None else _as_matrix(Z, "Z")
        key = (_digest(X), _digest(Zm), float(gamma))
        hit = self._store.get(key)
        if hit is None:
            hit = gram(X, Zm, gamma)
            self._store[key] = hit
        return hit

    def clear(self):
        self._store.clear()
