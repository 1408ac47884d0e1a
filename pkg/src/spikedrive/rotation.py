"""Orthogonal mixing: fast Walsh-Hadamard transform and random rotations.

The fast transform touches each row in O(d log2 d) additions, so rotations
never materialize a d x d matrix outside of test oracles; the one exception
is the QR-sampled family, which is dense by construction and reserved for
Monte Carlo work at small d.

Two preprocessing orderings are provided. `scale_then_rotate` scales each
activation column by the normalization gain for that dimension and then
rotates, so the rotation mixes the gain-weighted magnitudes that the
quantizer will actually see. `fuse_rotation_into_weights` is the competing
ordering that folds the rotation and gains into the weight matrix instead;
it is kept as a comparison baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimMismatchError, EmptySubsetError, NotPowerOfTwoError
from .tensor import quant_cost, real_matrix

__all__ = [
    "OrthoKind",
    "OrthogonalOp",
    "GammaVector",
    "fwht",
    "sample_orthogonal",
    "scale_then_rotate",
    "fuse_rotation_into_weights",
    "dispersion_estimate",
]


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class OrthoKind(Enum):
    HADAMARD_PLAIN = "hadamard-plain"
    HADAMARD_RANDOM_SIGN = "hadamard-random-sign"
    HAAR_QR = "haar-qr"


@dataclass(frozen=True)
class GammaVector:
    """Positive per-dimension scales (normalization gains)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise DimMismatchError("gamma vector is empty")
        if not np.isfinite(v).all() or (v <= 0).any():
            raise ValueError("gamma values must be positive finite reals")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size

    @staticmethod
    def ones(dim: int) -> "GammaVector":
        return GammaVector(np.ones(dim))


def fwht(x, normalize: bool = True) -> np.ndarray:
    """Walsh-Hadamard transform of each row (Sylvester ordering).

    With `normalize` the matrix applied is H_d / sqrt(d), which is orthonormal
    and involutive: fwht(fwht(x)) == x.
    """
    x = real_matrix(x)
    rows, d = x.shape
    if not _is_pow2(d):
        raise NotPowerOfTwoError(f"column count {d} is not a power of two")
    a = x.copy()
    h = 1
    while h < d:
        a = a.reshape(rows, d // (2 * h), 2, h)
        top = a[:, :, 0, :] + a[:, :, 1, :]
        bot = a[:, :, 0, :] - a[:, :, 1, :]
        a = np.stack((top, bot), axis=2).reshape(rows, d)
        h *= 2
    if normalize:
        a /= math.sqrt(d)
    return real_matrix(a)


@dataclass(frozen=True)
class OrthogonalOp:
    """An orthogonal right-multiplication x -> x Q, applied functionally.

    Hadamard kinds evaluate through the fast transform; only the QR-sampled
    kind stores a dense matrix.
    """

    dim: int
    kind: OrthoKind
    seed: int | None = None
    signs: np.ndarray | None = field(default=None, repr=False)
    dense: np.ndarray | None = field(default=None, repr=False)

    def apply(self, x) -> np.ndarray:
        """Return x @ Q for row-major x with x.cols == dim."""
        x = real_matrix(x)
        if x.shape[1] != self.dim:
            raise DimMismatchError(f"x has {x.shape[1]} cols, op dim is {self.dim}")
        if self.kind is OrthoKind.HADAMARD_PLAIN:
            return fwht(x, normalize=True)
        if self.kind is OrthoKind.HADAMARD_RANDOM_SIGN:
            # Q = (H / sqrt(d)) Diag(s): transform, then flip sign per column.
            return real_matrix(fwht(x, normalize=True) * self.signs)
        return real_matrix(x @ self.dense)

    def apply_transpose(self, x) -> np.ndarray:
        """Return x @ Q^T, the inverse of `apply`."""
        x = real_matrix(x)
        if x.shape[1] != self.dim:
            raise DimMismatchError(f"x has {x.shape[1]} cols, op dim is {self.dim}")
        if self.kind is OrthoKind.HADAMARD_PLAIN:
            return fwht(x, normalize=True)
        if self.kind is OrthoKind.HADAMARD_RANDOM_SIGN:
            # Q^T = Diag(s) (H / sqrt(d)): flip signs first, then transform.
            return fwht(x * self.signs, normalize=True)
        return real_matrix(x @ self.dense.T)

    def rotate_weights(self, w) -> np.ndarray:
        """Return Q^T @ w, the weight-side counterpart of `apply`.

        With activations a and weights w, (a Q) @ (Q^T w) == a @ w.
        """
        w = real_matrix(w)
        if w.shape[0] != self.dim:
            raise DimMismatchError(f"w has {w.shape[0]} rows, op dim is {self.dim}")
        # (Q^T w)^T == w^T Q, so route the transpose through `apply`.
        return real_matrix(self.apply(w.T).T)


def sample_orthogonal(dim: int, kind: OrthoKind, seed: int = 0) -> OrthogonalOp:
    """Draw a deterministic orthogonal op of the requested family.

    HAAR_QR takes the QR factorization of a seeded Gaussian matrix and fixes
    the signs of R's diagonal, which makes Q Haar distributed.
    HADAMARD_RANDOM_SIGN composes the fast transform with a seeded uniform
    sign flip per dimension.
    """
    if dim < 1:
        raise DimMismatchError(f"dim must be >= 1, got {dim}")
    if kind in (OrthoKind.HADAMARD_PLAIN, OrthoKind.HADAMARD_RANDOM_SIGN):
        if not _is_pow2(dim):
            raise NotPowerOfTwoError(f"dim {dim} is not a power of two")
    if kind is OrthoKind.HADAMARD_PLAIN:
        return OrthogonalOp(dim=dim, kind=kind)
    rng = np.random.default_rng(seed)
    if kind is OrthoKind.HADAMARD_RANDOM_SIGN:
        signs = rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
        signs.flags.writeable = False
        return OrthogonalOp(dim=dim, kind=kind, seed=seed, signs=signs)
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    q.flags.writeable = False
    return OrthogonalOp(dim=dim, kind=kind, seed=seed, dense=q)


def scale_then_rotate(u, gamma: GammaVector, op: OrthogonalOp) -> np.ndarray:
    """Activation-side ordering: (u Diag(gamma)) Q.

    Scaling first means the rotation disperses exactly the gain-weighted
    magnitudes whose squared values form the quantization cost.
    """
    u = real_matrix(u)
    if u.shape[1] != gamma.dim or gamma.dim != op.dim:
        raise DimMismatchError(
            f"cols={u.shape[1]}, gamma dim={gamma.dim}, op dim={op.dim} must all match"
        )
    return op.apply(u * gamma.values)


def fuse_rotation_into_weights(w, gamma: GammaVector, op: OrthogonalOp) -> np.ndarray:
    """Weight-side ordering: Q^T w Diag(gamma), the comparison baseline.

    Satisfies (u Q) @ fuse(w) == u @ w Diag(gamma) for any u, since Q Q^T = I.
    """
    w = real_matrix(w)
    if w.shape[0] != op.dim:
        raise DimMismatchError(f"w has {w.shape[0]} rows, op dim is {op.dim}")
    if w.shape[1] != gamma.dim:
        raise DimMismatchError(f"w has {w.shape[1]} cols, gamma dim is {gamma.dim}")
    return real_matrix(op.rotate_weights(w) * gamma.values)


def dispersion_estimate(
    x,
    subset,
    kind: OrthoKind = OrthoKind.HAAR_QR,
    trials: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte Carlo check that random rotation spreads quantization cost.

    Returns (measured, predicted): the empirical mean over `trials` sampled
    rotations of the cost restricted to `subset` columns, and the closed-form
    (m/d) * total cost. With subset == all columns the two agree exactly on
    every trial because rotation preserves the Frobenius norm.
    """
    x = real_matrix(x)
    subset = np.unique(np.asarray(subset, dtype=np.int64).reshape(-1))
    if subset.size == 0:
        raise EmptySubsetError("subset of columns is empty")
    d = x.shape[1]
    if subset.min() < 0 or subset.max() >= d:
        raise DimMismatchError(f"subset indices must lie in [0, {d})")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    total = float(np.sum(quant_cost(x)))
    predicted = (subset.size / d) * total
    child_seeds = np.random.SeedSequence(seed).generate_state(trials)
    acc = 0.0
    for s in child_seeds:
        op = sample_orthogonal(d, kind, seed=int(s))
        rotated = op.apply(x)
        acc += float(np.sum(quant_cost(rotated)[:, subset]))
    return acc / trials, predicted
