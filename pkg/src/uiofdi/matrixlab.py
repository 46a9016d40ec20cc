"""Dense linear-algebra kernel: one-sided pseudo-inverses, tolerance-based rank,
column multi-index enumeration, uniform sub-rank and stability checks.

All operations are pure functions of their inputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, RankDeficient

# Relative singular-value threshold used by every rank decision in the library.
# Chosen to stay robust at the case study's magnitude spread (input-effect
# matrices carry entries from ~1e-9 up to ~1e9).
DEFAULT_RANK_TOL = 1e-9


@dataclass(frozen=True)
class MultiIndex:
    """Ordered tuple of distinct 1-based column indices with an explicit domain.

    Canonical multi-indices are strictly increasing; explicitly supplied ones
    may carry a deliberate ordering (the slot order fixes which output
    direction each column is pinned to), so only distinctness is enforced.
    """

    indices: tuple[int, ...]
    domain: int

    def __post_init__(self):
        idx = tuple(int(j) for j in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(idx) == 0:
            raise InvalidArgument("multi-index must contain at least one index")
        if len(set(idx)) != len(idx):
            raise InvalidArgument(f"multi-index entries must be distinct: {idx}")
        if min(idx) < 1 or max(idx) > self.domain:
            raise InvalidArgument(f"multi-index {idx} out of domain 1..{self.domain}")

    @property
    def length(self) -> int:
        return len(self.indices)

    @property
    def is_increasing(self) -> bool:
        return all(a < b for a, b in zip(self.indices, self.indices[1:]))

    def columns(self, matrix: np.ndarray) -> np.ndarray:
        """Extract the selected columns (1-based) in slot order."""
        return np.asarray(matrix)[:, [j - 1 for j in self.indices]]


@dataclass(frozen=True)
class RankReport:
    rows: int
    cols: int
    rank: int
    tol: float
    singular_values: tuple[float, ...]


def numerical_rank(matrix, tol: float = DEFAULT_RANK_TOL) -> RankReport:
    """Numerical rank: number of singular values above tol * sigma_max."""
    if tol <= 0:
        raise InvalidArgument("tol must be positive")
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.size == 0:
        return RankReport(m.shape[0], m.shape[1], 0, tol, ())
    sv = np.linalg.svd(m, compute_uv=False)
    smax = sv[0]
    rank = 0 if smax == 0.0 else int(np.count_nonzero(sv > tol * smax))
    return RankReport(m.shape[0], m.shape[1], rank, tol, tuple(sv))


def right_pseudo_inverse(G, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Right pseudo-inverse G^T (G G^T)^{-1} of a full-row-rank k x m matrix.

    Returns the m x k matrix X with G @ X = I_k; X @ tau is the minimum-norm
    exact solution of G u = tau.

    Raises
    ------
    RankDeficient
        If the numerical row rank of G is below k.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    k = G.shape[0]
    if numerical_rank(G, tol).rank < k:
        raise RankDeficient(f"matrix has row rank < {k}")
    # Solve (G G^T) Y = G, then X = Y^T.
    Y = np.linalg.solve(G @ G.T, G)
    return Y.T


def left_pseudo_inverse(M, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Left pseudo-inverse (M^T M)^{-1} M^T of a full-column-rank n x l matrix.

    Returns the l x n matrix X with X @ M = I_l.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    ell = M.shape[1]
    if numerical_rank(M, tol).rank < ell:
        raise RankDeficient(f"matrix has column rank < {ell}")
    return np.linalg.solve(M.T @ M, M.T)


def enumerate_multi_indices(length: int, domain: int) -> list[MultiIndex]:
    """All strictly increasing multi-indices of the given length, in
    lexicographic order; there are C(domain, length) of them."""
    if length < 1 or length > domain:
        raise InvalidArgument(f"need 1 <= length <= domain, got ({length}, {domain})")
    return [
        MultiIndex(combo, domain)
        for combo in itertools.combinations(range(1, domain + 1), length)
    ]


def _normalized_columns(W: np.ndarray) -> np.ndarray | None:
    # Unit-norm columns keep rank tests meaningful when raw entries are ~1e-9;
    # returns None when some column is numerically zero.
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms == 0.0) or np.any(norms < 1e-300):
        return None
    return W / norms


def uniform_sub_rank(W, tol: float = DEFAULT_RANK_TOL) -> int:
    """Largest l such that EVERY l-column subset of W has full rank l.

    Columns are normalized to unit Euclidean norm before the rank tests.
    Returns 0 for an empty/all-zero matrix or when any single column is
    numerically zero.  The search ascends l = 1, 2, ... and stops at the
    first failing level (the all-subsets property is monotone in l).
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.size == 0 or not np.any(W):
        return 0
    Wn = _normalized_columns(W)
    if Wn is None:
        return 0
    n, m = Wn.shape
    kmax = numerical_rank(Wn, tol).rank
    k0 = 0
    for ell in range(1, kmax + 1):
        for combo in itertools.combinations(range(m), ell):
            if numerical_rank(Wn[:, combo], tol).rank < ell:
                return k0
        k0 = ell
    return k0


def is_hurwitz(F, margin: float = 0.0) -> bool:
    """True iff every eigenvalue of the square matrix F has real part < -margin."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[0] != F.shape[1]:
        raise InvalidArgument("matrix must be square")
    if margin < 0:
        raise InvalidArgument("margin must be >= 0")
    return bool(np.all(np.linalg.eigvals(F).real < -margin))
