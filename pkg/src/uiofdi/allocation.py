"""Control allocation: nominal minimum-norm, reduced (post-fault) and
ratio-constrained cluster allocation, plus the aggregated overall input
columns used by cluster-residual observer design.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import matrixlab
from .errors import (
    InsufficientRedundancy,
    InvalidArgument,
    MissingCoefficients,
    RankDeficient,
    ReducedRankDeficient,
)
from .plant import ClusterSpec

# Reference inputs smaller than this (relative to the cluster's largest
# member) fall back to ratio 1 when snapshotting coefficients.
_RATIO_FLOOR = 1e-6


@dataclass(frozen=True)
class AllocationResult:
    u: np.ndarray
    achieved: np.ndarray  # G @ u, the reference effect handed to the observers
    exact: bool
    zeroed: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "achieved", np.asarray(self.achieved, dtype=float))
        object.__setattr__(self, "zeroed", tuple(int(i) for i in self.zeroed))


@dataclass(frozen=True)
class RatioConstraintSet:
    """Per-cluster input ratios u_j = zeta_j * u_ref.

    `entries` maps the 1-based cluster id to (reference actuator index,
    {member index: zeta}).  Every non-reference member of a constrained
    cluster carries a coefficient; single-member clusters need no entry.
    """

    entries: dict[int, tuple[int, dict[int, float]]] = field(default_factory=dict)

    def coefficients(self, cluster_id: int) -> tuple[int, dict[int, float]]:
        return self.entries[cluster_id]

    @staticmethod
    def from_reference_ratios(
        clusters: ClusterSpec, ratios: "dict[int, float] | list[float]"
    ) -> "RatioConstraintSet":
        """Build the constraint set with one coefficient per multi-member
        cluster: the last member is the reference and all earlier members
        share the single ratio (the azimuth-thruster pattern)."""
        multi = [h for h in range(1, clusters.q + 1) if len(clusters.groups[h - 1]) > 1]
        if not isinstance(ratios, dict):
            if len(ratios) != len(multi):
                raise MissingCoefficients(
                    f"need {len(multi)} ratios for clusters {multi}, got {len(ratios)}"
                )
            ratios = dict(zip(multi, ratios))
        entries = {}
        for h in multi:
            if h not in ratios:
                raise MissingCoefficients(f"no ratio for cluster {h}")
            group = clusters.groups[h - 1]
            ref = group[-1]
            entries[h] = (ref, {j: float(ratios[h]) for j in group[:-1]})
        return RatioConstraintSet(entries)

    @staticmethod
    def from_input_snapshot(
        clusters: ClusterSpec, u: np.ndarray
    ) -> "RatioConstraintSet":
        """zeta_j = u_j / u_ref taken from the current inputs, with the last
        member of each cluster as the reference; near-zero references fall
        back to zeta = 1."""
        u = np.asarray(u, dtype=float)
        entries = {}
        for h, group in enumerate(clusters.groups, start=1):
            if len(group) == 1:
                continue
            ref = group[-1]
            uref = u[ref - 1]
            scale = max(np.max(np.abs(u[[j - 1 for j in group]])), 1.0)
            coeffs = {}
            for j in group[:-1]:
                if abs(uref) < _RATIO_FLOOR * scale:
                    coeffs[j] = 1.0
                else:
                    coeffs[j] = float(u[j - 1] / uref)
            entries[h] = (ref, coeffs)
        return RatioConstraintSet(entries)


def allocate_nominal(G, tau_c, tol: float = matrixlab.DEFAULT_RANK_TOL) -> AllocationResult:
    """Minimum-norm exact allocation u = G^{-R} tau_c.

    Raises RankDeficient when G loses row rank (no exact solution family).
    """
    G = np.asarray(G, dtype=float)
    tau_c = np.asarray(tau_c, dtype=float)
    Gpr = matrixlab.right_pseudo_inverse(G, tol)
    u = Gpr @ tau_c
    return AllocationResult(u=u, achieved=G @ u, exact=True)


def reallocate_reduced(
    G, faulty, tau_c, tol: float = matrixlab.DEFAULT_RANK_TOL
) -> AllocationResult:
    """Exact re-allocation with the faulty actuator columns forced to zero.

    The remaining components solve the reduced problem by right
    pseudo-inverse.  Raises InsufficientRedundancy when more than m - k
    columns are removed and ReducedRankDeficient when the surviving columns
    no longer span the effect space (exact recovery impossible).
    """
    G = np.asarray(G, dtype=float)
    tau_c = np.asarray(tau_c, dtype=float)
    k, m = G.shape
    faulty = sorted({int(i) for i in faulty})
    if any(i < 1 or i > m for i in faulty):
        raise InvalidArgument(f"faulty indices {faulty} out of 1..{m}")
    if not faulty:
        return allocate_nominal(G, tau_c, tol)
    if len(faulty) > m - k:
        raise InsufficientRedundancy(
            f"cannot zero {len(faulty)} of {m} actuators with k={k} effects"
        )
    keep = [i for i in range(m) if (i + 1) not in faulty]
    Gred = G[:, keep]
    try:
        u_red = matrixlab.right_pseudo_inverse(Gred, tol) @ tau_c
    except RankDeficient as exc:
        raise ReducedRankDeficient(
            f"columns {faulty} removed: reduced matrix lost row rank"
        ) from exc
    u = np.zeros(m)
    u[keep] = u_red
    return AllocationResult(u=u, achieved=G @ u, exact=True, zeroed=tuple(faulty))


def _overall_column(W, group, ref, coeffs) -> np.ndarray:
    col = W[:, ref - 1].copy()
    for j in group:
        if j == ref:
            continue
        if j not in coeffs:
            raise MissingCoefficients(f"no ratio coefficient for actuator {j}")
        col = col + coeffs[j] * W[:, j - 1]
    return col


def cluster_overall_columns(
    W, clusters: ClusterSpec, ratios: RatioConstraintSet
) -> np.ndarray:
    """Reduced-order input matrix W*: one aggregated column per cluster.

    Column h is W_ref + sum_j zeta_j W_j over the cluster members; a
    single-member cluster passes its column through unchanged.
    """
    W = np.asarray(W, dtype=float)
    cols = []
    for h, group in enumerate(clusters.groups, start=1):
        if len(group) == 1:
            cols.append(W[:, group[0] - 1].copy())
            continue
        if h not in ratios.entries:
            raise MissingCoefficients(f"cluster {h} has no ratio coefficients")
        ref, coeffs = ratios.entries[h]
        cols.append(_overall_column(W, group, ref, coeffs))
    return np.column_stack(cols)


def check_cluster_redundancy(clusters: ClusterSpec, m: int, k: int) -> None:
    """Warn when a cluster pair exceeds the redundancy budget
    2 + m - k >= alpha_i + alpha_j required to constrain both at once."""
    alphas = clusters.cardinalities
    for i in range(len(alphas)):
        for j in range(i + 1, len(alphas)):
            if alphas[i] + alphas[j] > 2 + m - k:
                warnings.warn(
                    f"clusters {i + 1} and {j + 1} exceed the ratio-constraint "
                    f"redundancy budget ({alphas[i]}+{alphas[j]} > {2 + m - k})",
                    stacklevel=2,
                )


def allocate_with_ratios(
    G,
    clusters: ClusterSpec,
    ratios: RatioConstraintSet,
    tau_c,
    tol: float = matrixlab.DEFAULT_RANK_TOL,
) -> AllocationResult:
    """Exact allocation under per-cluster ratio constraints.

    One magnitude per cluster (the reference member's input) is solved by
    right pseudo-inverse of the aggregated k x q matrix; the other members
    follow from u_j = zeta_j * u_ref, so the ratios hold exactly by
    construction.
    """
    G = np.asarray(G, dtype=float)
    tau_c = np.asarray(tau_c, dtype=float)
    k, m = G.shape
    check_cluster_redundancy(clusters, m, k)
    Gstar = cluster_overall_columns(G, clusters, ratios)
    try:
        w = matrixlab.right_pseudo_inverse(Gstar, tol) @ tau_c
    except RankDeficient as exc:
        raise ReducedRankDeficient(
            "aggregated cluster columns lost row rank; adjust the ratios"
        ) from exc
    u = np.zeros(m)
    for h, group in enumerate(clusters.groups, start=1):
        if len(group) == 1:
            u[group[0] - 1] = w[h - 1]
            continue
        ref, coeffs = ratios.entries[h]
        u[ref - 1] = w[h - 1]
        for j in group:
            if j != ref:
                u[j - 1] = coeffs[j] * w[h - 1]
    return AllocationResult(u=u, achieved=G @ u, exact=True)
