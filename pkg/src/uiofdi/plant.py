"""Overactuated LTI plant with multiplicative actuator/effector faults, plus
the five-thruster vessel model builder used throughout the test scenarios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import matrixlab
from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    InvalidArgument,
    SingularInertia,
)


@dataclass(frozen=True)
class ClusterSpec:
    """Partition of the actuator indices 1..m into contiguous groups.

    groups[h] lists the 1-based actuator indices of cluster h+1; groups are
    disjoint, ordered and cover 1..m.
    """

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        flat = [i for g in groups for i in g]
        if not groups or any(len(g) == 0 for g in groups):
            raise InvalidArgument("clusters must be non-empty")
        if sorted(flat) != list(range(1, len(flat) + 1)):
            raise InvalidArgument(f"clusters must partition 1..m, got {flat}")

    @property
    def m(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def q(self) -> int:
        return len(self.groups)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    def cluster_of(self, actuator: int) -> int:
        """1-based cluster id owning the given 1-based actuator index."""
        for h, g in enumerate(self.groups, start=1):
            if actuator in g:
                return h
        raise IndexOutOfRange(f"actuator {actuator} not in any cluster")

    @staticmethod
    def singletons(m: int) -> "ClusterSpec":
        return ClusterSpec(tuple((i,) for i in range(1, m + 1)))


@dataclass(frozen=True)
class FaultEntry:
    """One effectiveness trajectory: before `onset` the factor is exactly 1,
    afterwards `profile(t - onset)` clamped into [0, 1]."""

    target: int | str  # actuator index (per-actuator) or cluster id (per-cluster)
    profile: Callable[[float], float]
    onset: float = 0.0

    def effectiveness(self, t: float) -> float:
        if t < self.onset:
            return 1.0
        return min(1.0, max(0.0, float(self.profile(t - self.onset))))


def exponential_decay(rate: float) -> Callable[[float], float]:
    """delta(t) = exp(-rate * t), the fading-effectiveness profile."""
    return lambda t: math.exp(-rate * t)


def constant_loss(level: float) -> Callable[[float], float]:
    return lambda t: level


@dataclass(frozen=True)
class FaultProfile:
    """Collection of per-actuator or per-cluster effectiveness trajectories."""

    mode: str  # "per-actuator" | "per-cluster"
    entries: tuple[FaultEntry, ...] = ()

    def __post_init__(self):
        if self.mode not in ("per-actuator", "per-cluster"):
            raise InvalidArgument(f"unknown fault mode {self.mode!r}")
        object.__setattr__(self, "entries", tuple(self.entries))

    @staticmethod
    def fault_free() -> "FaultProfile":
        return FaultProfile("per-actuator", ())


def fault_matrix(
    profile: FaultProfile,
    clusters: ClusterSpec | None,
    m: int,
    t: float,
) -> np.ndarray:
    """Diagonal effectiveness matrix Delta(t) for m actuators.

    Per-actuator entries scale a single diagonal slot; per-cluster entries
    scale every slot of the targeted cluster identically.  Untargeted slots
    stay at 1.
    """
    if t < 0:
        raise InvalidArgument("t must be >= 0")
    diag = np.ones(m)
    for entry in profile.entries:
        val = entry.effectiveness(t)
        if profile.mode == "per-actuator":
            i = int(entry.target)
            if not 1 <= i <= m:
                raise IndexOutOfRange(f"actuator index {i} out of 1..{m}")
            diag[i - 1] = val
        else:
            if clusters is None:
                raise InvalidArgument("per-cluster profile needs a ClusterSpec")
            h = int(entry.target)
            if not 1 <= h <= clusters.q:
                raise IndexOutOfRange(f"cluster id {h} out of 1..{clusters.q}")
            for i in clusters.groups[h - 1]:
                diag[i - 1] = val
    return np.diag(diag)


def fault_diagonal(profile: FaultProfile, clusters: ClusterSpec | None, m: int, t: float) -> np.ndarray:
    """Diagonal of `fault_matrix` as an m-vector (cheaper inner-loop form)."""
    return np.diag(fault_matrix(profile, clusters, m, t)).copy()


@dataclass(frozen=True)
class LtiPlant:
    """x' = A x + B G Delta(t) u + E(t), y = C x, with W = B G precomputed."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    G: np.ndarray
    clusters: ClusterSpec | None = None
    rank_tol: float = matrixlab.DEFAULT_RANK_TOL
    W: np.ndarray = field(init=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        G = np.asarray(self.G, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        if B.shape[0] != n or C.shape[1] != n or G.shape[0] != B.shape[1]:
            raise DimensionMismatch("inconsistent A/B/C/G dimensions")
        k, m = G.shape
        if m <= k:
            raise InvalidArgument(f"plant must be overactuated: m={m} <= k={k}")
        if matrixlab.numerical_rank(B, self.rank_tol).rank < k:
            raise InvalidArgument("B must have full column rank")
        if matrixlab.numerical_rank(C, self.rank_tol).rank < C.shape[0]:
            raise InvalidArgument("C must have full row rank")
        if matrixlab.numerical_rank(G, self.rank_tol).rank < k:
            raise InvalidArgument("G must have full row rank")
        for name, val in (("A", A), ("B", B), ("C", C), ("G", G)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "W", B @ G)
        if self.clusters is not None and self.clusters.m != m:
            raise DimensionMismatch("cluster partition size differs from m")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.G.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def output(self, x: np.ndarray) -> np.ndarray:
        return self.C @ x


def plant_derivative(
    plant: LtiPlant,
    x: np.ndarray,
    u: np.ndarray,
    delta: np.ndarray,
    disturbance_effect: np.ndarray | None = None,
) -> np.ndarray:
    """State derivative A x + B G Delta u + E.  `delta` is the m x m diagonal
    matrix or its diagonal as an m-vector."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if x.shape != (plant.n,) or u.shape != (plant.m,):
        raise DimensionMismatch("x/u dimensions do not match the plant")
    ddiag = np.diag(delta) if delta.ndim == 2 else delta
    if ddiag.shape != (plant.m,):
        raise DimensionMismatch("delta dimension does not match the plant")
    dx = plant.A @ x + plant.W @ (ddiag * u)
    if disturbance_effect is not None:
        e = np.asarray(disturbance_effect, dtype=float)
        if e.shape != (plant.n,):
            raise DimensionMismatch("disturbance effect has wrong length")
        dx = dx + e
    return dx


def rotation_about_z(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# Default vessel: 6e6 kg ship, three azimuth thrusters (two actuator channels
# each) and two transverse tunnel thrusters (one channel each).
_VESSEL_M = 1e9 * np.array(
    [[0.0068, 0.0, 0.0], [0.0, 0.0113, -0.0340], [0.0, -0.0340, 4.4524]]
)
_VESSEL_D = 1e8 * np.array(
    [[0.0008, 0.0, 0.0], [0.0, 0.0025, -0.0203], [0.0, -0.0340, 3.8481]]
)

THRUSTER_CLUSTERS = ClusterSpec(((1, 2), (3, 4), (5, 6), (7,), (8,)))
THRUSTER_NAMES = ("T1", "T2", "T3", "T4", "T5")

# Bank assignments for the vessel: column triples monitored by each observer
# (slot order pins the output direction).  The single-fault bank covers every
# thruster with its own observer; the cluster bank monitors aggregated
# overall-input columns.
THRUSTER_SINGLE_FAULT_INDICES = ((1, 2, 3), (3, 4, 1), (5, 6, 1), (7, 8, 1))
THRUSTER_CLUSTER_INDICES = ((1, 2, 3), (1, 4, 5), (2, 3, 4), (2, 3, 5))

# Thruster pairs that share auxiliary systems or power supply, i.e. the
# common-mode double-fault events worth isolating.
COMMON_MODE_PAIRS = (
    ("T1", "T3"),
    ("T1", "T4"),
    ("T2", "T3"),
    ("T2", "T5"),
    ("T3", "T4"),
    ("T3", "T5"),
)

# Auxiliary-system grouping: a common-mode event in one group may take down
# the partner thruster as well (T3 switches between the two groups).
AUXILIARY_GROUPS = {"T1": ("T1", "T4"), "T4": ("T1", "T4"), "T2": ("T2", "T5"), "T5": ("T2", "T5"), "T3": ("T3",)}


@dataclass(frozen=True)
class VesselParams:
    """Numeric description of the five-thruster vessel.

    Azimuth thrusters s = 1..3 contribute a surge and a sway actuator channel
    with moment arms d_s*sin(phi_s) and d_s*cos(phi_s); tunnel thrusters
    s = 4, 5 contribute one sway channel with arm d_s*cos(phi_s).
    """

    mass: float = 6e6
    length: float = 76.0
    width: float = 16.0
    inertia: np.ndarray = field(default_factory=lambda: _VESSEL_M.copy())
    damping: np.ndarray = field(default_factory=lambda: _VESSEL_D.copy())
    distances: tuple[float, ...] = (20.0, 20.0, 18.5, 30.0, 35.0)
    # phi_3..phi_5 are not printed with the reference data; zero reproduces
    # the published moment-arm row (18.5, 30, 35).
    angles: tuple[float, ...] = (math.pi + 0.3, math.pi - 0.3, 0.0, 0.0, 0.0)
    heading_ref: float = 0.0
    disturbance_bound: float = 5e6

    def __post_init__(self):
        M = np.asarray(self.inertia, dtype=float)
        D = np.asarray(self.damping, dtype=float)
        object.__setattr__(self, "inertia", M)
        object.__setattr__(self, "damping", D)
        object.__setattr__(self, "distances", tuple(float(v) for v in self.distances))
        object.__setattr__(self, "angles", tuple(float(v) for v in self.angles))
        if M.shape != (3, 3) or D.shape != (3, 3):
            raise DimensionMismatch("inertia and damping must be 3x3")
        if not np.allclose(M, M.T, rtol=1e-12, atol=0.0):
            raise InvalidArgument("inertia matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(M) <= 0.0):
            raise InvalidArgument("inertia matrix must be positive definite")
        if len(self.distances) != 5 or len(self.angles) != 5:
            raise InvalidArgument("need 5 thruster distances and 5 angles")
        if self.disturbance_bound < 0:
            raise InvalidArgument("disturbance bound must be >= 0")


def vessel_allocation_matrix(params: VesselParams) -> np.ndarray:
    """3 x 8 thrust allocation matrix of the five-thruster layout."""
    d, phi = params.distances, params.angles
    gamma = []
    for s in range(3):
        gamma.append(d[s] * math.sin(phi[s]))
        gamma.append(d[s] * math.cos(phi[s]))
    chi = [d[3] * math.cos(phi[3]), d[4] * math.cos(phi[4])]
    return np.array(
        [
            [1, 0, 1, 0, 1, 0, 0, 0],
            [0, 1, 0, 1, 0, 1, 1, 1],
            gamma + chi,
        ],
        dtype=float,
    )


def build_vessel_plant(params: VesselParams | None = None) -> LtiPlant:
    """Linearized vessel plant about the reference heading.

    State x = (x_G, y_G, psi, nu_x, nu_y, psi_dot); all six states measured
    (C = I).  A = [[0, P(psi_ref)], [0, -M^{-1} D]], B = [[0], [M^{-1}]].
    """
    params = params or VesselParams()
    M = params.inertia
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise SingularInertia("inertia matrix is not invertible") from exc
    A = np.zeros((6, 6))
    A[:3, 3:] = rotation_about_z(params.heading_ref)
    A[3:, 3:] = -Minv @ params.damping
    B = np.vstack([np.zeros((3, 3)), Minv])
    C = np.eye(6)
    G = vessel_allocation_matrix(params)
    return LtiPlant(A=A, B=B, C=C, G=G, clusters=THRUSTER_CLUSTERS)


def disturbance_effect(params: VesselParams, b: np.ndarray) -> np.ndarray:
    """Map a 3-vector of disturbance forces/moment into the state equation:
    E = [0; M^{-1} P(psi_ref)^T b]."""
    Minv = np.linalg.inv(params.inertia)
    P = rotation_about_z(params.heading_ref)
    return np.concatenate([np.zeros(3), Minv @ (P.T @ np.asarray(b, dtype=float))])
