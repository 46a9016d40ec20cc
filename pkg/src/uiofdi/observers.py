"""Synthesis of unknown input observers with constrained output fault
directions (COFD), and banks of them over column multi-indices.

Each observer runs
    z' = F z + R B v + K y,     x_hat = z + H y,
with the structural conditions R = I - H C, F = R A - K1 C, K = K1 + F H.
The gain R is tuned so the selected input-effect columns W_J map onto the
leading columns of an output section S (C S = I): a fault on column J(q)
then drives the estimation error along S_q only, pinning the residual
r = y - C x_hat to the output basis direction e_q.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matrixlab
from .errors import (
    DimensionMismatch,
    EmptyBank,
    InvalidArgument,
    NotHurwitz,
    RankConditionFailed,
)
from .matrixlab import MultiIndex
from .plant import LtiPlant


@dataclass(frozen=True)
class OutputSection:
    """n x p right inverse S of C (C S = I_p) with its free parameter."""

    S: np.ndarray
    S_star: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S", np.asarray(self.S, dtype=float))
        object.__setattr__(self, "S_star", np.asarray(self.S_star, dtype=float))

    def leading(self, k0: int) -> np.ndarray:
        """The target section S_hat = [S_1 ... S_k0]."""
        return self.S[:, :k0]


def build_output_section(C, S_star=None, tol: float = matrixlab.DEFAULT_RANK_TOL) -> OutputSection:
    """General solution of C S = I_p for full-row-rank C:
    S = C^T (C C^T)^{-1} + [I - C^T (C C^T)^{-1} C] S_star."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    p, n = C.shape
    Cpr = matrixlab.right_pseudo_inverse(C, tol)  # raises RankDeficient
    S_star = np.zeros((n, p)) if S_star is None else np.asarray(S_star, dtype=float)
    if S_star.shape != (n, p):
        raise DimensionMismatch(f"S_star must be {n}x{p}")
    S = Cpr + (np.eye(n) - Cpr @ C) @ S_star
    return OutputSection(S=S, S_star=S_star)


@dataclass(frozen=True)
class UioParams:
    """One synthesized observer: gains, its multi-index and target section."""

    F: np.ndarray
    R: np.ndarray
    H: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    K: np.ndarray
    J: MultiIndex
    S_hat: np.ndarray
    M_diag: np.ndarray  # prescribed eigenvalues of F on the S_hat columns
    H_star: np.ndarray
    K_star: np.ndarray
    # runtime operators
    C: np.ndarray
    RB: np.ndarray

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def k0(self) -> int:
        return self.J.length

    def init_state(self, y: np.ndarray) -> np.ndarray:
        """Observer state z seeding x_hat(0) = C^+ y: zero initialization
        error whenever the output determines the state (C = I here)."""
        xhat0 = np.linalg.lstsq(self.C, np.asarray(y, dtype=float), rcond=None)[0]
        return xhat0 - self.H @ y

    def residual(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        return y - self.C @ (z + self.H @ y)


def _check_rank_condition(WJ, CWJ, k0, tol):
    # Columns are unit-normalized first; raw input-effect entries sit around
    # 1e-9 and would defeat a relative singular-value threshold otherwise.
    rank_w = matrixlab.numerical_rank(_unit_columns(WJ), tol).rank
    rank_cw = matrixlab.numerical_rank(_unit_columns(CWJ), tol).rank
    if rank_w < k0 or rank_cw < k0:
        raise RankConditionFailed(
            f"rank(W_J)={rank_w}, rank(C W_J)={rank_cw}, need {k0}"
        )


def _unit_columns(M):
    M = np.asarray(M, dtype=float)
    norms = np.linalg.norm(M, axis=0)
    norms = np.where(norms == 0.0, 1.0, norms)
    return M / norms


def synthesize_cofd(
    plant: LtiPlant,
    section: OutputSection,
    J: MultiIndex | tuple[int, ...],
    M_diag=( -1.0, -1.0, -2.0),
    H_star=None,
    K_star=None,
    complement_eigs=(-5.0, -6.0, -7.0),
    input_matrix: np.ndarray | None = None,
    tol: float = matrixlab.DEFAULT_RANK_TOL,
) -> UioParams:
    """Synthesize one COFD observer for the columns selected by J.

    Parameters
    ----------
    plant : LtiPlant
        System under diagnosis; supplies A, B, C and the default W = B G.
    section : OutputSection
        Output section S with C S = I; the first L(J) columns become the
        prescribed fault directions.
    J : MultiIndex or tuple
        Column selection (1-based) over `input_matrix`; slot order fixes
        which output direction each column is pinned to.
    M_diag : sequence
        Strictly negative eigenvalues prescribed on the S_hat columns.
    H_star, K_star : arrays, optional
        Free parameters of the gain equations (default zero).
    complement_eigs : sequence or None
        With full state measurement (C = I) the gain K1 is completed so the
        remaining n - k0 eigenvalues of F take these values, reproducing a
        fully prescribed diagonal F.  Ignored for general C.
    input_matrix : array, optional
        Overrides W = B G, e.g. with the aggregated cluster matrix W*.

    Raises
    ------
    RankConditionFailed
        If rank(W_J) or rank(C W_J) is below L(J).
    NotHurwitz
        If F fails the stability check with the supplied free parameters.
    """
    n, p = plant.n, plant.p
    Wd = plant.W if input_matrix is None else np.asarray(input_matrix, dtype=float)
    if not isinstance(J, MultiIndex):
        J = MultiIndex(tuple(J), Wd.shape[1])
    elif J.domain != Wd.shape[1]:
        raise InvalidArgument("multi-index domain differs from input matrix width")
    k0 = J.length
    if k0 > p:
        raise InvalidArgument(f"L(J)={k0} exceeds output dimension {p}")
    M_diag = np.asarray(M_diag, dtype=float)
    if M_diag.shape != (k0,):
        raise InvalidArgument(f"M_diag must supply {k0} eigenvalues")
    if np.any(M_diag >= 0.0):
        raise InvalidArgument("M_diag entries must be strictly negative")

    A, C = plant.A, plant.C
    WJ = J.columns(Wd)
    CWJ = C @ WJ
    _check_rank_condition(WJ, CWJ, k0, tol)

    S_hat = section.leading(k0)
    H_star = np.zeros((n, p)) if H_star is None else np.asarray(H_star, dtype=float)
    K_star = np.zeros((n, p)) if K_star is None else np.asarray(K_star, dtype=float)
    if H_star.shape != (n, p) or K_star.shape != (n, p):
        raise DimensionMismatch(f"free parameters must be {n}x{p}")

    # H solves H (C W_J) = W_J - S_hat; general solution via left pseudo-inverse.
    CWJ_li = matrixlab.left_pseudo_inverse(CWJ, tol)
    H = (WJ - S_hat) @ CWJ_li + H_star @ (np.eye(p) - CWJ @ CWJ_li)
    R = np.eye(n) - H @ C
    RA = R @ A

    identity_output = p == n and np.array_equal(C, np.eye(n))
    if identity_output and complement_eigs is not None:
        comp = np.asarray(complement_eigs, dtype=float)
        if comp.shape != (n - k0,):
            raise InvalidArgument(f"need {n - k0} complementary eigenvalues")
        # Fully prescribed diagonal F: K1 = R A - F_target keeps the
        # off-diagonal of F = R A - K1 exactly zero (entrywise cancellation)
        # while F S_hat = S_hat M_diag holds by construction.
        F_target = np.diag(np.concatenate([M_diag, comp]))
        K1 = RA - F_target
    else:
        # K1 (C S_hat) = R A S_hat - S_hat M_diag; general solution.
        CSh = C @ S_hat
        CSh_li = matrixlab.left_pseudo_inverse(CSh, tol)
        rhs = RA @ S_hat - S_hat @ np.diag(M_diag)
        K1 = rhs @ CSh_li + K_star @ (np.eye(p) - CSh @ CSh_li)

    F = RA - K1 @ C
    if not matrixlab.is_hurwitz(F):
        raise NotHurwitz(
            f"observer matrix for J={J.indices} is not Hurwitz; retune the "
            "free parameters or the eigenvalue prescription"
        )
    K2 = F @ H
    K = K1 + K2
    return UioParams(
        F=F, R=R, H=H, K1=K1, K2=K2, K=K, J=J, S_hat=S_hat,
        M_diag=M_diag, H_star=H_star, K_star=K_star, C=C.copy(), RB=R @ plant.B,
    )


@dataclass(frozen=True)
class BankFailure:
    J: tuple[int, ...]
    reason: str


@dataclass(frozen=True)
class ObserverBank:
    """Family of observers with pairwise distinct multi-indices over one
    input matrix (W for actuator-level banks, W* for cluster-level)."""

    observers: tuple[UioParams, ...]
    section: OutputSection
    mode: str  # "actuator" | "cluster"
    input_matrix: np.ndarray
    failures: tuple[BankFailure, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "observers", tuple(self.observers))
        object.__setattr__(self, "failures", tuple(self.failures))
        object.__setattr__(self, "input_matrix", np.asarray(self.input_matrix, dtype=float))
        if not self.observers:
            raise EmptyBank("no feasible observers in the bank")
        seen = set()
        for obs in self.observers:
            if obs.J.indices in seen:
                raise InvalidArgument(f"duplicate multi-index {obs.J.indices}")
            seen.add(obs.J.indices)
        k0s = {obs.k0 for obs in self.observers}
        if len(k0s) != 1:
            raise InvalidArgument("observers in a bank must share k0")

    @property
    def size(self) -> int:
        return len(self.observers)

    @property
    def k0(self) -> int:
        return self.observers[0].k0

    def multi_indices(self) -> list[tuple[int, ...]]:
        return [obs.J.indices for obs in self.observers]


def build_bank(
    plant: LtiPlant,
    mode: str = "actuator",
    indices="auto",
    M_diag=(-1.0, -1.0, -2.0),
    H_star=None,
    K_star=None,
    complement_eigs="auto",
    section: OutputSection | None = None,
    input_matrix: np.ndarray | None = None,
    tol: float = matrixlab.DEFAULT_RANK_TOL,
) -> ObserverBank:
    """Build an observer bank over W (actuator mode) or a supplied W*.

    indices="auto" takes k0 = uniform_sub_rank of the input matrix and
    enumerates all C(m, k0) increasing multi-indices; an explicit list of
    tuples is honored in the given slot order provided each passes the rank
    condition.  Observers that fail synthesis are collected in
    `bank.failures`, never silently dropped.
    """
    if mode not in ("actuator", "cluster"):
        raise InvalidArgument(f"unknown bank mode {mode!r}")
    Wd = plant.W if input_matrix is None else np.asarray(input_matrix, dtype=float)
    mcols = Wd.shape[1]
    section = section or build_output_section(plant.C)

    if isinstance(indices, str) and indices == "auto":
        k0 = matrixlab.uniform_sub_rank(Wd, tol)
        if k0 < 1:
            raise EmptyBank("uniform sub-rank is 0: no isolation possible")
        index_list = enumerate_bank_indices(k0, mcols)
    else:
        index_list = [MultiIndex(tuple(ix), mcols) for ix in indices]
        lengths = {ix.length for ix in index_list}
        if len(lengths) != 1:
            raise InvalidArgument("all multi-indices must share one length")
        k0 = lengths.pop()

    M_diag = _fit_eigs(M_diag, k0)
    comp = None
    if complement_eigs is not None:
        base = (-5.0, -6.0, -7.0) if isinstance(complement_eigs, str) else tuple(complement_eigs)
        comp = _fit_eigs(base, plant.n - k0, start=-5.0)

    observers, failures = [], []
    for J in index_list:
        try:
            observers.append(
                synthesize_cofd(
                    plant, section, J, M_diag=M_diag, H_star=H_star,
                    K_star=K_star, complement_eigs=comp,
                    input_matrix=Wd, tol=tol,
                )
            )
        except (RankConditionFailed, NotHurwitz) as exc:
            failures.append(BankFailure(J.indices, f"{type(exc).__name__}: {exc}"))
    if not observers:
        raise EmptyBank(
            "no feasible multi-index; failures: "
            + "; ".join(f"{f.J}: {f.reason}" for f in failures)
        )
    return ObserverBank(
        observers=tuple(observers), section=section, mode=mode,
        input_matrix=Wd, failures=tuple(failures),
    )


def enumerate_bank_indices(k0: int, m: int) -> list[MultiIndex]:
    return matrixlab.enumerate_multi_indices(k0, m)


def _fit_eigs(base, count, start=None):
    base = tuple(float(v) for v in base)
    if len(base) >= count:
        return np.asarray(base[:count], dtype=float)
    lo = min(base) if base else (start or -1.0)
    extra = [lo - (i + 1) for i in range(count - len(base))]
    return np.asarray(list(base) + extra, dtype=float)


def step_observer(obs: UioParams, z, y, v, dt: float):
    """One fixed-step RK4 update of z' = F z + R B v + K y.

    `y` and `v` are held constant across the step (zero-order hold); inside
    the closed-loop simulator the observers are instead integrated jointly
    with the plant so they see the continuously varying output.  Returns
    (z_next, x_hat, r).
    """
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    forcing = obs.RB @ v + obs.K @ y
    F = obs.F
    k1 = F @ z + forcing
    k2 = F @ (z + 0.5 * dt * k1) + forcing
    k3 = F @ (z + 0.5 * dt * k2) + forcing
    k4 = F @ (z + dt * k3) + forcing
    z_next = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(z_next)):
        from .errors import NonFinite

        raise NonFinite("observer state diverged")
    x_hat = z_next + obs.H @ y
    r = y - obs.C @ x_hat
    return z_next, x_hat, r
