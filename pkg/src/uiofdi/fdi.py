"""Residual evaluation and signature-based fault isolation.

Residual components along the monitored output directions are classified as
negligible or significant by windowed RMS against an absolute floor and a
relative share of the residual norm.  The binary patterns of the whole bank
are matched against predicted per-hypothesis signatures; a common-mode
(cluster) escalation path and reconfiguration triggering sit on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matrixlab
from .allocation import RatioConstraintSet, cluster_overall_columns
from .errors import (
    InsufficientRedundancy,
    InvalidArgument,
    ReducedRankDeficient,
    UnknownHypothesis,
    WarmupIncomplete,
)
from .plant import AUXILIARY_GROUPS, ClusterSpec, THRUSTER_NAMES

# Predicted pattern entries.
ZERO, NONZERO, ANY = 0, 1, 2

# Decision statuses.
NOMINAL = "nominal"
DETECTED = "detected"
ISOLATED = "isolated"
AMBIGUOUS = "ambiguous"
SATURATED = "saturated"


@dataclass(frozen=True)
class ThresholdPolicy:
    """Windowed-RMS classification thresholds.

    A direction is significant when its windowed RMS exceeds
    max(theta_abs, theta_rel * windowed RMS of ||r||).  theta_abs may be a
    scalar or one floor per output channel.
    """

    theta_abs: float | np.ndarray = 1e-6
    theta_rel: float = 0.05
    window: int = 200
    persistence: int = 3

    def __post_init__(self):
        ta = np.atleast_1d(np.asarray(self.theta_abs, dtype=float))
        object.__setattr__(self, "theta_abs", ta)
        if np.any(ta <= 0):
            raise InvalidArgument("theta_abs must be positive")
        if not 0 < self.theta_rel < 1:
            raise InvalidArgument("theta_rel must lie in (0, 1)")
        if self.window < 1 or self.persistence < 1:
            raise InvalidArgument("window and persistence must be >= 1")

    def floor(self, q: int) -> float:
        ta = self.theta_abs
        return float(ta[q]) if ta.size > 1 else float(ta[0])


def classify_components(samples, policy: ThresholdPolicy, k0: int | None = None):
    """Binary significance pattern over the first k0 residual directions.

    `samples` is the (>= window) x p array of the most recent residual
    samples; only the trailing `policy.window` rows are used.
    """
    r = np.atleast_2d(np.asarray(samples, dtype=float))
    if r.shape[0] < policy.window:
        raise WarmupIncomplete(
            f"need {policy.window} samples, have {r.shape[0]}"
        )
    w = r[-policy.window :]
    k0 = k0 if k0 is not None else w.shape[1]
    rms_norm = float(np.sqrt(np.mean(np.sum(w * w, axis=1))))
    bits = []
    for q in range(k0):
        rms_q = float(np.sqrt(np.mean(w[:, q] ** 2)))
        bits.append(1 if rms_q > max(policy.floor(q), policy.theta_rel * rms_norm) else 0)
    return tuple(bits)


@dataclass(frozen=True)
class Hypothesis:
    """One fault event: a set of input-matrix columns expected to lose
    effectiveness together."""

    name: str
    columns: frozenset[int]  # 1-based columns of the bank's input matrix
    clusters: tuple[int, ...]  # 1-based thruster/cluster ids involved

    def __post_init__(self):
        object.__setattr__(self, "columns", frozenset(int(c) for c in self.columns))
        object.__setattr__(self, "clusters", tuple(int(c) for c in self.clusters))


def thruster_hypotheses(
    clusters: ClusterSpec,
    bank_mode: str,
    names=THRUSTER_NAMES,
    pairs=(),
) -> list[Hypothesis]:
    """Single-thruster hypotheses (plus optional pairs) for a bank.

    Actuator-level banks see a thruster as its actuator column set; cluster
    banks see it as one aggregated column.
    """
    if len(names) < clusters.q:
        raise InvalidArgument("not enough cluster names")

    def columns_of(h: int) -> set[int]:
        if bank_mode == "cluster":
            return {h}
        return set(clusters.groups[h - 1])

    out = [
        Hypothesis(names[h - 1], frozenset(columns_of(h)), (h,))
        for h in range(1, clusters.q + 1)
    ]
    name_to_id = {names[h - 1]: h for h in range(1, clusters.q + 1)}
    for pair in pairs:
        ids = tuple(sorted(name_to_id[nm] for nm in pair))
        cols = set()
        for h in ids:
            cols |= columns_of(h)
        out.append(Hypothesis("+".join(names[h - 1] for h in ids), frozenset(cols), ids))
    return out


@dataclass(frozen=True)
class SignatureTable:
    """Predicted residual patterns: hypothesis -> per-observer tuple over the
    monitored directions, entries in {ZERO, NONZERO, ANY}."""

    hypotheses: tuple[Hypothesis, ...]
    patterns: dict[str, tuple[tuple[int, ...], ...]]
    k0: int
    observer_indices: tuple[tuple[int, ...], ...]

    def predicted(self, name: str):
        try:
            return self.patterns[name]
        except KeyError as exc:
            raise UnknownHypothesis(name) from exc


def build_signature_table(bank, hypotheses) -> SignatureTable:
    """Predict each hypothesis's pattern from the bank's multi-indices.

    For fault columns F and observer slots J: a slot whose column lies in F
    is NONZERO (it receives direct forcing); the remaining slots are ZERO
    when F is contained in J (the error stays inside the prescribed
    directions) and ANY otherwise (out-of-slot columns excite unmodeled
    combinations).
    """
    m = bank.input_matrix.shape[1]
    patterns = {}
    for hyp in hypotheses:
        if any(c < 1 or c > m for c in hyp.columns):
            raise UnknownHypothesis(
                f"{hyp.name}: columns {sorted(hyp.columns)} outside 1..{m}"
            )
        rows = []
        for obs in bank.observers:
            J = obs.J.indices
            contained = hyp.columns <= set(J)
            row = tuple(
                NONZERO if J[q] in hyp.columns else (ZERO if contained else ANY)
                for q in range(len(J))
            )
            rows.append(row)
        patterns[hyp.name] = tuple(rows)
    return SignatureTable(
        hypotheses=tuple(hypotheses),
        patterns=patterns,
        k0=bank.k0,
        observer_indices=tuple(obs.J.indices for obs in bank.observers),
    )


def distinguishable(table: SignatureTable, a: str, b: str) -> bool:
    """True when some observer direction separates the two hypotheses
    (one predicts ZERO where the other predicts NONZERO)."""
    pa, pb = table.predicted(a), table.predicted(b)
    for ra, rb in zip(pa, pb):
        for va, vb in zip(ra, rb):
            if {va, vb} == {ZERO, NONZERO}:
                return True
    return False


@dataclass(frozen=True)
class Decision:
    status: str
    hypotheses: tuple[str, ...]
    signatures: tuple[tuple[int, ...], ...]
    time: float
    fault_clusters: tuple[int, ...] = ()

    def __post_init__(self):
        if self.status == ISOLATED and len(self.hypotheses) != 1:
            raise InvalidArgument("isolated decision needs a single hypothesis")


def isolate(observed, table: SignatureTable, time: float = 0.0) -> Decision:
    """Match observed binary signatures against the predicted table.

    Statuses: nominal (everything negligible), saturated (every direction of
    every observer significant: no isolation information, escalation
    candidate), isolated/ambiguous by match count, detected when something
    is significant but no hypothesis fits.
    """
    observed = tuple(tuple(int(b) for b in row) for row in observed)
    if len(observed) != len(table.observer_indices):
        raise InvalidArgument("one signature per observer required")
    if all(all(b == 0 for b in row) for row in observed):
        return Decision(NOMINAL, (), observed, time)

    matches = []
    for hyp in table.hypotheses:
        pred = table.predicted(hyp.name)
        ok = all(
            pv == ANY or pv == ov
            for prow, orow in zip(pred, observed)
            for pv, ov in zip(prow, orow)
        )
        if ok:
            matches.append(hyp)

    if all(all(b == 1 for b in row) for row in observed):
        return Decision(SATURATED, tuple(h.name for h in matches), observed, time)
    if len(matches) == 1:
        hyp = matches[0]
        return Decision(ISOLATED, (hyp.name,), observed, time, hyp.clusters)
    if matches:
        return Decision(AMBIGUOUS, tuple(h.name for h in matches), observed, time)
    return Decision(DETECTED, (), observed, time)


@dataclass(frozen=True)
class EscalationPlan:
    ratios: RatioConstraintSet
    bank_indices: tuple[tuple[int, ...], ...] | None  # None = keep current bank


def escalate_to_cluster_mode(
    u_snapshot,
    G,
    clusters: ClusterSpec,
    bank_indices=None,
    ratios: RatioConstraintSet | None = None,
    tol: float = matrixlab.DEFAULT_RANK_TOL,
) -> EscalationPlan:
    """Prepare the common-mode isolation step: ratio constraints from the
    current input snapshot (unless given) and the cluster-bank request.

    With all-singleton clusters there is nothing to constrain and the
    current bank stays (no-op plan).  Raises InsufficientRedundancy when the
    aggregated allocation matrix loses row rank under the chosen ratios.
    """
    G = np.asarray(G, dtype=float)
    k = G.shape[0]
    if all(len(g) == 1 for g in clusters.groups):
        return EscalationPlan(RatioConstraintSet({}), None)
    if ratios is None:
        ratios = RatioConstraintSet.from_input_snapshot(clusters, u_snapshot)
    Gstar = cluster_overall_columns(G, clusters, ratios)
    if matrixlab.numerical_rank(Gstar, tol).rank < k:
        raise InsufficientRedundancy(
            "ratio constraints over-constrain the allocation (rank(G*) < k)"
        )
    if bank_indices is None:
        k0 = matrixlab.uniform_sub_rank(Gstar, tol)
        if k0 < 1:
            raise InsufficientRedundancy("aggregated columns admit no observer bank")
        bank_indices = tuple(
            ix.indices for ix in matrixlab.enumerate_multi_indices(k0, clusters.q)
        )
    return EscalationPlan(ratios, tuple(tuple(ix) for ix in bank_indices))


@dataclass(frozen=True)
class ReallocationDirective:
    zero_indices: tuple[int, ...]
    activation_time: float
    hypotheses: tuple[str, ...]


def trigger_reconfiguration(
    decision: Decision,
    G,
    clusters: ClusterSpec,
    time: float,
    policy: str = "isolated-only",
    names=THRUSTER_NAMES,
    tol: float = matrixlab.DEFAULT_RANK_TOL,
) -> ReallocationDirective:
    """Turn an isolated decision into a reduced-allocation directive.

    policy "isolated-only" zeroes the isolated thrusters' actuator columns;
    "auxiliary-group" extends to the thrusters sharing their auxiliaries.
    """
    if decision.status != ISOLATED or not decision.fault_clusters:
        raise InvalidArgument("reconfiguration needs an isolated decision")
    if policy not in ("isolated-only", "auxiliary-group"):
        raise InvalidArgument(f"unknown reconfiguration policy {policy!r}")
    ids = set(decision.fault_clusters)
    if policy == "auxiliary-group":
        for h in tuple(ids):
            for partner in AUXILIARY_GROUPS.get(names[h - 1], ()):
                ids.add(names.index(partner) + 1)
    zero = sorted(i for h in ids for i in clusters.groups[h - 1])
    G = np.asarray(G, dtype=float)
    k, m = G.shape
    if len(zero) > m - k:
        raise InsufficientRedundancy(
            f"zeroing {len(zero)} of {m} actuators leaves fewer than k={k}"
        )
    keep = [i for i in range(m) if (i + 1) not in zero]
    if matrixlab.numerical_rank(G[:, keep], tol).rank < k:
        raise ReducedRankDeficient("surviving columns cannot span the effect space")
    return ReallocationDirective(tuple(zero), float(time), decision.hypotheses)


class ResidualWindow:
    """Fixed-length ring buffer of residual samples with O(p) updates."""

    def __init__(self, window: int, p: int):
        self.buf = np.zeros((window, p))
        self.count = 0
        self.pos = 0

    def push(self, r: np.ndarray):
        self.buf[self.pos] = r
        self.pos = (self.pos + 1) % self.buf.shape[0]
        self.count = min(self.count + 1, self.buf.shape[0])

    @property
    def full(self) -> bool:
        return self.count == self.buf.shape[0]

    def reset(self):
        self.buf[:] = 0.0
        self.count = 0
        self.pos = 0


@dataclass
class EngineEvent:
    kind: str  # "escalate" | "reconfigure"
    time: float
    decision: Decision


class FdiEngine:
    """Deterministic decision state machine driven by residual samples.

    The engine consumes one residual vector per observer per sample and
    yields a Decision once the warm-up window has elapsed and enough samples
    are buffered.  A non-nominal pattern must persist for
    `policy.persistence` consecutive evaluations before it is adopted.  The
    same engine instance replays identically from logged residuals, which is
    what the offline analysis command relies on.
    """

    def __init__(
        self,
        table: SignatureTable,
        policy: ThresholdPolicy,
        p: int,
        warmup: float,
        dt: float,
        start_time: float = 0.0,
        escalation: str = "off",  # "off" | "auto"
        cluster_table: SignatureTable | None = None,
        reconfiguration: str = "off",  # "off" | "auto-on-isolation"
    ):
        if escalation not in ("off", "auto"):
            raise InvalidArgument(f"unknown escalation mode {escalation!r}")
        if reconfiguration not in ("off", "auto-on-isolation"):
            raise InvalidArgument(f"unknown reconfiguration mode {reconfiguration!r}")
        if escalation == "auto" and cluster_table is None:
            raise InvalidArgument("auto escalation needs a cluster signature table")
        self.table = table
        self.policy = policy
        self.p = p
        self.warmup = float(warmup)
        self.dt = float(dt)
        self.escalation = escalation
        self.cluster_table = cluster_table
        self.reconfiguration = reconfiguration
        self.phase = "primary"
        self.escalated = False
        self.reconfigured = False
        self._start(table, start_time)

    def _start(self, table: SignatureTable, t0: float):
        self.active_table = table
        self.classify_from = t0 + self.warmup
        self.windows = [
            ResidualWindow(self.policy.window, self.p)
            for _ in table.observer_indices
        ]
        self._candidate = None
        self._candidate_count = 0
        self._confirmed = tuple(
            tuple(0 for _ in range(table.k0)) for _ in table.observer_indices
        )

    def switch_to_cluster(self, t: float):
        """Restart classification over the cluster bank (fresh warm-up)."""
        self.phase = "cluster"
        self.escalated = True
        self._start(self.cluster_table, t)

    def step(self, t: float, residuals) -> tuple[Decision | None, list[EngineEvent]]:
        if len(residuals) != len(self.windows):
            raise InvalidArgument("one residual per observer required")
        for w, r in zip(self.windows, residuals):
            w.push(np.asarray(r, dtype=float))
        if t < self.classify_from or not all(w.full for w in self.windows):
            return None, []

        patterns = tuple(
            classify_components(w.buf, self.policy, self.active_table.k0)
            for w in self.windows
        )
        if patterns == self._candidate:
            self._candidate_count += 1
        else:
            self._candidate = patterns
            self._candidate_count = 1
        if self._candidate_count >= self.policy.persistence:
            self._confirmed = patterns

        decision = isolate(self._confirmed, self.active_table, time=t)
        events = []
        if (
            decision.status in (SATURATED, AMBIGUOUS)
            and self.escalation == "auto"
            and not self.escalated
            and self.phase == "primary"
        ):
            events.append(EngineEvent("escalate", t, decision))
        if (
            decision.status == ISOLATED
            and self.reconfiguration == "auto-on-isolation"
            and not self.reconfigured
        ):
            self.reconfigured = True
            events.append(EngineEvent("reconfigure", t, decision))
        return decision, events
