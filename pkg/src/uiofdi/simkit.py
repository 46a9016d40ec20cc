"""Fixed-step closed-loop simulation: plant + allocation + observer bank +
FDI + reconfiguration under a bounded disturbance.

The plant and all observer states are integrated jointly with one classical
RK4 step per sample, so the observers see the continuously varying output
while the controller side (commanded effect, allocation) is zero-order held
over each interval.  Everything is deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import allocation as alloc_mod
from . import fdi as fdi_mod
from . import observers as obs_mod
from .allocation import RatioConstraintSet
from .errors import ConfigError, InvalidArgument, NonFinite
from .fdi import Decision, FdiEngine, SignatureTable, ThresholdPolicy
from .observers import ObserverBank
from .plant import (
    COMMON_MODE_PAIRS,
    THRUSTER_CLUSTER_INDICES,
    THRUSTER_NAMES,
    THRUSTER_SINGLE_FAULT_INDICES,
    FaultProfile,
    LtiPlant,
    VesselParams,
    build_vessel_plant,
    exponential_decay,
    fault_diagonal,
    rotation_about_z,
)


def rk4_step(f, x, t: float, dt: float) -> np.ndarray:
    """One classical 4-stage Runge-Kutta update of x' = f(t, x)."""
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"integration diverged at t={t}")
    return out


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded environmental force/moment b(t): a constant term on a seeded
    fixed direction plus an oscillating term whose direction rotates slowly.
    The fractions keep ||b(t)|| <= bound for all t."""

    bound: float = 5e6
    constant_fraction: float = 0.6
    oscillation_fraction: float = 0.4
    frequency: float = 0.1
    rotation_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.bound < 0:
            raise InvalidArgument("bound must be >= 0")
        if self.constant_fraction < 0 or self.oscillation_fraction < 0:
            raise InvalidArgument("fractions must be >= 0")
        if self.constant_fraction + self.oscillation_fraction > 1.0 + 1e-12:
            raise InvalidArgument("fractions must sum to at most 1")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        c = rng.standard_normal(3)
        c /= np.linalg.norm(c)
        q = rng.standard_normal(3)
        q -= (q @ c) * c
        q /= np.linalg.norm(q)
        return c, q, np.cross(c, q)

    def force_function(self):
        c, p1, p2 = self.basis()
        amp_c = self.constant_fraction * self.bound
        amp_o = self.oscillation_fraction * self.bound
        w, wr = self.frequency, self.rotation_rate

        def b(t: float) -> np.ndarray:
            direction = p1 * math.cos(wr * t) + p2 * math.sin(wr * t)
            return amp_c * c + amp_o * math.sin(w * t) * direction

        return b


@dataclass
class YawPid:
    """Heading PID: proportional+integral on the heading error with rate
    feedback from the measured yaw rate (no numerical differentiation)."""

    kp: float = 1e8
    ki: float = 1e6
    kd: float = 1e8
    setpoint: float = 0.0
    output_limit: float = 1e12
    integral: float = 0.0
    _prev_error: float | None = None

    def update(self, psi: float, psi_rate: float, dt: float) -> float:
        err = self.setpoint - psi
        prev = err if self._prev_error is None else self._prev_error
        self.integral += 0.5 * (err + prev) * dt
        self._prev_error = err
        if self.ki > 0:  # anti-windup clamp on the integral contribution
            cap = self.output_limit / self.ki
            self.integral = min(cap, max(-cap, self.integral))
        out = self.kp * err + self.ki * self.integral - self.kd * psi_rate
        return min(self.output_limit, max(-self.output_limit, out))

    def reset(self):
        self.integral = 0.0
        self._prev_error = None


def commanded_effect(
    y,
    pid: YawPid,
    damping,
    dt: float,
    velocity_track: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Commanded generalized effect tau_c = D nu + (0, 0, a_psi).

    `velocity_track`, when given as (gains, nu_ref), adds a proportional
    surge/sway term pulling the velocities back to the reference (the
    post-reconfiguration law that recovers the original speed regime).
    """
    y = np.asarray(y, dtype=float)
    nu = y[3:6]
    a_psi = pid.update(y[2], y[5], dt)
    tau = np.asarray(damping, dtype=float) @ nu
    tau = tau + np.array([0.0, 0.0, a_psi])
    if velocity_track is not None:
        gains, nu_ref = velocity_track
        tau = tau + np.array(
            [gains[0] * (nu_ref[0] - nu[0]), gains[1] * (nu_ref[1] - nu[1]), 0.0]
        )
    return tau


@dataclass(frozen=True)
class BankSpec:
    mode: str = "actuator"  # "actuator" | "cluster"
    indices: tuple[tuple[int, ...], ...] | str = THRUSTER_SINGLE_FAULT_INDICES
    eigenvalues: tuple[float, ...] = (-1.0, -1.0, -2.0)
    complement_eigenvalues: tuple[float, ...] = (-5.0, -6.0, -7.0)


@dataclass(frozen=True)
class FdiSpec:
    theta_abs: str | float | tuple[float, ...] = "auto"
    theta_rel: float = 0.05
    window: int = 200
    persistence: int = 3
    warmup_margin: float = 5.0
    escalation: str = "off"  # "off" | "auto"
    cluster_bank_indices: tuple[tuple[int, ...], ...] = THRUSTER_CLUSTER_INDICES
    pair_hypotheses: tuple[tuple[str, str], ...] = COMMON_MODE_PAIRS


@dataclass(frozen=True)
class ReconfigurationSpec:
    mode: str = "off"  # "off" | "fixed-time" | "auto-on-isolation"
    time: float = 180.0
    targets: tuple[str, ...] = ()  # thruster names zeroed in fixed-time mode
    policy: str = "isolated-only"  # or "auxiliary-group"

    def __post_init__(self):
        if self.mode not in ("off", "fixed-time", "auto-on-isolation"):
            raise InvalidArgument(f"unknown reconfiguration mode {self.mode!r}")


@dataclass(frozen=True)
class PidSpec:
    kp: float = 1e8
    ki: float = 1e6
    kd: float = 1e8
    output_limit: float = 1e12


@dataclass(frozen=True)
class ScenarioConfig:
    vessel: VesselParams = field(default_factory=VesselParams)
    initial_position: tuple[float, float, float] = (1.0, 1.0, 0.0)
    initial_velocity: tuple[float, float, float] = (2.2, 1.9, 0.0)
    dt: float = 0.01
    duration: float = 200.0
    seed: int = 0
    faults: FaultProfile = field(default_factory=FaultProfile.fault_free)
    bank: BankSpec = field(default_factory=BankSpec)
    ratios: tuple[float, ...] | None = None  # cluster-mode allocation ratios
    fdi: FdiSpec = field(default_factory=FdiSpec)
    reconfiguration: ReconfigurationSpec = field(default_factory=ReconfigurationSpec)
    disturbance: DisturbanceModel | None = None
    pid: PidSpec = field(default_factory=PidSpec)
    velocity_gains: tuple[float, float] = (1.4e6, 2.3e6)
    output_dir: str | None = None

    def __post_init__(self):
        if self.dt <= 0 or self.duration <= 0:
            raise InvalidArgument("dt and duration must be positive")
        if self.bank.mode == "cluster" and self.ratios is None:
            raise ConfigError("cluster bank mode requires allocation ratios")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class TraceLog:
    """Uniform-grid record of one run.  Row k of every array refers to time
    t_k = k dt; input-like rows hold the value applied over [t_k, t_{k+1})
    (the terminal row repeats the last applied input)."""

    time: np.ndarray
    x: np.ndarray
    u: np.ndarray
    tau_c: np.ndarray
    tau_ref: np.ndarray  # G u, the reference effect fed to the observers
    tau_act: np.ndarray  # G Delta(t) u, the physically delivered effect
    residuals: np.ndarray  # (n_observers, N+1, p)
    xhat: np.ndarray  # (n_observers, N+1, n)
    decisions: list[Decision]
    mode: np.ndarray  # allocation mode id per row: 0 nominal, 1 ratio, 2 reduced

    def finite(self) -> bool:
        arrays = (self.time, self.x, self.u, self.tau_c, self.tau_ref,
                  self.tau_act, self.residuals, self.xhat)
        return all(np.all(np.isfinite(a)) for a in arrays)


@dataclass
class SimResult:
    config: ScenarioConfig
    log: TraceLog
    bank: ObserverBank
    plant: LtiPlant
    policy: ThresholdPolicy
    warmup: float
    summary: dict
    cluster_bank: ObserverBank | None = None
    escalation_time: float | None = None
    reconfiguration_time: float | None = None


ALLOC_NOMINAL, ALLOC_RATIO, ALLOC_REDUCED = 0, 1, 2


def _bank_for(config: ScenarioConfig, plant: LtiPlant):
    spec = config.bank
    if spec.mode == "cluster":
        ratios = RatioConstraintSet.from_reference_ratios(
            plant.clusters, list(config.ratios)
        )
        wstar = alloc_mod.cluster_overall_columns(plant.W, plant.clusters, ratios)
        bank = obs_mod.build_bank(
            plant,
            mode="cluster",
            indices=spec.indices,
            M_diag=spec.eigenvalues,
            complement_eigs=spec.complement_eigenvalues,
            input_matrix=wstar,
        )
        return bank, ratios
    bank = obs_mod.build_bank(
        plant,
        mode="actuator",
        indices=spec.indices,
        M_diag=spec.eigenvalues,
        complement_eigs=spec.complement_eigenvalues,
    )
    return bank, None


def slowest_decay(bank: ObserverBank) -> float:
    """Smallest |Re lambda| over all observer matrices of the bank."""
    rates = []
    for obs in bank.observers:
        rates.append(float(np.min(np.abs(np.linalg.eigvals(obs.F).real))))
    return min(rates)


def resolve_policy(config: ScenarioConfig, plant: LtiPlant) -> ThresholdPolicy:
    """Concrete ThresholdPolicy; theta_abs="auto" is calibrated as 3x the
    largest windowed RMS seen on any channel in a fault-free run of the same
    scenario (same disturbance realization, FDI and reconfiguration off)."""
    spec = config.fdi
    if isinstance(spec.theta_abs, str):
        if spec.theta_abs != "auto":
            raise ConfigError(f"unknown theta_abs setting {spec.theta_abs!r}")
        theta = calibrate_theta_abs(config, plant)
    else:
        theta = np.atleast_1d(np.asarray(spec.theta_abs, dtype=float))
    return ThresholdPolicy(
        theta_abs=theta,
        theta_rel=spec.theta_rel,
        window=spec.window,
        persistence=spec.persistence,
    )


def calibrate_theta_abs(config: ScenarioConfig, plant: LtiPlant | None = None) -> np.ndarray:
    """Per-channel absolute floors from a fault-free run: 3x the maximum
    windowed RMS of each residual channel across all observers."""
    plant = plant or build_vessel_plant(config.vessel)
    quiet = replace(
        config,
        faults=FaultProfile.fault_free(),
        fdi=replace(config.fdi, theta_abs=1.0, escalation="off"),
        reconfiguration=ReconfigurationSpec(mode="off"),
    )
    result = run_scenario(quiet, _with_engine=False)
    res = result.log.residuals  # (s, N+1, p)
    w = config.fdi.window
    p = res.shape[2]
    sq = res**2
    # max over a sliding window == max of the windowed mean via cumulative sums
    cs = np.cumsum(sq, axis=1)
    win = (cs[:, w:, :] - cs[:, :-w, :]) / w
    peak = np.sqrt(win.max(axis=(0, 1))) if win.size else np.sqrt(sq.max(axis=(0, 1)))
    floor = np.maximum(3.0 * peak, 1e-12)
    return floor.reshape(p)


def _fault_delta_fn(config: ScenarioConfig, plant: LtiPlant):
    profile = config.faults
    clusters = plant.clusters
    m = plant.m

    def delta(t: float) -> np.ndarray:
        return fault_diagonal(profile, clusters, m, t)

    return delta


def _names_to_columns(names: Sequence[str], plant: LtiPlant) -> tuple[int, ...]:
    cols = []
    for nm in names:
        h = THRUSTER_NAMES.index(nm) + 1
        cols.extend(plant.clusters.groups[h - 1])
    return tuple(sorted(cols))


def run_scenario(config: ScenarioConfig, _with_engine: bool = True) -> SimResult:
    """Simulate one scenario and return the full trace with decisions.

    Per step: sample y = C x, compute tau_c, allocate u (nominal, ratio or
    reduced), feed v = G u to every observer, advance plant and observers
    jointly, classify residuals, isolate, and possibly escalate to cluster
    mode or trigger reconfiguration.
    """
    plant = build_vessel_plant(config.vessel)
    bank, ratios = _bank_for(config, plant)
    n, m, p = plant.n, plant.m, plant.p
    dt, N = config.dt, config.steps
    delta_fn = _fault_delta_fn(config, plant)

    if config.disturbance is not None:
        b_fn = config.disturbance.force_function()
        Minv = np.linalg.inv(config.vessel.inertia)
        Epre = np.vstack([np.zeros((3, 3)), Minv @ rotation_about_z(config.vessel.heading_ref).T])

        def e_fn(t: float) -> np.ndarray:
            return Epre @ b_fn(t)

    else:
        e_fn = None

    engine = None
    policy = None
    warmup = 0.0
    if _with_engine:
        policy = resolve_policy(config, plant)
        warmup = config.fdi.warmup_margin / slowest_decay(bank)
        table = fdi_mod.build_signature_table(
            bank,
            fdi_mod.thruster_hypotheses(plant.clusters, bank.mode,
                                        pairs=config.fdi.pair_hypotheses if bank.mode == "cluster" else ()),
        )
        cluster_table = None
        if config.fdi.escalation == "auto" and bank.mode == "actuator":
            # Structure of the escalation bank is known ahead of time even
            # though its ratio coefficients come from the runtime snapshot.
            cluster_table = _cluster_table_stub(plant, config)
        engine = FdiEngine(
            table,
            policy,
            p,
            warmup=warmup,
            dt=dt,
            escalation=config.fdi.escalation if bank.mode == "actuator" else "off",
            cluster_table=cluster_table,
            reconfiguration=(
                "auto-on-isolation"
                if config.reconfiguration.mode == "auto-on-isolation"
                else "off"
            ),
        )

    s = bank.size
    log = TraceLog(
        time=np.arange(N + 1) * dt,
        x=np.zeros((N + 1, n)),
        u=np.zeros((N + 1, m)),
        tau_c=np.zeros((N + 1, plant.k)),
        tau_ref=np.zeros((N + 1, plant.k)),
        tau_act=np.zeros((N + 1, plant.k)),
        residuals=np.zeros((s, N + 1, p)),
        xhat=np.zeros((s, N + 1, n)),
        decisions=[],
        mode=np.zeros(N + 1, dtype=int),
    )

    x0 = np.concatenate([config.initial_position, config.initial_velocity]).astype(float)
    pid = YawPid(config.pid.kp, config.pid.ki, config.pid.kd,
                 setpoint=config.vessel.heading_ref, output_limit=config.pid.output_limit)
    nu_ref = np.asarray(config.initial_velocity, dtype=float)
    vel_gains = np.asarray(config.velocity_gains, dtype=float)

    # Joint linear system over (x, z_1, ..., z_s).
    def assemble(bank_now: ObserverBank):
        sz = bank_now.size
        Aj = np.zeros((n + sz * n, n + sz * n))
        Aj[:n, :n] = plant.A
        for i, ob in enumerate(bank_now.observers):
            r0 = n + i * n
            Aj[r0 : r0 + n, :n] = ob.K @ ob.C
            Aj[r0 : r0 + n, r0 : r0 + n] = ob.F
        return Aj

    Aj = assemble(bank)
    y0 = plant.output(x0)
    state = np.concatenate([x0] + [ob.init_state(y0) for ob in bank.observers])
    W = plant.W

    alloc_mode = ALLOC_RATIO if bank.mode == "cluster" else ALLOC_NOMINAL
    zero_cols: tuple[int, ...] = ()
    law_switched = False
    escalation_time = None
    reconfig_time = None
    cluster_bank = None
    active_bank = bank
    active_ratios = ratios

    log.x[0] = x0
    for i, ob in enumerate(bank.observers):
        log.xhat[i, 0] = state[n + i * n : n + (i + 1) * n] + ob.H @ y0
        log.residuals[i, 0] = ob.residual(state[n + i * n : n + (i + 1) * n], y0)

    pending_reconfig: tuple[int, ...] | None = None
    pending_escalate = False

    for k in range(N):
        t = k * dt
        x = state[:n]
        y = plant.C @ x

        # fixed-time reconfiguration: engage law + zero set at t0
        rec = config.reconfiguration
        if rec.mode == "fixed-time" and not law_switched and t >= rec.time:
            zero_cols = _names_to_columns(rec.targets, plant)
            if zero_cols:
                alloc_mode = ALLOC_REDUCED
            law_switched = True
            reconfig_time = t

        if pending_reconfig is not None:
            zero_cols = pending_reconfig
            alloc_mode = ALLOC_REDUCED
            law_switched = True
            reconfig_time = t
            pending_reconfig = None

        track = (vel_gains, nu_ref) if law_switched else None
        tau_c = commanded_effect(y, pid, config.vessel.damping, dt, velocity_track=track)

        if alloc_mode == ALLOC_REDUCED and zero_cols:
            res = alloc_mod.reallocate_reduced(plant.G, zero_cols, tau_c)
        elif alloc_mode == ALLOC_RATIO:
            res = alloc_mod.allocate_with_ratios(plant.G, plant.clusters, active_ratios, tau_c)
        else:
            res = alloc_mod.allocate_nominal(plant.G, tau_c)
        u = res.u
        v = res.achieved  # G u

        if pending_escalate:
            # switch to ratio allocation + cluster bank using the current
            # input snapshot; observers restart with fresh warm-up
            plan = fdi_mod.escalate_to_cluster_mode(
                u, plant.G, plant.clusters,
                bank_indices=config.fdi.cluster_bank_indices,
            )
            active_ratios = plan.ratios
            wstar = alloc_mod.cluster_overall_columns(W, plant.clusters, active_ratios)
            cluster_bank = obs_mod.build_bank(
                plant, mode="cluster", indices=plan.bank_indices,
                M_diag=config.bank.eigenvalues,
                complement_eigs=config.bank.complement_eigenvalues,
                input_matrix=wstar,
            )
            if cluster_bank.size != active_bank.size:
                raise ConfigError(
                    "escalation bank must keep the observer count for trace continuity"
                )
            active_bank = cluster_bank
            Aj = assemble(active_bank)
            state = np.concatenate(
                [x] + [ob.init_state(y) for ob in active_bank.observers]
            )
            engine.switch_to_cluster(t)
            escalation_time = t
            alloc_mode = ALLOC_RATIO
            pending_escalate = False
            res = alloc_mod.allocate_with_ratios(plant.G, plant.clusters, active_ratios, tau_c)
            u = res.u
            v = res.achieved

        log.u[k] = u
        log.tau_c[k] = tau_c
        log.tau_ref[k] = v
        log.tau_act[k] = plant.G @ (delta_fn(t) * u)
        log.mode[k] = alloc_mode

        # joint RK4 step; u, v held, fault and disturbance at stage times
        fz = np.zeros(n + active_bank.size * n)
        for i, ob in enumerate(active_bank.observers):
            fz[n + i * n : n + (i + 1) * n] = ob.RB @ v

        def deriv(tt: float, st: np.ndarray) -> np.ndarray:
            dd = Aj @ st + fz
            dd[:n] += W @ (delta_fn(tt) * u)
            if e_fn is not None:
                dd[:n] += e_fn(tt)
            return dd

        k1 = deriv(t, state)
        k2 = deriv(t + 0.5 * dt, state + 0.5 * dt * k1)
        k3 = deriv(t + 0.5 * dt, state + 0.5 * dt * k2)
        k4 = deriv(t + dt, state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise NonFinite(f"simulation diverged at step {k} (t={t:.3f})")

        tn = (k + 1) * dt
        xn = state[:n]
        yn = plant.C @ xn
        log.x[k + 1] = xn
        rs = []
        for i, ob in enumerate(active_bank.observers):
            z = state[n + i * n : n + (i + 1) * n]
            log.xhat[i, k + 1] = z + ob.H @ yn
            r = ob.residual(z, yn)
            log.residuals[i, k + 1] = r
            rs.append(r)

        if engine is not None:
            decision, events = engine.step(tn, rs)
            if decision is not None:
                log.decisions.append(decision)
            for ev in events:
                if ev.kind == "escalate":
                    pending_escalate = True
                elif ev.kind == "reconfigure":
                    directive = fdi_mod.trigger_reconfiguration(
                        ev.decision, plant.G, plant.clusters, time=tn,
                        policy=config.reconfiguration.policy,
                    )
                    pending_reconfig = directive.zero_indices

    # terminal row repeats the last applied inputs
    log.u[N] = log.u[N - 1]
    log.tau_c[N] = log.tau_c[N - 1]
    log.tau_ref[N] = log.tau_ref[N - 1]
    log.tau_act[N] = plant.G @ (delta_fn(N * dt) * log.u[N])
    log.mode[N] = log.mode[N - 1]

    summary = summarize(log, config, reconfig_time)
    return SimResult(
        config=config, log=log, bank=bank, plant=plant,
        policy=policy, warmup=warmup, summary=summary,
        cluster_bank=cluster_bank,
        escalation_time=escalation_time, reconfiguration_time=reconfig_time,
    )


def _cluster_table_stub(plant: LtiPlant, config: ScenarioConfig) -> SignatureTable:
    """Signature table of the escalation bank: its structure depends only on
    the multi-indices, not on the ratio coefficients chosen at runtime."""
    hyps = fdi_mod.thruster_hypotheses(
        plant.clusters, "cluster", pairs=config.fdi.pair_hypotheses
    )
    indices = tuple(tuple(ix) for ix in config.fdi.cluster_bank_indices)
    k0 = len(indices[0])
    patterns = {}
    for hyp in hyps:
        rows = []
        for J in indices:
            contained = hyp.columns <= set(J)
            rows.append(tuple(
                fdi_mod.NONZERO if J[q] in hyp.columns
                else (fdi_mod.ZERO if contained else fdi_mod.ANY)
                for q in range(len(J))
            ))
        patterns[hyp.name] = tuple(rows)
    return SignatureTable(
        hypotheses=tuple(hyps), patterns=patterns, k0=k0, observer_indices=indices
    )


def summarize(log: TraceLog, config: ScenarioConfig, reconfig_time) -> dict:
    detection = next(
        (d.time for d in log.decisions if d.status != fdi_mod.NOMINAL), None
    )
    isolated = next(
        (d for d in log.decisions if d.status == fdi_mod.ISOLATED), None
    )
    summary = {
        "detection_time": detection,
        "isolation_time": isolated.time if isolated else None,
        "isolated": list(isolated.hypotheses) if isolated else [],
        "reconfiguration_time": reconfig_time,
        "terminal_state": log.x[-1].tolist(),
    }
    if reconfig_time is not None:
        i0 = int(round(reconfig_time / config.dt))
        seg = log.x[i0:, 3:5] - np.asarray(config.initial_velocity[:2])
        summary["post_reconfig_velocity_rms"] = float(
            np.sqrt(np.mean(np.sum(seg * seg, axis=1)))
        )
    return summary


def t1_fault_profile(rate: float = 0.03, onset: float = 0.0) -> FaultProfile:
    """Single fading fault on the first azimuth thruster."""
    from .plant import FaultEntry

    return FaultProfile(
        "per-cluster", (FaultEntry(1, exponential_decay(rate), onset),)
    )
