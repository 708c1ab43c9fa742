"""Two-vehicle proximity scenarios coupled through the downwash model.

A scenario advances a large quad (LQ) and a small quad (SQ) on one lockstep
500 Hz clock.  Each vehicle runs its own estimator and cascade; either one
may additionally carry a residual policy.  The only external wrench is the
wake of whichever vehicle is above the other, so the logs isolate the
downwash interaction the scenarios are built to probe.

Scenario seeds control the per-run model mismatch (true mass, inertia and
per-propeller thrust factors drawn near nominal) in the hover-proximity and
circling scenarios; flyover and docking run on nominal models so their
scripted geometry is identical for every seed.
"""

from dataclasses import dataclass, replace

import numpy as np

from .controller import (
    ControllerGains,
    DesiredState,
    HighLevelCommand,
    SIM_DT,
    SIM_RATE,
    StateEstimator,
    TICKS_PER_CONTROL,
    basic_command,
    low_level_control,
)
from .disturbances import DownwashParams, downwash_wrench
from .policy import (
    ZERO_RESIDUAL,
    build_observation,
    policy_forward,
    scale_action,
    superpose,
)
from .reward import compute_reward
from .sim import (
    DOCK_MOUNT_HEIGHT,
    ExternalWrench,
    apply_dock_event,
    hover_state,
    large_quad,
    rest_state,
    small_quad,
    step,
)

LOG_FORMAT = "proxfly-flightlog-v1"

# Documented column order: time, 13 truth-state columns, the three command
# blocks, applied wrench, thrust efficiency, reward terms, then the estimate
# and setpoint the commands were computed from.
LOG_COLUMNS = (
    ("t",)
    + ("px", "py", "pz", "vx", "vy", "vz")
    + ("qw", "qx", "qy", "qz", "wx", "wy", "wz")
    + ("cas_c", "cas_wx", "cas_wy", "cas_wz")
    + ("res_c", "res_wx", "res_wy", "res_wz")
    + ("cmd_c", "cmd_wx", "cmd_wy", "cmd_wz")
    + ("fx", "fy", "fz", "tx", "ty", "tz")
    + ("eff",)
    + ("r_epos", "r_eatt", "r_thrust", "r_rates", "r_total")
    + ("est_px", "est_py", "est_pz", "est_vx", "est_vy", "est_vz")
    + ("est_qw", "est_qx", "est_qy", "est_qz", "est_wx", "est_wy", "est_wz")
    + ("des_px", "des_py", "des_pz", "des_vx", "des_vy", "des_vz", "des_yaw")
)

HOVER_ALTITUDE = 1.2
VERTICAL_SEPARATION = 0.5
CIRCLE_DIAMETER = 1.5
CIRCLE_PERIOD = 7.5
TRAVERSE_SPEED = 0.2
DOCK_DESCENT_SPEED = 0.1
DOCK_GAP = 0.10
DOCK_HORIZONTAL_TOLERANCE = 0.05
UNDOCK_DELAY = 5.0

CRASH_POSITION_ERROR = 3.0
CRASH_UNDERGROUND = -0.05
LIFTOFF_HEIGHT = 0.1

SCENARIO_NAMES = (
    "flyover",
    "hover_prox",
    "circle_same",
    "circle_reversed",
    "docking",
)

FLYOVER_HEIGHTS = (0.25, 0.5, 0.75)


@dataclass
class FlightLog:
    """Per-control-step records of one vehicle's run, one row per 50 Hz step."""

    data: np.ndarray

    def __len__(self):
        return self.data.shape[0]

    def column(self, name):
        return self.data[:, LOG_COLUMNS.index(name)]

    def block(self, *names):
        idx = [LOG_COLUMNS.index(n) for n in names]
        return self.data[:, idx]

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# {LOG_FORMAT}\n")
            fh.write(",".join(LOG_COLUMNS) + "\n")
            for row in self.data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def load_csv(cls, path):
        with open(path) as fh:
            magic = fh.readline().strip()
            if magic != f"# {LOG_FORMAT}":
                raise ValueError(f"not a {LOG_FORMAT} file: {path}")
            names = fh.readline().strip().split(",")
            for got, want in zip(names, LOG_COLUMNS):
                if got != want:
                    raise ValueError(f"schema mismatch at column {want!r}: got {got!r}")
            if len(names) != len(LOG_COLUMNS):
                raise ValueError(
                    f"schema mismatch: {len(names)} columns, expected {len(LOG_COLUMNS)}"
                )
            rows = []
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rows.append([float(cell) for cell in line.split(",")])
        if not rows:
            raise ValueError(f"empty flight log: {path}")
        data = np.array(rows)
        if data.shape[1] != len(LOG_COLUMNS):
            raise ValueError(f"malformed flight log row in {path}")
        return cls(data)


@dataclass
class ScenarioResult:
    logs: dict
    events: list
    failed: bool = False
    failure: str | None = None


def circle_reference(t, center, diameter, period, direction, phase):
    """Setpoint on a horizontal circle with matching tangential velocity."""
    center = np.asarray(center, dtype=float)
    radius = 0.5 * diameter
    rate = 2.0 * np.pi / period
    angle = phase + direction * rate * t
    position = center + radius * np.array([np.cos(angle), np.sin(angle), 0.0])
    velocity = radius * rate * direction * np.array([-np.sin(angle), np.cos(angle), 0.0])
    return DesiredState(position=position, velocity=velocity)


def hover_reference(position, yaw=0.0):
    position = np.asarray(position, dtype=float)

    def ref(t):
        return DesiredState(position=position.copy(), yaw=yaw)

    return ref


def segment_reference(waypoints):
    """Piecewise-linear position schedule through (time, point) waypoints.

    Velocity is the segment slope; the setpoint holds the first point before
    the schedule starts and the last point after it ends.
    """
    times = np.array([w[0] for w in waypoints], dtype=float)
    points = np.array([w[1] for w in waypoints], dtype=float)
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("waypoint times must be strictly increasing")

    def ref(t):
        if t <= times[0]:
            return DesiredState(position=points[0].copy())
        if t >= times[-1]:
            return DesiredState(position=points[-1].copy())
        i = int(np.searchsorted(times, t, side="right") - 1)
        span = times[i + 1] - times[i]
        velocity = (points[i + 1] - points[i]) / span
        return DesiredState(
            position=points[i] + (t - times[i]) * velocity, velocity=velocity
        )

    return ref


def eval_model_jitter(rng, params):
    """True-model mismatch drawn near nominal for seeded evaluation runs.

    Draw order: mass factor, inertia factor, overall thrust scale, per-prop
    asymmetry.  The asymmetry is recentred to zero mean so it disturbs
    torque without shifting total thrust; the magnitudes are kept small
    enough that a basic-only vehicle stays near its setpoint and the
    proximity geometry of the scenario survives.  The controller keeps the
    nominal model either way.
    """
    mass_factor = rng.uniform(0.95, 1.05)
    inertia_factor = rng.uniform(0.95, 1.05)
    thrust_scale = rng.uniform(0.97, 1.03)
    asymmetry = rng.uniform(-0.08, 0.08, 4)
    asymmetry -= asymmetry.mean()
    return replace(
        params,
        mass=params.mass * mass_factor,
        inertia_diag=params.inertia_diag * inertia_factor,
        per_propeller_thrust_factors=thrust_scale * (1.0 + asymmetry),
    )


class _Rig:
    """One vehicle's closed loop inside a scenario."""

    def __init__(self, name, true_params, model_params, state, reference, policy=None):
        self.name = name
        self.true_params = true_params
        self.model_params = model_params
        self.base_factors = true_params.per_propeller_thrust_factors.copy()
        self.state = state
        self.reference = reference
        self.policy = policy
        self.gains = ControllerGains()
        self.estimator = StateEstimator()
        self.est = None
        self.des = None
        self.u_cas = HighLevelCommand(0.0, np.zeros(3))
        self.residual = ZERO_RESIDUAL
        self.cmd = HighLevelCommand(0.0, np.zeros(3))
        self.prev_residual = ZERO_RESIDUAL
        self.prev_cmd = None
        self.wrench_force = np.zeros(3)
        self.wrench_torque = np.zeros(3)
        self.efficiency = 1.0
        self.motors_on = True
        self.attached = False
        self.host = None
        self.lifted = False
        self.rows = []

    def thrust(self):
        """Instantaneous total thrust in N from the current motor speeds."""
        return float(
            self.true_params.thrust_coeff
            * np.sum(self.base_factors * self.state.motor_speeds**2)
        )

    def step_params(self):
        if self.efficiency == 1.0:
            return self.true_params
        return replace(
            self.true_params,
            per_propeller_thrust_factors=self.base_factors * self.efficiency,
        )


def _control_step(rig, t):
    if rig.attached:
        rig.des = DesiredState(position=rig.state.position.copy())
        rig.u_cas = HighLevelCommand(0.0, np.zeros(3))
        rig.residual = ZERO_RESIDUAL
        rig.cmd = HighLevelCommand(0.0, np.zeros(3))
    elif not rig.motors_on:
        rig.des = rig.reference(t)
        rig.u_cas = HighLevelCommand(0.0, np.zeros(3))
        rig.residual = ZERO_RESIDUAL
        rig.cmd = HighLevelCommand(0.0, np.zeros(3))
    else:
        rig.des = rig.reference(t)
        rig.u_cas = basic_command(rig.est, rig.des, rig.gains)
        if rig.policy is not None:
            obs = build_observation(rig.est, rig.des, rig.u_cas, rig.prev_residual)
            mean, _ = policy_forward(obs, rig.policy)
            rig.residual = scale_action(np.clip(mean, -1.0, 1.0))
            rig.cmd = superpose(rig.u_cas, rig.residual)
        else:
            rig.residual = ZERO_RESIDUAL
            rig.cmd = HighLevelCommand(rig.u_cas.thrust, rig.u_cas.body_rates.copy())
    if rig.prev_cmd is None:
        rig.prev_cmd = rig.cmd


def _log_row(rig, t):
    est = rig.est if rig.est is not None else rig.state
    if rig.attached:
        reward_terms = np.array([0.0, 0.0, 0.0, 0.0, 0.1])
    else:
        reward_terms = compute_reward(rig.prev_cmd, rig.cmd, est, rig.des).as_array()
    return np.concatenate(
        [
            [t],
            rig.state.position,
            rig.state.velocity,
            rig.state.quaternion,
            rig.state.body_rates,
            rig.u_cas.as_array(),
            rig.residual.as_array(),
            rig.cmd.as_array(),
            rig.wrench_force,
            rig.wrench_torque,
            [rig.efficiency],
            reward_terms,
            est.position,
            est.velocity,
            est.quaternion,
            est.body_rates,
            rig.des.position,
            rig.des.velocity,
            [rig.des.yaw],
        ]
    )


def _crash_reason(rig, t):
    state = rig.state
    if state.position[2] > LIFTOFF_HEIGHT:
        rig.lifted = True
    if 1.0 - 2.0 * (state.quaternion[1] ** 2 + state.quaternion[2] ** 2) < 0.0:
        return f"{rig.name} flipped at t={t:.2f}"
    if rig.lifted and state.position[2] < CRASH_UNDERGROUND:
        return f"{rig.name} hit the ground at t={t:.2f}"
    if rig.motors_on and not rig.attached:
        err = float(np.linalg.norm(rig.des.position - state.position))
        if err > CRASH_POSITION_ERROR:
            return f"{rig.name} diverged at t={t:.2f}"
    return None


def _apply_downwash(rigs, params):
    """Wake of the SQ acting on the LQ below it; zero whenever not above.

    The reverse interaction (LQ wake on the SQ) is omitted: the model covers
    the disturbance on the lower vehicle of the pair, and the SQ flies above
    the LQ in every scripted geometry that matters.
    """
    lq, sq = rigs["LQ"], rigs["SQ"]
    for rig in rigs.values():
        rig.wrench_force = np.zeros(3)
        rig.wrench_torque = np.zeros(3)
        rig.efficiency = 1.0
    if params is None or lq.attached or sq.attached:
        return
    force, torque, eff = downwash_wrench(
        sq.state.position, lq.state.position, sq.thrust(), params
    )
    lq.wrench_force = force
    lq.wrench_torque = torque
    lq.efficiency = eff


def _simulate(rigs, duration, downwash, hook=None):
    """Advance every rig on one 500 Hz clock; returns the ScenarioResult."""
    ticks = int(round(duration * SIM_RATE))
    events = []
    failed = False
    failure = None
    for k in range(ticks):
        t = k * SIM_DT
        for rig in rigs.values():
            if not rig.attached:
                rig.est = rig.estimator.update(t, rig.state)
        _apply_downwash(rigs, downwash)
        if hook is not None:
            hook.tick(t, rigs, events)
        if k % TICKS_PER_CONTROL == 0:
            if hook is not None:
                hook.control(t, rigs, events)
            for rig in rigs.values():
                _control_step(rig, t)
                rig.rows.append(_log_row(rig, t))
                rig.prev_cmd = rig.cmd
                rig.prev_residual = rig.residual
            for rig in rigs.values():
                reason = None if rig.attached else _crash_reason(rig, t)
                if reason is not None:
                    failed, failure = True, reason
                    break
            if failed:
                break
        for rig in rigs.values():
            if rig.attached:
                continue
            if rig.motors_on:
                speeds = low_level_control(rig.est, rig.cmd, rig.model_params, rig.gains)
            else:
                speeds = np.zeros(4)
            wrench = ExternalWrench(rig.wrench_force, rig.wrench_torque)
            rig.state = step(rig.state, speeds, wrench, rig.step_params(), SIM_DT)
        for rig in rigs.values():
            if rig.attached:
                rig.state = _mounted_state(rigs[rig.host].state)
    if hook is not None and hook.failure is not None and not failed:
        failed, failure = True, hook.failure
    logs = {name: FlightLog(np.array(rig.rows)) for name, rig in rigs.items()}
    return ScenarioResult(logs=logs, events=events, failed=failed, failure=failure)


def _mounted_state(host_state):
    state = host_state.copy()
    state.position = state.position + np.array([0.0, 0.0, DOCK_MOUNT_HEIGHT])
    state.motor_speeds = np.zeros(4)
    return state


def _policies(controllers):
    controllers = controllers or {}
    return controllers.get("LQ"), controllers.get("SQ")


def _jittered_vehicles(seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return eval_model_jitter(rng, large_quad()), eval_model_jitter(rng, small_quad())


def flyover_scenario(height_offset, controllers=None, seed=0, downwash=DownwashParams()):
    """SQ crosses over a hovering LQ at a set height offset and lands.

    The LQ holds (0, 0, 1.2) throughout; the SQ takes off at (-1, 0, 0),
    climbs to the flyover altitude, traverses +x at 0.2 m/s with a 5 s hover
    directly overhead, then continues to (1, 0, 0) and lands.  Models are
    nominal regardless of seed.
    """
    if not any(abs(height_offset - h) < 1e-12 for h in FLYOVER_HEIGHTS):
        raise ValueError(f"height_offset must be one of {FLYOVER_HEIGHTS}")
    lq_policy, sq_policy = _policies(controllers)
    lq_params, sq_params = large_quad(), small_quad()
    top = HOVER_ALTITUDE + height_offset
    hover_point = np.array([0.0, 0.0, HOVER_ALTITUDE])
    sq_ref = segment_reference(
        [
            (0.0, (-1.0, 0.0, 0.0)),
            (4.0, (-1.0, 0.0, top)),
            (5.0, (-1.0, 0.0, top)),
            (10.0, (0.0, 0.0, top)),
            (15.0, (0.0, 0.0, top)),
            (20.0, (1.0, 0.0, top)),
            (25.0, (1.0, 0.0, 0.0)),
        ]
    )
    rigs = {
        "LQ": _Rig(
            "LQ",
            lq_params,
            large_quad(),
            hover_state(lq_params, hover_point),
            hover_reference(hover_point),
            lq_policy,
        ),
        "SQ": _Rig(
            "SQ",
            sq_params,
            small_quad(),
            rest_state((-1.0, 0.0, 0.0)),
            sq_ref,
            sq_policy,
        ),
    }
    return _simulate(rigs, 26.0, downwash)


def hover_proximity_scenario(controllers=None, seed=0, downwash=DownwashParams()):
    """Both vehicles hold hover setpoints stacked 0.5 m apart for 20 s.

    The seed draws the true-model mismatch for both vehicles; the stacked
    geometry keeps the LQ inside the SQ wake the whole run.
    """
    lq_policy, sq_policy = _policies(controllers)
    lq_params, sq_params = _jittered_vehicles(seed)
    lq_point = np.array([0.0, 0.0, HOVER_ALTITUDE])
    sq_point = lq_point + np.array([0.0, 0.0, VERTICAL_SEPARATION])
    rigs = {
        "LQ": _Rig(
            "LQ",
            lq_params,
            large_quad(),
            hover_state(large_quad(), lq_point),
            hover_reference(lq_point),
            lq_policy,
        ),
        "SQ": _Rig(
            "SQ",
            sq_params,
            small_quad(),
            hover_state(small_quad(), sq_point),
            hover_reference(sq_point),
            sq_policy,
        ),
    }
    return _simulate(rigs, 20.0, downwash)


def circling_scenario(mode, controllers=None, seed=0, downwash=DownwashParams()):
    """Both vehicles track 1.5 m circles, SQ 0.5 m above the LQ.

    same: both counterclockwise and in phase, so the SQ stays overhead.
    reversed: the LQ circles clockwise starting on the far side, so the SQ
    passes over it twice per 7.5 s period.  Two full periods are flown.
    """
    if mode not in ("same", "reversed"):
        raise ValueError(f"mode must be 'same' or 'reversed', got {mode!r}")
    lq_policy, sq_policy = _policies(controllers)
    lq_params, sq_params = _jittered_vehicles(seed)
    lq_center = np.array([0.0, 0.0, HOVER_ALTITUDE])
    sq_center = lq_center + np.array([0.0, 0.0, VERTICAL_SEPARATION])
    lq_direction = 1.0 if mode == "same" else -1.0
    lq_phase = 0.0 if mode == "same" else np.pi

    def lq_ref(t):
        return circle_reference(
            t, lq_center, CIRCLE_DIAMETER, CIRCLE_PERIOD, lq_direction, lq_phase
        )

    def sq_ref(t):
        return circle_reference(t, sq_center, CIRCLE_DIAMETER, CIRCLE_PERIOD, 1.0, 0.0)

    lq_start = lq_ref(0.0)
    sq_start = sq_ref(0.0)
    lq_state = hover_state(large_quad(), lq_start.position)
    lq_state.velocity = lq_start.velocity.copy()
    sq_state = hover_state(small_quad(), sq_start.position)
    sq_state.velocity = sq_start.velocity.copy()
    rigs = {
        "LQ": _Rig("LQ", lq_params, large_quad(), lq_state, lq_ref, lq_policy),
        "SQ": _Rig("SQ", sq_params, small_quad(), sq_state, sq_ref, sq_policy),
    }
    return _simulate(rigs, 2.0 * CIRCLE_PERIOD, downwash)


class _DockingHook:
    """Approach, free-fall dock, ride, undock, departure state machine."""

    def __init__(self):
        self.phase = "approach"
        self.failure = None
        self.undock_time = None
        self.lq_solo_params = None

    def tick(self, t, rigs, events):
        lq, sq = rigs["LQ"], rigs["SQ"]
        if self.phase == "freefall":
            gap = sq.state.position[2] - lq.state.position[2]
            if gap <= DOCK_MOUNT_HEIGHT:
                impact = lq.state.velocity[2] - sq.state.velocity[2]
                self.lq_solo_params = lq.true_params
                combined, state = apply_dock_event(
                    lq.true_params, sq.true_params, impact, lq.state
                )
                lq.true_params = combined
                lq.base_factors = combined.per_propeller_thrust_factors.copy()
                lq.state = state
                sq.attached = True
                sq.host = "LQ"
                sq.state = _mounted_state(lq.state)
                events.append((t, "dock"))
                self.undock_time = t + UNDOCK_DELAY
                self.phase = "docked"

    def control(self, t, rigs, events):
        lq, sq = rigs["LQ"], rigs["SQ"]
        if self.phase == "approach" and t >= 7.0 - 1e-9:
            self.phase = "descend"
        if self.phase == "descend":
            gap = sq.state.position[2] - lq.state.position[2]
            offset = np.linalg.norm(
                sq.state.position[:2] - lq.state.position[:2]
            )
            if gap <= DOCK_GAP + DOCK_MOUNT_HEIGHT + 1e-6:
                if offset < DOCK_HORIZONTAL_TOLERANCE:
                    sq.motors_on = False
                    events.append((t, "motor_cutoff"))
                    self.phase = "freefall"
                else:
                    self.failure = (
                        f"failed dock at t={t:.2f}: horizontal offset "
                        f"{offset:.3f} m"
                    )
                    events.append((t, "failed_dock"))
                    sq.reference = hover_reference(
                        np.array([0.0, -1.0, HOVER_ALTITUDE + VERTICAL_SEPARATION])
                    )
                    self.phase = "aborted"
        elif self.phase == "docked" and t >= self.undock_time - 1e-9:
            lq.true_params = self.lq_solo_params
            lq.base_factors = self.lq_solo_params.per_propeller_thrust_factors.copy()
            sq.attached = False
            sq.motors_on = True
            sq.state = _mounted_state(lq.state)
            sq.estimator = StateEstimator()
            sq.prev_cmd = None
            sq.prev_residual = ZERO_RESIDUAL
            sq.est = sq.estimator.update(t, sq.state)
            start = sq.state.position.copy()
            sq.reference = segment_reference(
                [
                    (t, start),
                    (t + 2.0, (start[0], start[1], HOVER_ALTITUDE + VERTICAL_SEPARATION)),
                    (t + 7.0, (0.0, -1.0, HOVER_ALTITUDE + VERTICAL_SEPARATION)),
                ]
            )
            events.append((t, "undock"))
            self.phase = "departed"


def docking_scenario(controllers=None, seed=0, downwash=DownwashParams(), approach_xy=(0.0, 0.0)):
    """SQ docks onto the hovering LQ, rides for 5 s, then departs.

    The SQ holds (0, -1, 1.7), slides over the LQ, descends at 0.1 m/s and
    cuts its motors once it is 10 cm above the mount with under 5 cm of
    horizontal offset; the free-fall impact merges the bodies.  Undock is
    scripted 5 s after the dock event.  Models are nominal regardless of
    seed; approach_xy offsets the approach path to exercise the failed-dock
    branch.
    """
    lq_policy, sq_policy = _policies(controllers)
    lq_params, sq_params = large_quad(), small_quad()
    lq_point = np.array([0.0, 0.0, HOVER_ALTITUDE])
    sq_top = HOVER_ALTITUDE + VERTICAL_SEPARATION
    target_xy = np.asarray(approach_xy, dtype=float)
    sq_ref = segment_reference(
        [
            (0.0, (0.0, -1.0, sq_top)),
            (2.0, (0.0, -1.0, sq_top)),
            (7.0, (target_xy[0], target_xy[1], sq_top)),
            (7.0 + sq_top / DOCK_DESCENT_SPEED, (target_xy[0], target_xy[1], 0.0)),
        ]
    )
    rigs = {
        "LQ": _Rig(
            "LQ",
            lq_params,
            large_quad(),
            hover_state(lq_params, lq_point),
            hover_reference(lq_point),
            lq_policy,
        ),
        "SQ": _Rig(
            "SQ",
            sq_params,
            small_quad(),
            hover_state(sq_params, (0.0, -1.0, sq_top)),
            sq_ref,
            sq_policy,
        ),
    }
    return _simulate(rigs, 30.0, downwash, hook=_DockingHook())


def run_scenario(name, controllers=None, seed=0, height=0.25, downwash=DownwashParams()):
    """Dispatch a scenario by its command-line name."""
    if name == "flyover":
        return flyover_scenario(height, controllers, seed, downwash)
    if name == "hover_prox":
        return hover_proximity_scenario(controllers, seed, downwash)
    if name == "circle_same":
        return circling_scenario("same", controllers, seed, downwash)
    if name == "circle_reversed":
        return circling_scenario("reversed", controllers, seed, downwash)
    if name == "docking":
        return docking_scenario(controllers, seed, downwash)
    raise ValueError(f"unknown scenario {name!r}, expected one of {SCENARIO_NAMES}")
