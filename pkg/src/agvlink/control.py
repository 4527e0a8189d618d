"""Kinematic unicycle tracking of a closed reference path.

The vehicle state is a planar pose (x, y, theta). A cloud controller measures
the tracking error in the vehicle frame,

    x_e =  cos(theta_c) dx + sin(theta_c) dy
    y_e = -sin(theta_c) dx + cos(theta_c) dy      (dx, dy = reference - actual)
    theta_e = theta_r - theta_c

and sends back the velocity command

    nu    = nu_r cos(theta_e) + k_x x_e
    omega = omega_r + nu_r (k_y y_e + k_theta sin(theta_e))

which the vehicle integrates with a forward-Euler step of period ts. Commands
travel over a lossy downlink: on a lost packet the vehicle keeps applying the
last delivered command (zero-order hold). The uplink is ideal, so the error is
always measured from the fresh state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._io import csv_sink
from .exceptions import BufferUnderflowError, ParameterError

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = angle - TWO_PI * math.floor((angle + math.pi) / TWO_PI)
    # floor rounding can land exactly on -pi; the convention here is (-pi, pi]
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose:
    """Planar pose; heading is stored accumulated (not wrapped)."""

    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class TrackError:
    """Tracking error rotated into the vehicle frame."""

    x_e: float
    y_e: float
    theta_e: float


@dataclass(frozen=True)
class ControlInput:
    """Translational and rotational velocity command."""

    nu: float
    omega: float


@dataclass(frozen=True)
class Gains:
    """Feedback gains; k_x in 1/s, k_y and k_theta in 1/m."""

    k_x: float = 10.0
    k_y: float = 6.4e-3
    k_theta: float = 0.16

    def __post_init__(self) -> None:
        if min(self.k_x, self.k_y, self.k_theta) <= 0.0:
            raise ParameterError("feedback gains must be strictly positive")


@dataclass(frozen=True)
class TrackSpec:
    """Parametric closed-track geometry.

    shape 'circle' uses semi_axis_a as the radius; 'ellipse' uses both
    semi-axes with a constant-rate parameter (speed varies along the path).
    """

    shape: str = "circle"
    semi_axis_a: float = 350.0
    semi_axis_b: float | None = None
    start_angle: float = math.pi
    direction: str = "ccw"

    def __post_init__(self) -> None:
        if self.shape not in ("circle", "ellipse"):
            raise ParameterError(f"unknown track shape {self.shape!r}")
        if self.direction not in ("ccw", "cw"):
            raise ParameterError(f"unknown track direction {self.direction!r}")
        b = self.semi_axis_b if self.semi_axis_b is not None else self.semi_axis_a
        if self.semi_axis_a <= 0.0 or b <= 0.0:
            raise ParameterError("track semi-axes must be strictly positive")

    @property
    def axis_b(self) -> float:
        return self.semi_axis_b if self.semi_axis_b is not None else self.semi_axis_a


@dataclass(frozen=True)
class ReferenceTrack:
    """Sampled closed reference path.

    Arrays hold n_steps + 1 samples (index n_steps closes the lap onto index 0;
    headings at the closure differ by one full turn because theta accumulates).
    """

    xs: np.ndarray
    ys: np.ndarray
    thetas: np.ndarray
    nus: np.ndarray
    omegas: np.ndarray
    ts: float
    trace_time: float
    spec: TrackSpec

    @property
    def n_steps(self) -> int:
        return len(self.xs) - 1

    def pose(self, k: int) -> Pose:
        return Pose(float(self.xs[k]), float(self.ys[k]), float(self.thetas[k]))

    def sample(self, k: int) -> tuple[Pose, float, float]:
        return self.pose(k), float(self.nus[k]), float(self.omegas[k])

    @property
    def max_speed(self) -> float:
        return float(np.max(self.nus))

    def heading_per_lap(self) -> float:
        """Accumulated heading change over one closed lap (+-2*pi)."""
        return float(self.thetas[-1] - self.thetas[0])


def build_reference_track(spec: TrackSpec, trace_time: float, ts: float) -> ReferenceTrack:
    """Sample a closed track traced in `trace_time` seconds at period `ts`.

    The path parameter advances by exactly one turn over ceil(trace_time/ts)
    steps, so the final sample closes onto the first (positions exactly,
    heading up to one accumulated turn). Reference velocities come from the
    analytic derivatives of the parametrization.
    """
    if ts <= 0.0:
        raise ParameterError("sampling period ts must be positive")
    if trace_time < ts:
        raise ParameterError("trace_time must be at least one sampling period")
    n_steps = math.ceil(trace_time / ts)
    sign = 1.0 if spec.direction == "ccw" else -1.0
    a, b = spec.semi_axis_a, spec.axis_b

    k = np.arange(n_steps + 1)
    phi = spec.start_angle + sign * TWO_PI * k / n_steps
    phi_dot = sign * TWO_PI / (n_steps * ts)

    xs = a * np.cos(phi)
    ys = b * np.sin(phi)
    x_dot = -a * np.sin(phi) * phi_dot
    y_dot = b * np.cos(phi) * phi_dot
    nus = np.hypot(x_dot, y_dot)
    # curvature rate omega = (x' y'' - y' x'') / nu^2 with the second
    # derivatives of the constant-rate parametrization
    omegas = (a * b * phi_dot**3) / (nus * nus)
    thetas = np.unwrap(np.arctan2(y_dot, x_dot))

    return ReferenceTrack(xs=xs, ys=ys, thetas=thetas, nus=nus, omegas=omegas,
                          ts=float(ts), trace_time=float(trace_time), spec=spec)


def tracking_error(x_r: Pose, x_c: Pose) -> TrackError:
    """Rotate the pose difference into the vehicle frame of x_c."""
    c, s = math.cos(x_c.theta), math.sin(x_c.theta)
    dx, dy = x_r.x - x_c.x, x_r.y - x_c.y
    return TrackError(c * dx + s * dy, -s * dx + c * dy, x_r.theta - x_c.theta)


def control_law(err: TrackError, nu_r: float, omega_r: float, g: Gains) -> ControlInput:
    """Tracking feedback; reduces to (nu_r, omega_r) at zero error.

    theta_e is wrapped into (-pi, pi] first: the law is derived for small
    errors and accumulated headings would otherwise feed spurious full turns
    into the trig terms on long runs.
    """
    th = wrap_angle(err.theta_e)
    nu = nu_r * math.cos(th) + g.k_x * err.x_e
    omega = omega_r + nu_r * (g.k_y * err.y_e + g.k_theta * math.sin(th))
    return ControlInput(nu, omega)


def plant_step(x_c: Pose, u: ControlInput, ts: float) -> Pose:
    """One forward-Euler step of the unicycle difference equation."""
    if ts <= 0.0:
        raise ParameterError("sampling period ts must be positive")
    return Pose(x_c.x + ts * math.cos(x_c.theta) * u.nu,
                x_c.y + ts * math.sin(x_c.theta) * u.nu,
                x_c.theta + ts * u.omega)


class InputBuffer:
    """Ring of delivered commands supporting exact lag-n lookback."""

    def __init__(self, depth: int):
        if depth < 0:
            raise ParameterError("buffer depth must be nonnegative")
        self.depth = depth
        self._ring: list[ControlInput] = []

    def push(self, u: ControlInput) -> None:
        self._ring.append(u)
        if len(self._ring) > self.depth + 1:
            del self._ring[0]

    def __len__(self) -> int:
        return len(self._ring)

    def at_lag(self, lag_n: int) -> ControlInput:
        """Return the command recorded lag_n pushes ago (lag 0 = latest)."""
        if lag_n < 0 or lag_n > self.depth:
            raise ParameterError(f"lag {lag_n} outside buffer depth {self.depth}")
        if lag_n >= len(self._ring):
            raise BufferUnderflowError(
                f"lag {lag_n} requested with only {len(self._ring)} inputs recorded")
        return self._ring[-1 - lag_n]


def delayed_input(buf: InputBuffer, lag_n: int) -> ControlInput:
    """Zero-order-hold lookup of the command sent lag_n samples ago."""
    return buf.at_lag(lag_n)


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop run: per-step states, errors, applied commands, loss flags."""

    ts: float
    x_c: np.ndarray
    y_c: np.ndarray
    theta_c: np.ndarray
    x_e: np.ndarray
    y_e: np.ndarray
    theta_e: np.ndarray
    nu_applied: np.ndarray
    omega_applied: np.ndarray
    outage: np.ndarray
    final_pose: Pose = field(repr=False, default=None)  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self.x_c)

    def position_error(self) -> np.ndarray:
        """Per-step ||(x_e, y_e)||."""
        return np.hypot(self.x_e, self.y_e)


def simulate_closed_loop(track: ReferenceTrack, g: Gains,
                         outage_schedule) -> Trajectory:
    """Run the delayed closed loop against `track`.

    outage_schedule[k] true means the downlink packet at step k is lost and
    the previous delivered command is held. The first command is always
    delivered (the hold register must be seeded), so schedule[0] is ignored.
    The run length equals len(outage_schedule); schedules longer than one lap
    wrap around the closed track with the heading continued across laps.
    """
    schedule = np.asarray(outage_schedule, dtype=bool)
    steps = len(schedule)
    if steps == 0:
        raise ParameterError("outage schedule must contain at least one step")

    n_steps = track.n_steps
    ts = track.ts
    xs, ys, thetas = track.xs, track.ys, track.thetas
    nus, omegas = track.nus, track.omegas
    lap_turn = track.heading_per_lap()

    out_xc = np.empty(steps); out_yc = np.empty(steps); out_thc = np.empty(steps)
    out_xe = np.empty(steps); out_ye = np.empty(steps); out_the = np.empty(steps)
    out_nu = np.empty(steps); out_om = np.empty(steps)
    out_flag = np.zeros(steps, dtype=bool)

    kx, ky, kth = g.k_x, g.k_y, g.k_theta
    cos, sin = math.cos, math.sin
    x = float(xs[0]); y = float(ys[0]); th = float(thetas[0])
    hold_nu = 0.0; hold_om = 0.0

    for k in range(steps):
        r = k % n_steps
        lap = k // n_steps
        xr = xs[r]; yr = ys[r]; thr = thetas[r] + lap * lap_turn
        c = cos(th); s = sin(th)
        dx = xr - x; dy = yr - y
        xe = c * dx + s * dy
        ye = -s * dx + c * dy
        the = thr - th
        if k == 0 or not schedule[k]:
            thw = wrap_angle(the)
            nur = nus[r]
            hold_nu = nur * cos(thw) + kx * xe
            hold_om = omegas[r] + nur * (ky * ye + kth * sin(thw))
        else:
            out_flag[k] = True
        out_xc[k] = x; out_yc[k] = y; out_thc[k] = th
        out_xe[k] = xe; out_ye[k] = ye; out_the[k] = the
        out_nu[k] = hold_nu; out_om[k] = hold_om
        x += ts * c * hold_nu
        y += ts * s * hold_nu
        th += ts * hold_om

    return Trajectory(ts=ts, x_c=out_xc, y_c=out_yc, theta_c=out_thc,
                      x_e=out_xe, y_e=out_ye, theta_e=out_the,
                      nu_applied=out_nu, omega_applied=out_om, outage=out_flag,
                      final_pose=Pose(x, y, th))


TRAJECTORY_COLUMNS = ["k", "t", "x_r", "y_r", "theta_r", "x_c", "y_c", "theta_c",
                      "x_e", "y_e", "theta_e", "nu_applied", "omega_applied",
                      "outage_flag"]


def write_trajectory_csv(traj: Trajectory, track: ReferenceTrack, path) -> None:
    """Write a run to CSV (one row per step, header mandatory, SI units)."""
    n_steps = track.n_steps
    lap_turn = track.heading_per_lap()
    with csv_sink(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for k in range(len(traj)):
            r = k % n_steps
            lap = k // n_steps
            writer.writerow([
                k, repr(k * traj.ts),
                repr(float(track.xs[r])), repr(float(track.ys[r])),
                repr(float(track.thetas[r] + lap * lap_turn)),
                repr(float(traj.x_c[k])), repr(float(traj.y_c[k])),
                repr(float(traj.theta_c[k])),
                repr(float(traj.x_e[k])), repr(float(traj.y_e[k])),
                repr(float(traj.theta_e[k])),
                repr(float(traj.nu_applied[k])), repr(float(traj.omega_applied[k])),
                int(traj.outage[k]),
            ])
