"""Stability of the delayed tracking loop.

Linearizing the closed loop about the zero-error trajectory, with the command
computed from the state n samples ago, gives a per-step 3x3 matrix in the
current heading, the stale heading, and the stale speed. The loop is declared
tolerant of n consecutive losses when every per-step matrix along the
reference has spectral radius below one; the largest such n is searched by
exponential ramp plus bisection over a vectorized per-step eigenvalue scan.

An independent check drives the nonlinear simulation with forced outage
bursts and classifies stability from the realized tracking error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._io import csv_sink
from .control import Gains, ReferenceTrack, simulate_closed_loop
from .exceptions import NumericConsistencyError, ParameterError

_CHUNK = 1 << 18


def state_jacobian(theta_k: float, theta_kn: float, nu_kn: float, ts: float,
                   g: Gains) -> np.ndarray:
    """Jacobian of the closed-loop step w.r.t. the state, at zero error.

    theta_k is the current heading, theta_kn and nu_kn the heading and speed
    at the (n-samples-stale) instant the applied command was computed.
    """
    if ts <= 0.0:
        raise ParameterError("sampling period ts must be positive")
    ck, sk = math.cos(theta_k), math.sin(theta_k)
    ckn, skn = math.cos(theta_kn), math.sin(theta_kn)
    return np.array([
        [1.0 - ts * g.k_x * ck * ckn, -ts * g.k_x * ck * skn, -ts * sk * nu_kn],
        [-ts * g.k_x * sk * ckn, 1.0 - ts * g.k_x * sk * skn, ts * ck * nu_kn],
        [ts * g.k_y * skn * nu_kn, -ts * g.k_y * ckn * nu_kn,
         1.0 - ts * g.k_theta * nu_kn],
    ])


def input_jacobian(theta_k: float) -> np.ndarray:
    """Jacobian of the plant step w.r.t. the applied command (per unit ts)."""
    return np.array([[math.cos(theta_k), 0.0],
                     [math.sin(theta_k), 0.0],
                     [0.0, 1.0]])


def _char_coeffs(a: np.ndarray) -> tuple[float, float, float]:
    """Coefficients (tr, m2, det) of lam^3 - tr lam^2 + m2 lam - det."""
    tr = a[0, 0] + a[1, 1] + a[2, 2]
    m2 = ((a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
          + (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0])
          + (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]))
    det = (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
           - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
           + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
    return float(tr), float(m2), float(det)


def _cubic_roots(tr: float, m2: float, det: float) -> np.ndarray:
    """Roots of lam^3 - tr lam^2 + m2 lam - det as a complex triple."""
    s = tr / 3.0
    p = m2 - tr * tr / 3.0
    q = m2 * s - det - 2.0 * s**3
    disc = 0.25 * q * q + p**3 / 27.0
    if disc <= 0.0:
        # three real roots, trigonometric form
        if p >= 0.0:  # only reachable with p == q == 0 (triple root)
            return np.array([s, s, s], dtype=complex)
        m = math.sqrt(-p / 3.0)
        arg = min(1.0, max(-1.0, 3.0 * q / (2.0 * p * m)))
        theta = math.acos(arg) / 3.0
        ts_ = [2.0 * m * math.cos(theta - 2.0 * math.pi * j / 3.0) for j in range(3)]
        return np.array([t + s for t in ts_], dtype=complex)
    sd = math.sqrt(disc)
    big_a = np.cbrt(-q / 2.0 + sd)
    big_b = np.cbrt(-q / 2.0 - sd)
    t_real = float(big_a + big_b)
    # remaining quadratic factor t^2 + t_real t + (p + t_real^2)
    c = p + t_real * t_real
    im = math.sqrt(max(c - 0.25 * t_real * t_real, 0.0))
    return np.array([t_real + s,
                     complex(-0.5 * t_real + s, im),
                     complex(-0.5 * t_real + s, -im)])


def eigenvalues_3x3(a: np.ndarray, eigenvectors: bool = False):
    """Eigenvalues of a real 3x3 matrix via its characteristic cubic.

    One Newton step on the characteristic polynomial polishes each root
    (closed forms degrade near repeated roots). With eigenvectors=True also
    returns unit eigenvectors built from adjugate row cross-products.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (3, 3) or not np.all(np.isfinite(a)):
        raise ParameterError("expected a finite 3x3 matrix")
    tr, m2, det = _char_coeffs(a)
    roots = _cubic_roots(tr, m2, det)
    for i, lam in enumerate(roots):
        val = ((lam - tr) * lam + m2) * lam - det
        der = (3.0 * lam - 2.0 * tr) * lam + m2
        if abs(der) > 1e3 * abs(val):
            roots[i] = lam - val / der
    if not eigenvectors:
        return roots
    vecs = np.empty((3, 3), dtype=complex)
    for i, lam in enumerate(roots):
        m = a.astype(complex) - lam * np.eye(3)
        crosses = [np.cross(m[r0], m[r1]) for r0, r1 in ((0, 1), (0, 2), (1, 2))]
        v = max(crosses, key=lambda w: float(np.abs(w) @ np.abs(w)))
        norm = math.sqrt(float(np.abs(v) @ np.abs(v)))
        if norm == 0.0:  # defective or scaled-identity direction; any unit vector works
            v = np.array([1.0, 0.0, 0.0], dtype=complex); norm = 1.0
        vecs[:, i] = v / norm
    return roots, vecs


def spectral_radius_3x3(a: np.ndarray) -> float:
    """Largest eigenvalue modulus of a real 3x3 matrix."""
    return float(np.max(np.abs(eigenvalues_3x3(a))))


def is_stable_step(a: np.ndarray, margin: float = 0.0) -> bool:
    """True iff every eigenvalue modulus is strictly below 1 - margin.

    Zero eigenvalues count as stable (deadbeat response, not divergence).
    """
    if margin < 0.0:
        raise ParameterError("stability margin must be nonnegative")
    return spectral_radius_3x3(a) < 1.0 - margin


def _radius_batch(th_k: np.ndarray, th_kn: np.ndarray, nu_kn: np.ndarray,
                  ts: float, g: Gains) -> np.ndarray:
    """Per-step spectral radius along arrays of evaluation points."""
    ck = np.cos(th_k); sk = np.sin(th_k)
    ckn = np.cos(th_kn); skn = np.sin(th_kn)
    a11 = 1.0 - ts * g.k_x * ck * ckn
    a12 = -ts * g.k_x * ck * skn
    a13 = -ts * sk * nu_kn
    a21 = -ts * g.k_x * sk * ckn
    a22 = 1.0 - ts * g.k_x * sk * skn
    a23 = ts * ck * nu_kn
    a31 = ts * g.k_y * skn * nu_kn
    a32 = -ts * g.k_y * ckn * nu_kn
    a33 = 1.0 - ts * g.k_theta * nu_kn

    tr = a11 + a22 + a33
    m2 = ((a22 * a33 - a23 * a32) + (a11 * a33 - a13 * a31)
          + (a11 * a22 - a12 * a21))
    det = (a11 * (a22 * a33 - a23 * a32) - a12 * (a21 * a33 - a23 * a31)
           + a13 * (a21 * a32 - a22 * a31))

    s = tr / 3.0
    p = m2 - tr * tr / 3.0
    q = m2 * s - det - 2.0 * s**3
    disc = 0.25 * q * q + p**3 / 27.0
    radius = np.empty_like(tr)

    three = disc <= 0.0
    if np.any(three):
        pp = p[three]; qq = q[three]; ss = s[three]
        safe_p = np.minimum(pp, -1e-300)
        m = np.sqrt(-safe_p / 3.0)
        arg = np.clip(3.0 * qq / (2.0 * safe_p * m), -1.0, 1.0)
        theta = np.arccos(arg) / 3.0
        worst = np.abs(2.0 * m * np.cos(theta) + ss)
        for shift in (2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0):
            worst = np.maximum(worst, np.abs(2.0 * m * np.cos(theta - shift) + ss))
        radius[three] = worst
    one = ~three
    if np.any(one):
        pp = p[one]; qq = q[one]; ss = s[one]
        sd = np.sqrt(disc[one])
        t_real = np.cbrt(-qq / 2.0 + sd) + np.cbrt(-qq / 2.0 - sd)
        pair_sq = (pp + t_real * t_real) - ss * t_real + ss * ss
        radius[one] = np.maximum(np.abs(t_real + ss),
                                 np.sqrt(np.maximum(pair_sq, 0.0)))
    return radius


@dataclass(frozen=True)
class CandidateScan:
    """One evaluated lag candidate during the tolerance search."""

    n: int
    stable: bool
    worst_spectral_radius: float
    argmax_k: int


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of the outage-tolerance search."""

    n_max: int
    per_step_spectral_radius: np.ndarray
    first_violation_step: int | None
    ts: float
    trace_time: float
    margin: float = 0.0
    scan_start_step: int = 0
    capped: bool = False
    history: tuple[CandidateScan, ...] = field(default_factory=tuple)


def _scan_candidate(track: ReferenceTrack, g: Gains, n: int, margin: float,
                    keep_radii: bool = False):
    """Scan all steps for lag candidate n.

    Returns (stable, worst_radius, argmax_k, radii-or-None). Unstable scans
    stop at the first violating chunk; worst/argmax then cover the scanned
    prefix only.
    """
    n_k = track.n_steps
    ts = track.ts
    limit = 1.0 - margin
    th = track.thetas
    nu = track.nus
    worst = -1.0
    argmax = n
    radii = np.empty(n_k - n) if keep_radii else None
    for lo in range(n, n_k, _CHUNK):
        hi = min(lo + _CHUNK, n_k)
        r = _radius_batch(th[lo:hi], th[lo - n:hi - n], nu[lo - n:hi - n], ts, g)
        if radii is not None:
            radii[lo - n:hi - n] = r
        i = int(np.argmax(r))
        if r[i] > worst:
            worst = float(r[i]); argmax = lo + i
        if worst >= limit and radii is None:
            viol = np.nonzero(r >= limit)[0]
            return False, worst, lo + int(viol[0]), None
    return worst < limit, worst, argmax, radii


def evaluate_candidate(track: ReferenceTrack, g: Gains, n: int,
                       margin: float = 0.0) -> CandidateScan:
    """Per-step eigenvalue classification of one specific lag candidate."""
    if margin < 0.0:
        raise ParameterError("stability margin must be nonnegative")
    if not 0 <= n <= track.n_steps - 1:
        raise ParameterError(
            f"candidate lag must lie in [0, {track.n_steps - 1}], got {n}")
    stable, worst, argmax, _ = _scan_candidate(track, g, n, margin)
    return CandidateScan(n, stable, worst, argmax)


def outage_tolerance(track: ReferenceTrack, g: Gains,
                     margin: float = 0.0) -> StabilityReport:
    """Largest lag n whose per-step linearization stays stable at every step.

    Exponential ramp then bisection; the returned n_max is re-verified stable
    and n_max + 1 re-verified unstable by full scans. Candidates are capped at
    n_steps - 1 (beyond that no evaluation step exists); hitting the cap is
    flagged since the failure side cannot then be verified.
    """
    if margin < 0.0:
        raise ParameterError("stability margin must be nonnegative")
    if track.n_steps < 1:
        raise ParameterError("track must contain at least one step")
    history: list[CandidateScan] = []

    def scan(n: int, keep: bool = False):
        stable, worst, argmax, radii = _scan_candidate(track, g, n, margin, keep)
        history.append(CandidateScan(n, stable, worst, argmax))
        return stable, worst, argmax, radii

    cap = track.n_steps - 1
    stable0, worst0, argmax0, radii0 = scan(0, keep=True)
    if not stable0:
        return StabilityReport(n_max=0, per_step_spectral_radius=radii0,
                               first_violation_step=argmax0, ts=track.ts,
                               trace_time=track.trace_time, margin=margin,
                               scan_start_step=0, history=tuple(history))
    if cap == 0:
        return StabilityReport(n_max=0, per_step_spectral_radius=radii0,
                               first_violation_step=None, ts=track.ts,
                               trace_time=track.trace_time, margin=margin,
                               scan_start_step=0, capped=True,
                               history=tuple(history))

    lo, hi = 0, None
    n = 1
    while True:
        if n >= cap:
            stable, *_ = scan(cap)
            if stable:
                _, _, _, radii = _scan_candidate(track, g, cap, margin, True)
                return StabilityReport(n_max=cap, per_step_spectral_radius=radii,
                                       first_violation_step=None, ts=track.ts,
                                       trace_time=track.trace_time, margin=margin,
                                       scan_start_step=cap, capped=True,
                                       history=tuple(history))
            hi = cap
            break
        stable, *_ = scan(n)
        if stable:
            lo = n
            n *= 2
        else:
            hi = n
            break
    while hi - lo > 1:
        mid = (lo + hi) // 2
        stable, *_ = scan(mid)
        if stable:
            lo = mid
        else:
            hi = mid

    # re-verify both sides of the boundary with full scans
    stable, _, _, radii = _scan_candidate(track, g, lo, margin, keep_radii=True)
    if not stable:
        raise NumericConsistencyError(f"candidate {lo} failed re-verification")
    restable, _, reargmax, _ = _scan_candidate(track, g, lo + 1, margin)
    if restable:
        raise NumericConsistencyError(f"candidate {lo + 1} passed re-verification")
    history.append(CandidateScan(lo + 1, False, math.nan, reargmax))
    return StabilityReport(n_max=lo, per_step_spectral_radius=radii,
                           first_violation_step=None, ts=track.ts,
                           trace_time=track.trace_time, margin=margin,
                           scan_start_step=lo, history=tuple(history))


def simulate_burst_stability(track: ReferenceTrack, g: Gains, n: int,
                             divergence_threshold: float | None = None) -> bool:
    """Nonlinear check: survive forced bursts of n consecutive losses.

    The loop settles for eight slow-mode time constants, then suffers bursts
    of exactly n outages spaced by a recovery window (9n samples, capped at
    twelve time constants plus a safety pad to bound runtime on huge n).
    Stable means the position error never exceeds divergence_threshold and
    drops back to max(1.5x the pre-burst level, 1e-4 m) inside each window.
    """
    if n < 0:
        raise ParameterError("burst length must be nonnegative")
    if divergence_threshold is None:
        divergence_threshold = 0.2 * max(track.spec.semi_axis_a, track.spec.axis_b)
    ts = track.ts
    tau = 2.0 / (g.k_theta * track.max_speed)
    settle = int(math.ceil(8.0 * tau / ts)) + 10
    if n == 0:
        sched = np.zeros(settle + int(math.ceil(4.0 * tau / ts)), dtype=bool)
        err = simulate_closed_loop(track, g, sched).position_error()
        return bool(np.max(err) < divergence_threshold
                    and err[-1] < max(1.5 * float(np.min(err[settle:])), 1e-4))

    recovery = min(9 * n, int(math.ceil(12.0 * tau / ts)) + 2000)
    bursts = 2 if settle + 2 * (n + recovery) <= 600_000 else 1
    total = settle + bursts * (n + recovery)
    sched = np.zeros(total, dtype=bool)
    for b in range(bursts):
        start = settle + b * (n + recovery)
        sched[start:start + n] = True
    err = simulate_closed_loop(track, g, sched).position_error()

    if float(np.max(err)) >= divergence_threshold:
        return False
    window = min(settle, int(math.ceil(tau / ts)) + 10)
    pre_level = float(np.max(err[settle - window:settle]))
    tolerance = max(1.5 * pre_level, 1e-4)
    for b in range(bursts):
        lo = settle + b * (n + recovery) + n
        if float(np.min(err[lo:lo + recovery])) > tolerance:
            return False
    return True


STABILITY_COLUMNS = ["n_candidate", "stable_flag", "worst_spectral_radius",
                     "argmax_k"]


def write_stability_csv(report: StabilityReport, path) -> None:
    """Write the tolerance-search history to CSV (one row per candidate)."""
    with csv_sink(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STABILITY_COLUMNS)
        for rec in report.history:
            writer.writerow([rec.n, int(rec.stable),
                             repr(rec.worst_spectral_radius), rec.argmax_k])
