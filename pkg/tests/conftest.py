"""Shared fixtures and reporting helpers for the test suite."""

import math

import pytest

from agvlink import Gains, TrackSpec, build_reference_track


@pytest.fixture(scope="session")
def gains():
    return Gains()


@pytest.fixture(scope="session")
def small_track():
    """Default geometry at nominal speed, coarser slots (100k steps).

    5 ms slots keep the forward-Euler standing error ~2e-4 m, comfortably
    inside the 1e-3 m tracking bound the tight-tracking tests assert.
    """
    return build_reference_track(TrackSpec(), trace_time=500.0, ts=5e-3)


@pytest.fixture(scope="session")
def tiny_track():
    """Small, moderately-paced track for API-contract tests (4000 steps)."""
    return build_reference_track(TrackSpec(semi_axis_a=10.0), trace_time=20.0,
                                 ts=5e-3)


def report_criterion(number: int, label: str, ok: bool, detail: str) -> None:
    """One pass/fail line per acceptance criterion, then the assertion."""
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance criterion {number:02d}] {label}: {status} ({detail})")
    assert ok, f"criterion {number} ({label}) failed: {detail}"


def close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol


def rel_close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


def within_pct(value: float, anchor: float, pct: float) -> bool:
    return abs(value - anchor) <= pct * abs(anchor)


def wrap_to_pi(angle: float) -> float:
    return math.remainder(angle, 2.0 * math.pi)
