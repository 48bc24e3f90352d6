"""Synthetic joint-trajectory generators.

Stand-ins for recorded robot datasets: repetitive, cross-correlated joint
motion sampled at a fixed command period. Joint values are rounded to the
6-decimal CSV resolution at generation time so files round-trip exactly.
"""

from __future__ import annotations

import numpy as np

from .core import JointUnit, Trace
from .errors import ConfigError

PROFILES = ("pick-and-place", "sine-mix", "constant")


def _smoothstep(u: np.ndarray) -> np.ndarray:
    return u * u * (3.0 - 2.0 * u)


def _pick_and_place(n: int, dim: int, period_ms: float, rng: np.random.Generator) -> np.ndarray:
    """Cyclic waypoint-to-waypoint motion with brief holds at each waypoint.

    All joints follow the same waypoint schedule with joint-specific scaling,
    which yields the strong cross-joint correlation of a real arm moving
    between grasp poses.
    """
    n_way = 6
    base = rng.uniform(-1.0, 1.0, size=n_way)
    amp = rng.uniform(0.5, 1.2, size=dim) * rng.choice([-1.0, 1.0], size=dim)
    waypoints = np.outer(base, amp) + 0.15 * rng.normal(size=(n_way, dim))

    move_ms = rng.uniform(400.0, 900.0, size=n_way)
    hold_ms = rng.uniform(80.0, 250.0, size=n_way)
    seg_ms = move_ms + hold_ms
    cycle_ms = float(seg_ms.sum())
    seg_end = np.cumsum(seg_ms)
    seg_start = seg_end - seg_ms

    t = (np.arange(n) * period_ms) % cycle_ms
    seg = np.searchsorted(seg_end, t, side="right")
    seg = np.clip(seg, 0, n_way - 1)
    into = t - seg_start[seg]
    u = np.clip(into / move_ms[seg], 0.0, 1.0)  # 1.0 during the hold part
    blend = _smoothstep(u)[:, None]
    start_pose = waypoints[seg - 1]  # seg 0 starts from the last waypoint
    end_pose = waypoints[seg]
    return start_pose + blend * (end_pose - start_pose)


def _sine_mix(n: int, dim: int, period_ms: float, rng: np.random.Generator) -> np.ndarray:
    """Sum of a few shared-frequency sinusoids with joint-specific mix weights."""
    freqs_hz = np.array([0.2, 0.45, 0.8])
    t_s = np.arange(n) * (period_ms / 1000.0)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(freqs_hz))
    weights = rng.uniform(0.2, 1.0, size=(dim, len(freqs_hz)))
    weights *= rng.choice([-1.0, 1.0], size=weights.shape)
    waves = np.sin(2.0 * np.pi * np.outer(t_s, freqs_hz) + phases)
    return waves @ weights.T


def synthetic_trace(
    profile: str,
    duration_s: float,
    seed: int,
    period_ms: float = 20.0,
    dim: int = 6,
    noise: float = 1e-3,
    unit: JointUnit = JointUnit.RADIANS,
) -> Trace:
    """Generate a deterministic synthetic trace of the given profile.

    Profiles: pick-and-place (cyclic waypoint motion), sine-mix (correlated
    sinusoids), constant (identical rows, noise-free).
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose one of {PROFILES}")
    if duration_s <= 0:
        raise ConfigError("duration must be positive")
    n = round(duration_s * 1000.0 / period_ms)
    if n < 1:
        raise ConfigError("duration shorter than one command period")
    rng = np.random.default_rng(seed)

    if profile == "constant":
        pose = np.round(rng.uniform(-1.0, 1.0, size=dim), 6)
        joints = np.tile(pose, (n, 1))
        return Trace.from_joints(joints, period_ms, unit=unit)

    if profile == "pick-and-place":
        joints = _pick_and_place(n, dim, period_ms, rng)
    else:
        joints = _sine_mix(n, dim, period_ms, rng)
    if noise > 0:
        joints = joints + rng.normal(0.0, noise, size=joints.shape)
    return Trace.from_joints(np.round(joints, 6), period_ms, unit=unit)
