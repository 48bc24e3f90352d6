"""Contention-based wireless link model: retransmission statistics and a
single-server queue with hyperexponential service.

A frame needs a random number of transmission attempts; each unsuccessful
attempt adds collision time plus a growing backoff window. Frames that fail
every allowed attempt are lost. The access point is modeled as a FIFO queue
with one server whose service time, conditional on j failed attempts, is
exponential with the closed-form mean delay for that attempt count.
"""

from __future__ import annotations

import csv
import enum
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Trace, ms_to_us
from .errors import AlwaysLost, ConfigError, OutOfRange


@dataclass(frozen=True)
class MacParams:
    """Medium-access timing: transmission/collision times, slot time, backoff
    windows, and the total attempt budget per frame (first try included)."""

    t_s_ms: float = 0.3
    t_col_ms: float = 0.35
    slot_ms: float = 0.009
    w0: int = 16
    max_window_exp: int = 6
    max_rtx: int = 7

    def __post_init__(self):
        if min(self.t_s_ms, self.t_col_ms, self.slot_ms) <= 0:
            raise ConfigError("all MAC times must be positive")
        if self.w0 < 2:
            raise ConfigError(f"initial backoff window must be >= 2, got {self.w0}")
        if self.max_window_exp < 0:
            raise ConfigError("backoff cap exponent must be >= 0")
        if self.max_rtx < 1:
            raise ConfigError(f"attempt budget must be >= 1, got {self.max_rtx}")

    def window(self, k: int) -> int:
        """Backoff window before attempt k, doubling up to the cap."""
        return min(2 ** k, 2 ** self.max_window_exp) * self.w0


@dataclass(frozen=True)
class InterferenceParams:
    """External interferer activity plus contention from neighbor stations.

    attempt_prob is the fixed per-slot transmission probability assumed for
    each contending neighbor when deriving the collision probability.
    """

    p_if: float = 0.0
    t_if_slots: float = 0.0
    n_stations: int = 1
    attempt_prob: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.p_if <= 1.0:
            raise ConfigError(f"p_if must lie in [0, 1], got {self.p_if}")
        if self.t_if_slots < 0:
            raise ConfigError("interferer duration must be >= 0 slots")
        if self.n_stations < 1:
            raise ConfigError("station count must be >= 1")
        if not 0.0 <= self.attempt_prob < 1.0:
            raise ConfigError("per-slot attempt probability must lie in [0, 1)")


@dataclass(frozen=True)
class ChannelConfig:
    mac: MacParams = MacParams()
    interference: InterferenceParams = InterferenceParams()
    queue_cap: int = 50
    period_ms: float = 20.0
    transport_bound_ms: float = 0.0
    seed: int = 0
    # Explicit per-attempt-count probability vector (len max_rtx + 1, loss
    # mass last); overrides the parametric model when set.
    rtx_probs: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.queue_cap < 1:
            raise ConfigError(f"queue capacity must be >= 1, got {self.queue_cap}")
        if self.period_ms <= 0:
            raise ConfigError("command period must be positive")
        if self.transport_bound_ms < 0:
            raise ConfigError("transport delay bound must be >= 0")
        if self.rtx_probs is not None:
            probs = tuple(float(p) for p in self.rtx_probs)
            object.__setattr__(self, "rtx_probs", probs)
            if len(probs) != self.mac.max_rtx + 1:
                raise ConfigError(
                    f"explicit probability vector needs {self.mac.max_rtx + 1} entries, "
                    f"got {len(probs)}"
                )
            if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
                raise ConfigError("explicit probability vector must be a distribution")


class LossCause(enum.Enum):
    RTX_EXCEEDED = "rtx-exceeded"
    QUEUE_OVERFLOW = "queue-overflow"


@dataclass(frozen=True)
class ChannelOutcome:
    """Per-command result: a delivery with its delay breakdown, or a loss."""

    seq: int
    delivered: bool
    delay_ms: float | None = None
    rtx: int | None = None
    waited_ms: float | None = None
    cause: LossCause | None = None

    @classmethod
    def delivery(cls, seq: int, delay_ms: float, rtx: int, waited_ms: float) -> "ChannelOutcome":
        return cls(seq, True, delay_ms, rtx, waited_ms, None)

    @classmethod
    def loss(cls, seq: int, cause: LossCause) -> "ChannelOutcome":
        return cls(seq, False, cause=cause)


def attempt_failure_prob(cfg: ChannelConfig) -> float:
    """Per-attempt transmission failure probability.

    Combines neighbor collisions (each of the other n-1 stations transmits in
    a slot with the configured attempt probability) with interferer hits (its
    emission probability scaled by the fraction of time a transmission overlaps
    the active window).
    """
    inter = cfg.interference
    p_col = 1.0 - (1.0 - inter.attempt_prob) ** (inter.n_stations - 1)
    tx_slots = cfg.mac.t_s_ms / cfg.mac.slot_ms
    if inter.t_if_slots > 0:
        duty = inter.t_if_slots / (inter.t_if_slots + tx_slots)
    else:
        duty = 0.0
    p_int = inter.p_if * min(1.0, duty)
    return 1.0 - (1.0 - p_col) * (1.0 - p_int)


def rtx_distribution(p: float, max_rtx: int) -> np.ndarray:
    """Probabilities of j = 0..max_rtx-1 failed attempts before a success,
    with the residual mass (all attempts failed, the frame is lost) last.

    The last entry is computed as one minus the rest so the vector sums to 1
    exactly in floating point.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"per-attempt failure probability must lie in [0, 1), got {p}")
    probs = np.empty(max_rtx + 1)
    probs[:max_rtx] = p ** np.arange(max_rtx) * (1.0 - p)
    probs[max_rtx] = 1.0 - probs[:max_rtx].sum()
    # nudge the remainder until the sum over the full vector lands on 1.0
    # exactly (an ulp of rounding can survive a single correction)
    for _ in range(4):
        err = probs.sum() - 1.0
        if err == 0.0:
            break
        probs[max_rtx] -= err
    return probs


def channel_rtx_probs(cfg: ChannelConfig) -> np.ndarray:
    """The attempt-count distribution in force: explicit override or derived."""
    if cfg.rtx_probs is not None:
        return np.array(cfg.rtx_probs, dtype=float)
    return rtx_distribution(attempt_failure_prob(cfg), cfg.mac.max_rtx)


def mean_delay_given_rtx(j: int, mac: MacParams) -> float:
    """Mean wireless delay of a frame delivered after exactly j failed attempts:
    one transmission, j collisions, and j+1 backoff stages at half window each."""
    if not 0 <= j <= mac.max_rtx - 1:
        raise OutOfRange(f"attempt count {j} outside [0, {mac.max_rtx - 1}]")
    backoff = sum((mac.window(k) - 1) / 2.0 for k in range(j + 1))
    return mac.t_s_ms + j * mac.t_col_ms + mac.slot_ms * backoff


def lost_frame_airtime(mac: MacParams) -> float:
    """Server time consumed by a frame that fails all attempts before being
    dropped: every attempt collides and every backoff stage is paid."""
    backoff = sum((mac.window(k) - 1) / 2.0 for k in range(mac.max_rtx))
    return mac.max_rtx * mac.t_col_ms + mac.slot_ms * backoff


def expected_delay_bound(cfg: ChannelConfig) -> tuple[float, float]:
    """Mean-delay bound for delivered commands and the probability it applies.

    Returns (transport bound + mixture mean of per-attempt-count delays
    conditioned on delivery, probability of delivery). Lost frames have
    unbounded delay, which happens with the complementary probability.
    """
    probs = channel_rtx_probs(cfg)
    loss = float(probs[-1])
    if loss >= 1.0:
        raise AlwaysLost("every frame is lost; no delivered-delay bound exists")
    mixture = sum(
        float(probs[j]) * mean_delay_given_rtx(j, cfg.mac) for j in range(cfg.mac.max_rtx)
    )
    return cfg.transport_bound_ms + mixture / (1.0 - loss), 1.0 - loss


def simulate_channel(trace: Trace, cfg: ChannelConfig) -> list[ChannelOutcome]:
    """Push a command trace through the access-point queue.

    Arrivals follow the trace schedule; the waiting room holds queue_cap
    frames (an arrival finding it full is dropped). Each frame entering
    service draws an attempt count: a deliverable count takes an exponential
    service time with the matching mean, while a frame exhausting its attempts
    holds the server for the full failed-attempt airtime and is then dropped.
    Delivered delay = wait + service + a uniform (0, D] transport delay.
    Runs are reproducible from the config seed.
    """
    if trace.period_us != ms_to_us(cfg.period_ms):
        raise ConfigError(
            f"trace period {trace.period_ms} ms does not match channel period {cfg.period_ms} ms"
        )
    probs = channel_rtx_probs(cfg)
    max_rtx = cfg.mac.max_rtx
    branch_means = np.array([mean_delay_given_rtx(j, cfg.mac) for j in range(max_rtx)])
    t_loss = lost_frame_airtime(cfg.mac)

    rng = np.random.default_rng(cfg.seed)
    n = len(trace)
    branches = rng.choice(max_rtx + 1, size=n, p=probs)
    service_std = rng.exponential(1.0, size=n)
    if cfg.transport_bound_ms > 0:
        transport = cfg.transport_bound_ms * (1.0 - rng.random(n))
    else:
        transport = np.zeros(n)

    outcomes: list[ChannelOutcome] = []
    pending_starts: deque[float] = deque()
    last_departure = -np.inf
    for i, cmd in enumerate(trace.samples):
        t = cmd.gen_time_us / 1000.0
        while pending_starts and pending_starts[0] <= t:
            pending_starts.popleft()
        if len(pending_starts) >= cfg.queue_cap:
            outcomes.append(ChannelOutcome.loss(cmd.seq, LossCause.QUEUE_OVERFLOW))
            continue
        start = t if last_departure <= t else last_departure
        j = int(branches[i])
        if j == max_rtx:
            duration = t_loss
            outcomes.append(ChannelOutcome.loss(cmd.seq, LossCause.RTX_EXCEEDED))
        else:
            duration = service_std[i] * branch_means[j]
            delay = (start - t) + duration + transport[i]
            outcomes.append(ChannelOutcome.delivery(cmd.seq, delay, j, start - t))
        last_departure = start + duration
        pending_starts.append(start)
    return outcomes


def verify_causality_prob(cfg: ChannelConfig, n_samples: int) -> tuple[float, float]:
    """Probability that two consecutive commands draw the same attempt count
    and both get delivered: closed form (sum of squared branch weights over
    the deliverable counts) next to a Monte-Carlo estimate over independent
    command pairs."""
    if n_samples < 10_000:
        raise ConfigError("need at least 1e4 samples for a meaningful estimate")
    probs = channel_rtx_probs(cfg)
    analytic = float(np.sum(probs[:-1] ** 2))
    rng = np.random.default_rng(cfg.seed)
    draws = rng.choice(len(probs), size=2 * n_samples, p=probs)
    first, second = draws[0::2], draws[1::2]
    hit = (first == second) & (first < cfg.mac.max_rtx)
    return analytic, float(np.mean(hit))


def verify_unbounded_delay(
    cfg: ChannelConfig, k_ms: float, n_samples: int
) -> tuple[float, float]:
    """Loss probability (closed form) next to the observed fraction of
    commands whose delay exceeds k_ms in a queue run of n_samples commands.

    Lost commands count as exceeding any threshold; delivered delays are
    finite, so for thresholds beyond their range the observed fraction
    converges on the loss probability (plus queue overflow when the waiting
    room is small).
    """
    if n_samples < 10_000:
        raise ConfigError("need at least 1e4 samples for a meaningful estimate")
    probs = channel_rtx_probs(cfg)
    analytic_loss = float(probs[-1])
    period = cfg.period_ms
    trace = Trace.from_joints(np.zeros((n_samples, 1)), period_ms=period)
    outcomes = simulate_channel(trace, cfg)
    exceed = sum(
        1 for o in outcomes if (not o.delivered) or (o.delay_ms is not None and o.delay_ms > k_ms)
    )
    return analytic_loss, exceed / n_samples


# ---------------------------------------------------------------------------
# File formats

def channel_config_to_dict(cfg: ChannelConfig) -> dict:
    doc = {
        "mac": {
            "t_s_ms": cfg.mac.t_s_ms,
            "t_col_ms": cfg.mac.t_col_ms,
            "slot_ms": cfg.mac.slot_ms,
            "w0": cfg.mac.w0,
            "max_window_exp": cfg.mac.max_window_exp,
            "max_rtx": cfg.mac.max_rtx,
        },
        "interference": {
            "p_if": cfg.interference.p_if,
            "t_if_slots": cfg.interference.t_if_slots,
            "n_stations": cfg.interference.n_stations,
            "attempt_prob": cfg.interference.attempt_prob,
        },
        "queue_cap": cfg.queue_cap,
        "period_ms": cfg.period_ms,
        "transport_bound_ms": cfg.transport_bound_ms,
        "seed": cfg.seed,
    }
    if cfg.rtx_probs is not None:
        doc["a_j"] = list(cfg.rtx_probs)
    return doc


def channel_config_from_dict(doc: dict) -> ChannelConfig:
    mac = MacParams(**doc.get("mac", {}))
    interference = InterferenceParams(**doc.get("interference", {}))
    rtx_probs = doc.get("a_j")
    return ChannelConfig(
        mac=mac,
        interference=interference,
        queue_cap=doc.get("queue_cap", 50),
        period_ms=doc.get("period_ms", 20.0),
        transport_bound_ms=doc.get("transport_bound_ms", 0.0),
        seed=doc.get("seed", 0),
        rtx_probs=None if rtx_probs is None else tuple(rtx_probs),
    )


def load_channel_config(path: str | Path) -> ChannelConfig:
    return channel_config_from_dict(json.loads(Path(path).read_text()))


def save_channel_config(cfg: ChannelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(channel_config_to_dict(cfg), indent=2) + "\n")


def write_outcomes_csv(outcomes: list[ChannelOutcome], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq", "status", "delay_ms", "rtx", "cause"])
        for o in outcomes:
            if o.delivered:
                writer.writerow([o.seq, "delivered", repr(o.delay_ms), o.rtx, ""])
            else:
                writer.writerow([o.seq, "lost", "", "", o.cause.value])
