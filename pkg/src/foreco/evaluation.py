"""Trajectory-error metrics, the interference sweep, and forecast-window study.

The sweep crosses interferer probability, interferer duration, and station
count; every cell runs the channel simulation a fixed number of times and
feeds the identical outcome list to each recovery policy, so policies are
compared on exactly the same losses.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ChannelConfig, ChannelOutcome, LossCause, simulate_channel
from .core import Trace
from .errors import ConfigError
from .forecasting import MaModel, VarModel, fit_var_ols
from .recovery import ExecutedStream, RecoveryPolicy, run_recovery

CellKey = tuple[int, float, float]  # (robot count, interferer prob, duration slots)


# ---------------------------------------------------------------------------
# Error metric

def _stream_matrix(stream) -> np.ndarray:
    if isinstance(stream, Trace):
        return stream.joints_matrix()
    if isinstance(stream, ExecutedStream):
        rows = []
        last = None
        for c in stream.commands:
            if c is not None:
                last = c.joints
            rows.append(last)
        if last is None:
            raise ConfigError("stream has no executed commands")
        first = next(r for r in rows if r is not None)
        rows = [first if r is None else r for r in rows]  # leading gaps hold the first pose
        return np.array(rows, dtype=float)
    raise ConfigError(f"cannot compute an error metric over {type(stream).__name__}")


def rmse(executed, reference) -> float:
    """Root mean squared joint-space error between two command streams.

    Per slot the error is the squared euclidean distance across joints; the
    mean runs over all slots. Empty slots (drop mode) are held at the last
    executed command. Symmetric in its arguments.
    """
    a = _stream_matrix(executed)
    b = _stream_matrix(reference)
    if a.shape != b.shape:
        raise ConfigError(f"stream shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


# ---------------------------------------------------------------------------
# Controlled-loss experiments

def controlled_loss_outcomes(
    trace: Trace,
    burst_len: int,
    n_bursts: int,
    seed: int,
    min_start: int = 0,
    min_gap: int = 20,
) -> list[ChannelOutcome]:
    """Outcome list with every command on time except seeded bursts of
    consecutive losses, mimicking a controller that drops runs of commands.

    Bursts start at or after min_start, are placed uniformly at random, and
    keep at least min_gap delivered slots between them so each loss event is
    entered with a record refilled by real commands.
    """
    n = len(trace)
    if burst_len < 1 or n_bursts < 1:
        raise ConfigError("burst length and count must be >= 1")
    if min_start + n_bursts * (burst_len + min_gap) > n:
        raise ConfigError("trace too short for the requested bursts")
    rng = np.random.default_rng(seed)
    starts: list[int] = []
    attempts = 0
    spacing = burst_len + min_gap
    while len(starts) < n_bursts:
        attempts += 1
        if attempts > 10_000:
            raise ConfigError("could not place non-overlapping bursts; reduce count or length")
        s = int(rng.integers(min_start, n - burst_len + 1))
        if all(s + spacing <= t or t + spacing <= s for t in starts):
            starts.append(s)
    lost = np.zeros(n, dtype=bool)
    for s in starts:
        lost[s : s + burst_len] = True
    return [
        ChannelOutcome.loss(cmd.seq, LossCause.RTX_EXCEEDED)
        if lost[i]
        else ChannelOutcome.delivery(cmd.seq, 0.0, 0, 0.0)
        for i, cmd in enumerate(trace.samples)
    ]


# ---------------------------------------------------------------------------
# Interference sweep

@dataclass(frozen=True)
class SweepGrid:
    probs: tuple[float, ...]
    durations: tuple[float, ...]
    robot_counts: tuple[int, ...]
    repetitions: int = 40
    master_seed: int = 0

    def __post_init__(self):
        for name in ("probs", "durations", "robot_counts"):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
            if not getattr(self, name):
                raise ConfigError(f"sweep axis {name} is empty")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")

    def cells(self) -> list[CellKey]:
        return [
            (r, p, d)
            for r in self.robot_counts
            for p in self.probs
            for d in self.durations
        ]


def default_grid(repetitions: int = 40, master_seed: int = 0) -> SweepGrid:
    return SweepGrid(
        probs=tuple(round(0.1 * i, 1) for i in range(10)),
        durations=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
        robot_counts=(5, 15, 25),
        repetitions=repetitions,
        master_seed=master_seed,
    )


@dataclass
class SweepResult:
    grid: SweepGrid
    policies: tuple[str, ...]
    cells: dict[CellKey, dict[str, list[float]]]

    def mean(self, key: CellKey, policy: str) -> float:
        return float(np.mean(self.cells[key][policy]))

    def worst_cell_ratio(self, numerator: str, denominator: str, min_denominator: float = 0.0) -> float:
        """Largest per-cell mean-error ratio.

        Cells where the denominator policy's mean error is at or below
        min_denominator are skipped: with no material losses both policies
        sit at the noise floor and their quotient is a 0/0 artifact.
        """
        worst = 0.0
        for key in self.cells:
            den = self.mean(key, denominator)
            if den > min_denominator:
                worst = max(worst, self.mean(key, numerator) / den)
        return worst

    def peak_ratio(self, numerator: str, denominator: str) -> float:
        """Ratio of the two policies' worst cells (each policy's own maximum
        mean error), the headline figure for heatmap comparisons."""
        peak_num = max(self.mean(key, numerator) for key in self.cells)
        peak_den = max(self.mean(key, denominator) for key in self.cells)
        if peak_den == 0:
            raise ConfigError("denominator policy has zero error everywhere")
        return peak_num / peak_den

    def to_dict(self) -> dict:
        return {
            "probs": list(self.grid.probs),
            "durations": list(self.grid.durations),
            "robot_counts": list(self.grid.robot_counts),
            "repetitions": self.grid.repetitions,
            "master_seed": self.grid.master_seed,
            "policies": list(self.policies),
            "cells": [
                {
                    "robots": key[0],
                    "prob": key[1],
                    "duration": key[2],
                    "rmse": {
                        policy: {"mean": float(np.mean(vals)), "values": vals}
                        for policy, vals in self.cells[key].items()
                    },
                }
                for key in self.grid.cells()
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepResult":
        grid = SweepGrid(
            probs=tuple(doc["probs"]),
            durations=tuple(doc["durations"]),
            robot_counts=tuple(doc["robot_counts"]),
            repetitions=doc["repetitions"],
            master_seed=doc["master_seed"],
        )
        cells = {
            (cell["robots"], cell["prob"], cell["duration"]): {
                policy: list(entry["values"]) for policy, entry in cell["rmse"].items()
            }
            for cell in doc["cells"]
        }
        return cls(grid, tuple(doc["policies"]), cells)

    def write_matrices(self, out_dir: str | Path) -> list[Path]:
        """One CSV per (policy, robot count): mean error with interferer
        probabilities as rows and durations as columns."""
        out_dir = Path(out_dir)
        written = []
        for policy in self.policies:
            for robots in self.grid.robot_counts:
                path = out_dir / f"rmse_{policy}_{robots}.csv"
                with path.open("w", newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["prob"] + [str(d) for d in self.grid.durations])
                    for p in self.grid.probs:
                        row = [str(p)] + [
                            repr(self.mean((robots, p, d), policy)) for d in self.grid.durations
                        ]
                        writer.writerow(row)
                written.append(path)
        return written


def _task_seed(master_seed: int, cell_index: int, rep: int) -> int:
    seq = np.random.SeedSequence([master_seed, cell_index, rep])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _cell_config(template: ChannelConfig, key: CellKey, seed: int) -> ChannelConfig:
    robots, prob, duration = key
    interference = replace(
        template.interference, p_if=prob, t_if_slots=duration, n_stations=robots
    )
    return replace(template, interference=interference, seed=seed)


def _run_repetition(
    trace: Trace,
    template: ChannelConfig,
    policies: Sequence[RecoveryPolicy],
    key: CellKey,
    seed: int,
) -> dict[str, float]:
    cfg = _cell_config(template, key, seed)
    outcomes = simulate_channel(trace, cfg)
    return {
        policy.label: rmse(run_recovery(trace, outcomes, policy), trace)
        for policy in policies
    }


_WORKER_CTX: tuple | None = None


def _init_worker(trace, template, policies):
    global _WORKER_CTX
    _WORKER_CTX = (trace, template, policies)


def _worker_task(args):
    key, seed = args
    trace, template, policies = _WORKER_CTX
    return key, seed, _run_repetition(trace, template, policies, key, seed)


def run_sweep(
    trace: Trace,
    grid: SweepGrid,
    channel_template: ChannelConfig,
    policies: Sequence[RecoveryPolicy],
    jobs: int = 1,
) -> SweepResult:
    """Run the full interference sweep.

    Every repetition of every cell derives its own seed from (master seed,
    cell index, repetition), so results are reproducible and independent of
    worker scheduling; both policies see identical channel outcomes.
    """
    labels = [p.label for p in policies]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"policy labels must be unique, got {labels}")
    cell_list = grid.cells()
    tasks = [
        (key, _task_seed(grid.master_seed, ci, rep))
        for ci, key in enumerate(cell_list)
        for rep in range(grid.repetitions)
    ]
    cells: dict[CellKey, dict[str, list[float]]] = {
        key: {label: [] for label in labels} for key in cell_list
    }

    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_init_worker, initargs=(trace, channel_template, policies)
        ) as pool:
            # map preserves task order, so per-cell repetition lists fill in
            # the same order as the serial path.
            for key, _seed, values in pool.map(_worker_task, tasks, chunksize=8):
                for label, value in values.items():
                    cells[key][label].append(value)
    else:
        for key, seed in tasks:
            values = _run_repetition(trace, channel_template, policies, key, seed)
            for label, value in values.items():
                cells[key][label].append(value)
    return SweepResult(grid, tuple(labels), cells)


# ---------------------------------------------------------------------------
# Forecast-window accuracy study

def _closed_loop_errors(model, values: np.ndarray, window_max: int, stride: int) -> np.ndarray:
    """Squared per-step distances of closed-loop forecasts.

    For every anchor (a true sample index), forecasts run window_max steps
    feeding on themselves; entry [a, s] is the squared distance at horizon
    s+1. Returns an (anchors, window_max) array.
    """
    if isinstance(model, VarModel):
        hist_len = max(model.lag, 1)
    elif isinstance(model, MaModel):
        hist_len = model.window
    else:
        raise ConfigError(f"window study supports VAR and MA models, not {type(model).__name__}")
    n, dim = values.shape
    first = hist_len - 1
    last = n - 1 - window_max
    if last < first:
        raise ConfigError("test trace too short for the requested window")
    anchors = range(first, last + 1, stride)
    errors = np.empty((len(anchors), window_max))
    for row, a in enumerate(anchors):
        recent = values[a - hist_len + 1 : a + 1].copy()
        for s in range(window_max):
            if isinstance(model, VarModel):
                flat = recent[::-1][: model.lag].reshape(-1)
                pred = model.bias + model.stacked @ flat
            else:
                pred = recent.mean(axis=0)
            diff = pred - values[a + 1 + s]
            errors[row, s] = float(diff @ diff)
            recent = np.vstack([recent[1:], pred])
    return errors


def forecast_window_study(
    train: Trace,
    test: Trace,
    window_max: int,
    models: Sequence[str] = ("var", "ma"),
    record_candidates: Sequence[int] = tuple(range(1, 21)),
    stride: int | None = None,
) -> dict:
    """Closed-loop forecast accuracy versus forecast-window length.

    For each model family the history-record length is scanned over
    record_candidates and the best performer (lowest error pooled over all
    horizons) is reported together with its error curve: entry w-1 is the
    RMSE pooled over horizons 1..w.
    """
    if window_max < 1:
        raise ConfigError("window_max must be >= 1")
    values = test.joints_matrix()
    if stride is None:
        stride = max(1, (len(values) - window_max) // 400)
    study: dict[str, dict] = {}
    for name in models:
        if name not in ("var", "ma"):
            raise ConfigError(f"unknown model family {name!r}")
        best_record = None
        best_metric = math.inf
        best_curve: list[float] = []
        scan: dict[int, float] = {}
        for record in record_candidates:
            if name == "var":
                model = fit_var_ols(train, record)
            else:
                model = MaModel(train.dim, record)
            errors = _closed_loop_errors(model, values, window_max, stride)
            curve = [float(np.sqrt(errors[:, :w].mean())) for w in range(1, window_max + 1)]
            scan[record] = curve[-1]
            if curve[-1] < best_metric:
                best_metric = curve[-1]
                best_record = record
                best_curve = curve
        study[name] = {"best_record": best_record, "curve": best_curve, "by_record": scan}
    return study
