"""Command-line entry points: trace generation, training, simulation, sweeps.

Commands are non-interactive, take explicit seeds, and write their outputs
(plus a run manifest with input digests) under the requested paths only.
Failures exit nonzero with a human-readable message and a final JSON error
line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .channel import (
    channel_config_from_dict,
    load_channel_config,
    simulate_channel,
    write_outcomes_csv,
)
from .core import RecoveryConfig, read_trace_csv, write_trace_csv
from .errors import ConfigError, ForecoError
from .evaluation import SweepGrid, rmse, run_sweep
from .forecasting import (
    AdamConfig,
    aic,
    fit_var_adam,
    fit_var_ols,
    likelihood_ratio,
    load_model,
    save_model,
    select_lag,
)
from .recovery import (
    PolicyMode,
    RecoveryPolicy,
    run_recovery,
    step_limit_from_trace,
    write_executed_csv,
    write_stats_json,
)
from .traces import PROFILES, synthetic_trace

log = logging.getLogger("foreco")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("FORECO_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _timestamp() -> str:
    """Current UTC time; honors SOURCE_DATE_EPOCH for reproducible outputs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.replace(microsecond=0).isoformat()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file and aborted runs leave nothing behind."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class Manifest:
    """Record of one CLI run: inputs with digests, seeds, outputs, timing."""

    def __init__(self, argv: list[str]):
        self.doc: dict = {
            "tool": "foreco",
            "version": __version__,
            "command": argv,
            "started_utc": _timestamp(),
            "inputs": {},
            "seeds": {},
            "outputs": {},
        }
        self._t0 = time.monotonic()

    def add_input(self, path: str | Path) -> None:
        self.doc["inputs"][str(path)] = _sha256(Path(path))

    def add_seed(self, name: str, value) -> None:
        self.doc["seeds"][name] = value

    def add_output(self, path: str | Path) -> None:
        self.doc["outputs"][str(path)] = _sha256(Path(path))

    def write(self, path: Path) -> None:
        self.doc["elapsed_s"] = round(time.monotonic() - self._t0, 3)
        atomic_write_text(path, json.dumps(self.doc, indent=2) + "\n")


def _fail(kind: str, message: str, code: int) -> int:
    print(f"foreco: error: {message}", file=sys.stderr)
    print(json.dumps({"error": {"kind": kind, "message": message}}), file=sys.stderr)
    return code


def _json_float(x: float):
    return x if math.isfinite(x) else repr(x)


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    trace = read_trace_csv(args.trace)
    manifest = Manifest(args.argv)
    manifest.add_input(args.trace)

    report: dict = {"trainer": args.trainer}
    if args.lag == "auto":
        best_lag, curve = select_lag(trace, args.max_lag)
        lags = list(range(1, args.max_lag + 1))
        report.update(
            best_lag=best_lag,
            lags=lags,
            aic=curve,
            likelihood_ratios=[
                {
                    "from_lag": lags[i],
                    "to_lag": lags[i + 1],
                    # huge ratios overflow floats; keep the report valid JSON
                    "ratio": _json_float(likelihood_ratio(curve[i], curve[i + 1], trace.dim)),
                }
                for i in range(len(lags) - 1)
            ],
        )
        lag = best_lag
        log.info("auto lag selection picked lag=%d", lag)
    else:
        lag = int(args.lag)
        report["best_lag"] = lag

    if args.trainer == "ols":
        model = fit_var_ols(trace, lag, ridge=args.ridge)
    else:
        cfg = AdamConfig(
            step_size=args.step_size,
            beta1=args.beta1,
            beta2=args.beta2,
            epsilon=args.epsilon,
            batch_size=args.batch_size,
            epochs=args.epochs,
            bias_correction=args.bias_correction,
        )
        if cfg.epochs == 0:
            log.warning("epochs=0: model keeps its zero-initialized weights")
            print("warning: epochs=0 leaves the model at zero-initialized weights", file=sys.stderr)
        model = fit_var_adam(trace, lag, cfg)

    if args.lag != "auto":
        try:
            report.update(lags=[lag], aic=[aic(model, trace)])
        except ForecoError as exc:
            report.update(lags=[lag], aic=[None], aic_note=str(exc))

    out_model = Path(args.out)
    out_model.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out_model, trained_at=_timestamp())
    report_path = Path(args.report) if args.report else out_model.with_suffix(out_model.suffix + ".aic.json")
    atomic_write_text(report_path, json.dumps(report, indent=2) + "\n")

    manifest.add_output(out_model)
    manifest.add_output(report_path)
    manifest.write(out_model.with_suffix(out_model.suffix + ".manifest.json"))
    print(f"trained lag={lag} model ({args.trainer}) -> {out_model}")
    return 0


# ---------------------------------------------------------------------------
# simulate

def _build_policy(name: str, cfg: RecoveryConfig, model, max_step=None) -> RecoveryPolicy:
    mode = {
        "forecast": PolicyMode.FORECAST,
        "repeat-last": PolicyMode.REPEAT_LAST,
        "drop": PolicyMode.DROP,
    }.get(name)
    if mode is None:
        raise ConfigError(f"unknown policy {name!r}")
    if mode is PolicyMode.FORECAST and model is None:
        raise ConfigError("policy 'forecast' requires --model")
    if mode is not PolicyMode.FORECAST:
        model, max_step = None, None
    return RecoveryPolicy(mode, cfg, model, max_step_per_joint=max_step)


def cmd_simulate(args) -> int:
    trace = read_trace_csv(args.trace)
    channel = load_channel_config(args.channel)
    model = load_model(args.model) if args.model else None

    manifest = Manifest(args.argv)
    manifest.add_input(args.trace)
    manifest.add_input(args.channel)
    if args.model:
        manifest.add_input(args.model)
    manifest.add_seed("channel", channel.seed)

    record_len = args.record_len
    if record_len is None:
        record_len = max(20, model.lag) if model is not None else 20
    recovery_cfg = RecoveryConfig(
        tolerance_ms=args.tolerance_ms,
        record_len=record_len,
        transport_bound_ms=channel.transport_bound_ms,
    )
    max_step = None
    if args.step_limit_margin is not None:
        max_step = step_limit_from_trace(trace, margin=args.step_limit_margin)
    policy = _build_policy(args.policy, recovery_cfg, model, max_step)

    outcomes = simulate_channel(trace, channel)
    stream = run_recovery(trace, outcomes, policy)
    error = rmse(stream, trace)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_outcomes_csv(outcomes, out_dir / "outcomes.csv")
    write_executed_csv(stream, out_dir / "executed.csv")
    write_stats_json(stream, out_dir / "stats.json")
    summary = {
        "policy": policy.label,
        "rmse": error,
        "stats": stream.stats.to_dict(),
        "commands": len(trace),
        "channel_seed": channel.seed,
        "tolerance_ms": recovery_cfg.tolerance_ms,
        "record_len": recovery_cfg.record_len,
    }
    atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")

    for name in ("outcomes.csv", "executed.csv", "stats.json", "summary.json"):
        manifest.add_output(out_dir / name)
    manifest.write(out_dir / "manifest.json")
    print(f"policy={policy.label} rmse={error:.6g} on_time={stream.stats.on_time}/{len(trace)}")
    return 0


# ---------------------------------------------------------------------------
# sweep

def _load_sweep_spec(path: Path) -> dict:
    spec = json.loads(path.read_text())
    for field in ("probs", "durations", "robot_counts", "channel"):
        if field not in spec:
            raise ConfigError(f"sweep spec is missing {field!r}")
    return spec


def cmd_sweep(args) -> int:
    trace = read_trace_csv(args.trace)
    spec_path = Path(args.spec)
    spec = _load_sweep_spec(spec_path)

    manifest = Manifest(args.argv)
    manifest.add_input(args.trace)
    manifest.add_input(spec_path)

    grid = SweepGrid(
        probs=tuple(spec["probs"]),
        durations=tuple(spec["durations"]),
        robot_counts=tuple(spec["robot_counts"]),
        repetitions=spec.get("repetitions", 40),
        master_seed=spec.get("master_seed", 0),
    )
    manifest.add_seed("master", grid.master_seed)
    template = channel_config_from_dict(spec["channel"])
    recovery_cfg = RecoveryConfig(
        tolerance_ms=spec.get("tolerance_ms", 0.0),
        record_len=spec.get("record_len", 20),
        transport_bound_ms=template.transport_bound_ms,
    )
    model = None
    policy_names = spec.get("policies", ["forecast", "repeat-last"])
    if "forecast" in policy_names:
        model_ref = spec.get("model")
        if not model_ref:
            raise ConfigError("sweep spec includes the forecast policy but no 'model' path")
        model_path = Path(model_ref)
        if not model_path.is_absolute():
            model_path = spec_path.parent / model_path
        model = load_model(model_path)
        manifest.add_input(model_path)
    max_step = None
    margin = spec.get("step_limit_margin")
    if margin is not None:
        max_step = step_limit_from_trace(trace, margin=float(margin))
    policies = [_build_policy(name, recovery_cfg, model, max_step) for name in policy_names]

    jobs = args.jobs or os.cpu_count() or 1
    log.info("sweep: %d cells x %d repetitions, jobs=%d", len(grid.cells()), grid.repetitions, jobs)
    result = run_sweep(trace, grid, template, policies, jobs=jobs)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "sweep_result.json", json.dumps(result.to_dict(), indent=2) + "\n")
    matrix_paths = result.write_matrices(out_dir)
    manifest.add_output(out_dir / "sweep_result.json")
    for path in matrix_paths:
        manifest.add_output(path)
    manifest.write(out_dir / "manifest.json")

    if "forecast" in policy_names and "repeat-last" in policy_names:
        ratio = result.worst_cell_ratio("forecast", "repeat-last")
        print(f"sweep done: worst-cell forecast/repeat-last mean-RMSE ratio = {ratio:.4f}")
    else:
        print("sweep done")
    return 0


# ---------------------------------------------------------------------------
# gen-trace

def cmd_gen_trace(args) -> int:
    trace = synthetic_trace(
        args.profile, args.duration_s, args.seed, period_ms=args.period_ms, dim=args.dim
    )
    manifest = Manifest(args.argv)
    manifest.add_seed("trace", args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out)
    manifest.add_output(out)
    manifest.write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {len(trace)} commands ({args.profile}) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foreco",
        description="Forecast-based recovery of late/lost remote-control commands.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a forecaster on a trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--lag", default="auto", help="lag order, or 'auto' for criterion-based selection")
    p.add_argument("--max-lag", type=int, default=20, help="largest lag scanned with --lag auto")
    p.add_argument("--trainer", choices=("ols", "adam"), default="ols")
    p.add_argument("--ridge", type=float, default=0.0, help="ridge penalty for collinear designs (ols)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--step-size", type=float, default=0.001)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--epsilon", type=float, default=1e-07)
    p.add_argument("--bias-correction", choices=("fixed", "per-step"), default="fixed")
    p.add_argument("--out", required=True, help="model JSON output path")
    p.add_argument("--report", help="criterion report path (default: <out>.aic.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run the channel and a recovery policy over a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--channel", required=True, help="channel config JSON")
    p.add_argument("--model", help="model JSON (required for --policy forecast)")
    p.add_argument("--policy", choices=("forecast", "repeat-last", "drop"), default="forecast")
    p.add_argument("--tolerance-ms", type=float, default=0.0)
    p.add_argument("--record-len", type=int, default=None)
    p.add_argument(
        "--step-limit-margin",
        type=float,
        default=None,
        help="cap injected forecast steps at margin x the trace's largest per-period move",
    )
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="interference sweep over a grid spec JSON")
    p.add_argument("--trace", required=True)
    p.add_argument("--spec", required=True, help="sweep spec JSON")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: cores)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-trace", help="write a synthetic trace CSV")
    p.add_argument("--profile", choices=PROFILES, required=True)
    p.add_argument("--duration-s", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--period-ms", type=float, default=20.0)
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail("io", str(exc), 2)
    except OSError as exc:
        return _fail("io", str(exc), 2)
    except json.JSONDecodeError as exc:
        return _fail("format", f"invalid JSON: {exc}", 3)
    except ForecoError as exc:
        return _fail(exc.kind, str(exc), 3)
    except Exception as exc:  # pragma: no cover - last-resort guard
        log.exception("unexpected failure")
        return _fail("internal", f"{type(exc).__name__}: {exc}", 1)


if __name__ == "__main__":
    sys.exit(main())
