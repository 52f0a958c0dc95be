"""``flowcast`` command line: train, forecast, evaluate, sweep.

Exit codes: 0 ok, 2 usage or config, 3 data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import metrics
from .config import ConfigError, RunConfig, build_model, load_config, load_dataset, override
from .data import DataError, split
from .estimators import FlowForecaster, load_model, save_model
from .rq_spline import SplineDomainError
from .training import NumericalError, write_history

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

CHECKPOINT_NAME = "model.ckpt"
HISTORY_NAME = "history.csv"
SNAPSHOT_NAME = "config.resolved"

METRICS_BY_FORMAT = {
    "quantile": ("crps", "reliability"),
    "interval": ("pi_width", "coverage"),
    "scenario": ("crps", "es", "vs"),
}
VALID_METRICS = ("crps", "es", "vs", "reliability", "pi_width", "coverage")
SWEEP_KNOBS = {"knots": "knots", "transforms": "n_transforms", "units": "cond_hidden"}


class UsageError(Exception):
    pass


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


# --------------------------------------------------------------------- train


def _run_fields(cfg: RunConfig) -> dict:
    """Header fields needed to rebuild the supervised layout at forecast time."""
    return {
        "case": cfg.case,
        "lag": cfg.lag,
        "horizon": cfg.horizon,
        "site": cfg.site,
        "capacity": cfg.capacity,
        "seed": cfg.seed,
        "synthetic_rows": cfg.synthetic_rows,
        "data": cfg.data,
    }


def train_model(cfg: RunConfig):
    """Fit the configured model on the train split; returns (model, data parts)."""
    train, val, test = split(load_dataset(cfg))
    model = build_model(cfg)
    if isinstance(model, FlowForecaster):
        model.fit(train.X, train.Y, val.X, val.Y)
    else:
        model.fit(train.X, train.Y)
    return model, (train, val, test)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg = override(cfg, output_dir=args.output_dir)
    model, _ = train_model(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / CHECKPOINT_NAME, {"run": _run_fields(cfg)})
    with (out / HISTORY_NAME).open("w", newline="") as fh:
        write_history(getattr(model, "history_", []) if isinstance(model, FlowForecaster) else [], fh)
    (out / SNAPSHOT_NAME).write_text(cfg.snapshot(), encoding="utf-8")
    print(f"wrote {out / CHECKPOINT_NAME}, {out / HISTORY_NAME}, {out / SNAPSHOT_NAME}")
    return EXIT_OK


# ------------------------------------------------------------------ forecast


def _forecast_rows(header: dict, data_arg: str | None, part: str):
    run = dict(header.get("run") or {})
    if not run:
        raise ConfigError("checkpoint carries no run settings")
    cfg = RunConfig(
        data=data_arg or run["data"],
        case=run["case"],
        lag=run["lag"],
        horizon=run["horizon"],
        site=run["site"],
        capacity=run["capacity"],
        seed=run["seed"],
        synthetic_rows=run["synthetic_rows"],
    ).validate()
    full = load_dataset(cfg)
    if part == "all":
        return full
    train, val, test = split(full)
    return {"train": train, "val": val, "test": test}[part]


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_forecast(args) -> int:
    chosen = [f for f in ("quantiles", "scenarios", "interval") if getattr(args, f) is not None]
    if len(chosen) != 1:
        raise UsageError("pass exactly one of --quantiles, --scenarios, --interval")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    model, header = load_model(path)
    rows = _forecast_rows(header, args.data, args.split)
    if args.max_rows:
        rows = rows.take(np.arange(min(args.max_rows, len(rows))))
    if rows.X.shape[1] != model.n_features_in_:
        raise DataError(f"data has {rows.X.shape[1]} features, checkpoint expects {model.n_features_in_}")
    times = [str(t) for t in rows.issue_times]
    d = model.n_outputs_

    if args.quantiles is not None:
        if d != 1:
            raise UsageError(f"--quantiles needs a univariate checkpoint (this one has d={d}); use --scenarios")
        levels = _parse_floats(args.quantiles, "--quantiles")
        if not levels or any(not 0 < a < 1 for a in levels):
            raise UsageError("--quantiles levels must lie strictly inside (0, 1)")
        q = model.predict_quantiles(rows.X, levels)
        out = [(t, repr(a), repr(float(v))) for t, qrow in zip(times, q) for a, v in zip(levels, qrow)]
        _write_csv(args.output, ("time", "alpha", "value"), out)
    elif args.interval is not None:
        if d != 1:
            raise UsageError(f"--interval needs a univariate checkpoint (this one has d={d})")
        if not 0 < args.interval < 1:
            raise UsageError("--interval beta must lie strictly inside (0, 1)")
        pi = model.predict_interval(rows.X, args.interval)
        _write_csv(args.output, ("time", "lower", "upper"), [(t, repr(float(lo)), repr(float(hi))) for t, (lo, hi) in zip(times, pi)])
    else:
        if args.scenarios < 1:
            raise UsageError("--scenarios must be >= 1")
        seed = header.get("run", {}).get("seed", 0) if args.seed is None else args.seed
        scen = model.sample(rows.X, args.scenarios, random_state=seed)
        out = [
            (t, s, j, repr(float(scen[i, s, j])))
            for i, t in enumerate(times)
            for s in range(scen.shape[1])
            for j in range(d)
        ]
        _write_csv(args.output, ("time", "scenario_id", "dim", "value"), out)

    if args.truth_output:
        truth = [(t, j, repr(float(rows.Y[i, j]))) for i, t in enumerate(times) for j in range(d)]
        _write_csv(args.truth_output, ("time", "dim", "value"), truth)
    print(f"wrote {args.output} ({len(times)} issue times)")
    return EXIT_OK


# ------------------------------------------------------------------ evaluate


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        body = [row for row in reader if row]
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path} line {lineno}: expected {len(header)} fields, got {len(row)}")
    return header, body


def _forecast_format(header: list[str]) -> str:
    formats = {
        ("time", "alpha", "value"): "quantile",
        ("time", "lower", "upper"): "interval",
        ("time", "scenario_id", "dim", "value"): "scenario",
    }
    try:
        return formats[tuple(header)]
    except KeyError:
        raise DataError(f"unrecognized forecast header {header}") from None


def _num(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{where}: not a number: {text!r}") from None


def read_truth(path) -> "OrderedDict[str, np.ndarray]":
    header, body = _read_csv(path)
    if header != ["time", "dim", "value"]:
        raise DataError(f"truth header must be time,dim,value, got {header}")
    grouped: OrderedDict[str, dict[int, float]] = OrderedDict()
    for row in body:
        grouped.setdefault(row[0], {})[int(row[1])] = _num(row[2], str(path))
    return OrderedDict((t, np.array([v[j] for j in sorted(v)])) for t, v in grouped.items())


def read_forecast(path):
    """Parse a forecast CSV into ``(format, times, payload)``.

    Payload: quantile -> (levels, (N, A) array); interval -> (N, 2) array;
    scenario -> (N, S, d) array.
    """
    header, body = _read_csv(path)
    fmt = _forecast_format(header)
    where = str(path)
    grouped: OrderedDict[str, list] = OrderedDict()
    for row in body:
        grouped.setdefault(row[0], []).append(row[1:])
    times = list(grouped)
    if fmt == "quantile":
        levels = [_num(r[0], where) for r in grouped[times[0]]] if times else []
        values = []
        for t in times:
            if [_num(r[0], where) for r in grouped[t]] != levels:
                raise DataError(f"{where}: time {t} has a different quantile level set")
            values.append([_num(r[1], where) for r in grouped[t]])
        return fmt, times, (np.array(levels), np.array(values, dtype=float).reshape(len(times), len(levels)))
    if fmt == "interval":
        for t in times:
            if len(grouped[t]) != 1:
                raise DataError(f"{where}: time {t} appears more than once")
        return fmt, times, np.array([[_num(v, where) for v in grouped[t][0]] for t in times], dtype=float)
    blocks = []
    for t in times:
        cells = {(int(r[0]), int(r[1])): _num(r[2], where) for r in grouped[t]}
        s_ids = sorted({k[0] for k in cells})
        dims = sorted({k[1] for k in cells})
        if len(cells) != len(s_ids) * len(dims):
            raise DataError(f"{where}: time {t} has an incomplete scenario grid")
        blocks.append([[cells[(s, j)] for j in dims] for s in s_ids])
    shapes = {np.shape(b) for b in blocks}
    if len(shapes) > 1:
        raise DataError(f"{where}: scenario count or dimension differs between times")
    return fmt, times, np.array(blocks, dtype=float)


def evaluate(fmt: str, payload, truth: np.ndarray, wanted: list[str]) -> list[tuple[str, float]]:
    """Averaged scores; CRPS and ES are reported in percent (x100)."""
    out: list[tuple[str, float]] = []
    for name in wanted:
        if fmt == "quantile":
            levels, q = payload
            if name == "crps":
                out.append(("crps", 100.0 * float(metrics.crps_from_quantiles(levels, q, truth[:, 0]).mean())))
            elif name == "reliability":
                curve = metrics.reliability(q, truth[:, 0], levels)
                out.extend((f"reliability@{a:g}", float(o)) for a, o in zip(curve.nominal, curve.observed))
                out.append(("reliability_max_dev", curve.max_deviation()))
        elif fmt == "interval":
            if name == "pi_width":
                out.append(("pi_width", 100.0 * metrics.pi_width(payload[:, 0], payload[:, 1])))
            elif name == "coverage":
                y = truth[:, 0]
                out.append(("coverage", float(np.mean((payload[:, 0] <= y) & (y <= payload[:, 1])))))
        else:
            scen = payload
            if name == "crps":
                per = metrics.map_rows(
                    lambda i: np.mean([metrics.energy_score(scen[i][:, [j]], truth[i, [j]]) for j in range(scen.shape[2])]),
                    len(scen),
                )
                out.append(("crps", 100.0 * float(per.mean())))
            elif name == "es":
                out.append(("es", 100.0 * metrics.mean_energy_score(scen, truth)))
            elif name == "vs":
                out.append(("vs", metrics.mean_variogram_score(scen, truth)))
    return out


def cmd_evaluate(args) -> int:
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()] if args.metrics else None
    if wanted is not None:
        unknown = [m for m in wanted if m not in VALID_METRICS]
        if unknown:
            raise UsageError(f"unknown metric(s) {unknown}; valid metrics: {', '.join(VALID_METRICS)}")
    fmt, times, payload = read_forecast(args.forecast)
    allowed = METRICS_BY_FORMAT[fmt]
    if wanted is None:
        wanted = list(allowed)
    bad = [m for m in wanted if m not in allowed]
    if bad:
        raise UsageError(f"metric(s) {bad} do not apply to a {fmt} forecast; use {', '.join(allowed)}")

    truth_map = read_truth(args.truth)
    if list(truth_map) != times:
        missing = sorted(set(times) ^ set(truth_map))
        detail = f"times present in only one file: {missing[:5]}" if missing else "time order differs"
        raise DataError(f"forecast and truth are misaligned; {detail}")
    truth = np.array([truth_map[t] for t in times], dtype=float)
    d = truth.shape[1]
    fdim = payload.shape[2] if fmt == "scenario" else 1
    if fdim != d:
        raise DataError(f"forecast dimension {fdim} != truth dimension {d}")

    scores = evaluate(fmt, payload, truth, wanted)
    model = args.model or Path(args.forecast).stem
    rows = [(model, args.case, name, repr(value)) for name, value in scores]
    if args.output:
        _write_csv(args.output, ("model", "case", "metric", "value"), rows)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(("model", "case", "metric", "value"))
        w.writerows(rows)
    return EXIT_OK


# --------------------------------------------------------------------- sweep


def holdout_score(model, test) -> float:
    """Test CRPS (x100) for univariate targets, ES (x100) otherwise."""
    if test.Y.shape[1] == 1 and hasattr(model, "crps"):
        return 100.0 * float(np.mean(model.crps(test.X, test.Y)))
    scen = model.sample(test.X, 100)
    return 100.0 * metrics.mean_energy_score(scen, test.Y)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.knob not in SWEEP_KNOBS:
        raise UsageError(f"--knob must be one of {', '.join(SWEEP_KNOBS)}")
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values: expected integers, got {args.values!r}") from None
    if not values:
        raise UsageError("--values is empty")
    field = SWEEP_KNOBS[args.knob]
    rows = []
    for v in values:
        run_cfg = override(cfg, **{field: (v, v) if field == "cond_hidden" else v})
        model, (_, _, test) = train_model(run_cfg)
        if run_cfg.eval_rows:
            test = test.take(np.arange(min(run_cfg.eval_rows, len(test))))
        score = holdout_score(model, test)
        rows.append((args.knob, v, repr(score)))
        print(f"{args.knob}={v}: crps={score:.4f}")
    _write_csv(args.output, ("knob", "value", "crps"), rows)
    return EXIT_OK


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowcast", description="Conditional normalizing-flow forecasting")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--output-dir", help="override output_dir from the config")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("forecast", help="write quantile, interval or scenario forecasts")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", help="data source; defaults to the one used for training")
    f.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    f.add_argument("--quantiles", help="comma-separated levels, univariate only")
    f.add_argument("--scenarios", type=int, help="number of joint scenarios per issue time")
    f.add_argument("--interval", type=float, help="beta for the central (1 - beta) interval")
    f.add_argument("--seed", type=int, help="sampling seed (default: training seed)")
    f.add_argument("--max-rows", type=int, default=0, help="only the first N issue times")
    f.add_argument("--output", required=True)
    f.add_argument("--truth-output", help="also write observations as time,dim,value")
    f.set_defaults(func=cmd_forecast)

    e = sub.add_parser("evaluate", help="score a forecast CSV against a truth CSV")
    e.add_argument("--forecast", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--metrics", help=f"comma-separated subset of {','.join(VALID_METRICS)}")
    e.add_argument("--model", help="model label in the report (default: forecast file stem)")
    e.add_argument("--case", default="", help="case label in the report")
    e.add_argument("--output", help="report CSV path (default: stdout)")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="retrain over one hyperparameter and report test CRPS")
    s.add_argument("--config", required=True)
    s.add_argument("--knob", required=True, help=f"one of {', '.join(SWEEP_KNOBS)}")
    s.add_argument("--values", required=True, help="comma-separated integers")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, SplineDomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
