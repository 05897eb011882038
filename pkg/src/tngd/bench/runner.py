"""Experiment runner: per-seed CSV logs, sweeps and post-processing."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import MalformedLog
from ..optim import train_one
from .config import sweep_override

LOG_COLUMNS = (
    "seed", "iteration", "epoch", "train_loss", "test_loss", "train_acc", "test_acc",
    "lambda", "est_wall_seconds", "analog_time_t", "delay_td", "kappa0",
)
SUMMARY_COLUMNS = (
    "run", "iteration", "est_wall_seconds", "n_seeds",
    "train_loss_mean", "train_loss_std", "test_loss_mean", "test_loss_std",
)


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _finite(value):
    # accuracy is undefined for regression heads; log it as 0 to keep every field finite
    v = float(value)
    return v if math.isfinite(v) else 0.0


def history_rows(history, opt):
    for r in history.records:
        yield (
            history.seed, r.k, r.epoch, r.train_loss, r.test_loss, _finite(r.train_acc), _finite(r.test_acc),
            r.damping, r.est_wall_seconds, opt.analog_time, opt.delay_time, opt.noise_variance,
        )


def render_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def run_seed(config, seed, out_dir):
    """Train one seed and write ``seed_<s>.csv`` plus its JSON sidecar."""
    opt = config.validate()
    dataset = config.load_dataset()
    model = config.model_spec(dataset)
    t = config["training"]
    history = train_one(model, dataset, opt, seed, epochs=t["epochs"], batch_size=t["batch_size"],
                        max_iterations=t["max_iterations"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"seed_{seed}.csv"
    csv_path.write_text(render_csv(history_rows(history, opt)))
    sidecar = {
        "schema_version": config["meta"]["schema_version"],
        "code_version": __version__,
        "seed": seed,
        "config": config.to_dict(),
        "n_params": model.n_params,
        "final_train_loss": history.final_train_loss,
        "final_train_acc": history.final_train_acc,
    }
    (out_dir / f"seed_{seed}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=float) + "\n")
    return csv_path


def _execute(tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [run_seed(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


def _run_task(task):
    return run_seed(*task)


def run(config, seeds=None, jobs=None):
    seeds = list(seeds) if seeds else config["training"]["seeds"]
    out = config.output_dir()
    tasks = [(config, s, out) for s in seeds]
    return _execute(tasks, jobs or config["training"]["jobs"])


def sweep(config, axis, values, seeds=None, jobs=None):
    """One run set per value under ``<output>/<axis>=<value>/``; seeds are shared across values."""
    seeds = list(seeds) if seeds else config["training"]["seeds"]
    out = config.output_dir()
    tasks = []
    for value in values:
        cfg = sweep_override(config, axis, value)
        tasks.extend((cfg, s, out / f"{axis}={_fmt(float(value))}") for s in seeds)
    return _execute(tasks, jobs or config["training"]["jobs"])


def moving_average(values, window):
    """Trailing mean over complete windows; output length n - window + 1."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be at least 1")
    window = min(window, values.shape[0])
    if window == 0:
        return values.copy()
    c = np.cumsum(np.concatenate([[0.0], values]))
    return (c[window:] - c[:-window]) / window


def read_log(path):
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedLog(f"{path}: empty file") from None
    if tuple(header) != LOG_COLUMNS:
        raise MalformedLog(f"{path}: unexpected header {header}")
    rows = []
    for i, row in enumerate(reader, start=2):
        if len(row) != len(LOG_COLUMNS):
            raise MalformedLog(f"{path}:{i}: expected {len(LOG_COLUMNS)} fields")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise MalformedLog(f"{path}:{i}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise MalformedLog(f"{path}:{i}: non-finite value")
        rows.append(vals)
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(LOG_COLUMNS))
    return {name: arr[:, j] for j, name in enumerate(LOG_COLUMNS)}


def summarize_group(logs, window):
    """Mean and std across seeds of the smoothed losses, aligned by iteration."""
    length = min(len(log["iteration"]) for log in logs)
    if length == 0:
        return {}
    w = min(window, length)
    train = np.stack([moving_average(log["train_loss"][:length], w) for log in logs])
    test = np.stack([moving_average(log["test_loss"][:length], w) for log in logs])
    iters = logs[0]["iteration"][w - 1:length]
    wall = np.mean([log["est_wall_seconds"][w - 1:length] for log in logs], axis=0)
    return {
        "iteration": iters,
        "est_wall_seconds": wall,
        "train_loss_mean": train.mean(axis=0),
        "train_loss_std": train.std(axis=0),
        "test_loss_mean": test.mean(axis=0),
        "test_loss_std": test.std(axis=0),
    }


def postprocess(in_dir, window=200, thresholds=(1.0, 0.5, 0.3, 0.2, 0.1)):
    """Write ``summary.csv`` and ``time_to_threshold.csv`` into ``in_dir``."""
    in_dir = Path(in_dir)
    groups = defaultdict(list)
    for path in sorted(in_dir.rglob("seed_*.csv")):
        groups[path.parent].append(read_log(path))
    if not groups:
        raise MalformedLog(f"no seed_*.csv logs under {in_dir}")
    summary = io.StringIO()
    sw = csv.writer(summary, lineterminator="\n")
    sw.writerow(SUMMARY_COLUMNS)
    ttt = io.StringIO()
    tw = csv.writer(ttt, lineterminator="\n")
    tw.writerow(("run", "threshold", "iteration", "est_wall_seconds"))
    for group in sorted(groups):
        name = str(group.relative_to(in_dir)) if group != in_dir else "."
        s = summarize_group(groups[group], window)
        if not s:
            continue
        n = len(groups[group])
        for i in range(len(s["iteration"])):
            sw.writerow([name, _fmt(int(s["iteration"][i])), _fmt(s["est_wall_seconds"][i]), n,
                         _fmt(s["train_loss_mean"][i]), _fmt(s["train_loss_std"][i]),
                         _fmt(s["test_loss_mean"][i]), _fmt(s["test_loss_std"][i])])
        for thr in thresholds:
            hit = np.nonzero(s["train_loss_mean"] <= thr)[0]
            if hit.size:
                j = hit[0]
                tw.writerow([name, _fmt(float(thr)), _fmt(int(s["iteration"][j])), _fmt(s["est_wall_seconds"][j])])
            else:
                tw.writerow([name, _fmt(float(thr)), "", ""])
    summary_path = in_dir / "summary.csv"
    summary_path.write_text(summary.getvalue())
    (in_dir / "time_to_threshold.csv").write_text(ttt.getvalue())
    return summary_path
