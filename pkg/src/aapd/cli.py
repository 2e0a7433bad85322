"""Command-line entry point: ``aapd run|train|replay|report|sweep``."""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

from . import metrics as mt
from .dynamics import build_next_order_Y
from .matching import HardwareClass
from .repertoire import LabeledRepertoire
from .sim import ConfigError, DetectionKind, ExperimentLog, ScenarioConfig, replay, run_experiment

LOG_NAME = "run_{:03d}.csv"
SIDECAR_NAME = "run_{:03d}.json"
_RUN_RE = re.compile(r"run_(\d+)\.csv$")


class CliError(Exception):
    pass


def _workers() -> int:
    try:
        cap = int(os.environ.get("AAPD_THREADS", "0"))
    except ValueError:
        raise CliError("AAPD_THREADS must be an integer")
    n = os.cpu_count() or 1
    return max(1, min(cap, n) if cap > 0 else n)


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and not path.is_dir():
        raise CliError(f"{path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not force:
        raise CliError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(path: str) -> ScenarioConfig:
    try:
        return ScenarioConfig.load(path)
    except FileNotFoundError:
        raise CliError(f"cannot read config {path}")
    except ConfigError as e:
        raise CliError(f"invalid config {path}: {e}")


def _detection_records(log: ExperimentLog) -> List[dict]:
    return [{
        "robot": d.robot, "hardware_class": d.hardware_class.value, "time": d.time, "tick": d.tick,
        "cycle": d.cycle, "delta": d.delta, "truth": d.truth.value if d.truth else None,
        "diagnosis": d.diagnosis.label if d.diagnosis else None, "levels": d.levels,
        "onset": bool(d.new_uids), "run": d.run,
    } for d in log.detections]


def _write_run(out: Path, i: int, log: ExperimentLog) -> mt.RunMetrics:
    log.write_csv(out / LOG_NAME.format(i))
    m = mt.run_metrics(log)
    side = {"summary": log.summary(), "metrics": m.to_dict(), "detections": _detection_records(log),
            "events": log.events}
    (out / SIDECAR_NAME.format(i)).write_text(json.dumps(side, indent=1))
    return m


def _run_one(args) -> tuple:
    config, i = args
    cfg = config.replace(seed=config.seed + i)
    return i, run_experiment(cfg, run=i)


def _run_replicates(config: ScenarioConfig, n: int) -> List[ExperimentLog]:
    jobs = [(config, i) for i in range(n)]
    workers = min(_workers(), n)
    if workers <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_one, jobs))
    return [log for _, log in sorted(results, key=lambda r: r[0])]


def cmd_run(a) -> int:
    config = _load_config(a.config)
    if a.seed is not None:
        config = config.replace(seed=a.seed)
    n = a.replicates if a.replicates is not None else config.replicates
    if n < 1:
        raise CliError("--replicates must be >= 1")
    out = _prepare_out(Path(a.out), a.force)
    logs = _run_replicates(config, n)
    ms = [_write_run(out, i, log) for i, log in enumerate(logs)]
    (out / "aggregate.json").write_text(json.dumps({"config": config.to_dict(), **mt.aggregate(ms)}, indent=1))
    (out / "metrics.csv").write_text(mt.metrics_csv(ms))
    print(f"wrote {n} replicate(s) to {out}")
    return 0


def _read_logs(directory: Path) -> Dict[int, ExperimentLog]:
    if not directory.is_dir():
        raise CliError(f"log directory {directory} not found")
    found = {}
    for p in sorted(directory.iterdir()):
        m = _RUN_RE.search(p.name)
        if not m:
            continue
        i = int(m.group(1))
        log = ExperimentLog.from_csv(p)
        log.run = i
        side = p.with_suffix(".json")
        if side.exists():
            log.config = json.loads(side.read_text())["summary"].get("config")
        found[i] = log
    if not found:
        raise CliError(f"no run_*.csv logs in {directory}")
    return found


def _load_y(path: Optional[str], expected: Optional[HardwareClass] = None) -> Optional[LabeledRepertoire]:
    if path is None or path.lower() == "none":
        return None
    try:
        return LabeledRepertoire.load(path, expected)
    except FileNotFoundError:
        raise CliError(f"cannot read repertoire {path}")
    except (ValueError, KeyError) as e:
        raise CliError(f"invalid repertoire {path}: {e}")


def _y_map(paths: List[str]) -> Dict[HardwareClass, LabeledRepertoire]:
    out = {}
    for p in paths or []:
        y = _load_y(p)
        if y is None:
            continue
        if y.hardware_class in out:
            raise CliError(f"two {y.hardware_class.value} repertoires given")
        out[y.hardware_class] = y
    return out


def cmd_train(a) -> int:
    hw = HardwareClass(a.hardware_class)
    logs = _read_logs(Path(a.logs))
    current = _load_y(a.current_y, hw)
    order = a.order if a.order is not None else (max((e.order for e in current), default=0) + 1 if current else 1)
    detections = []
    for i, log in sorted(logs.items()):
        if a.holdout is not None and i == a.holdout:
            continue
        y = {hw: current.excluding_run(i)} if current is not None else None
        detections.extend(replay(log, Y=y, classes=(hw,)).detections)
    y_next = build_next_order_Y(detections, current, hw, order, holdout_run=a.holdout)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    y_next.save(a.out)
    print(f"{hw.value} repertoire of order {order}: {len(y_next)} paratope(s) -> {a.out}")
    return 0


def cmd_replay(a) -> int:
    ys = _y_map(a.y)
    if a.order == 0 and ys:
        raise CliError("--order 0 takes no repertoire")
    if a.order > 0 and not ys:
        raise CliError(f"--order {a.order} needs at least one --y repertoire")
    path = Path(a.log)
    if not path.is_file():
        raise CliError(f"cannot read log {path}")
    log = ExperimentLog.from_csv(path)
    m = _RUN_RE.search(path.name)
    log.run = int(m.group(1)) if m else None
    side = path.with_suffix(".json")
    if side.exists():
        log.config = json.loads(side.read_text())["summary"].get("config")
    if a.holdout_self and log.run is not None:
        ys = {hw: y.excluding_run(log.run) for hw, y in ys.items()}
    out_dir = _prepare_out(Path(a.out), a.force)
    res = replay(log, Y=ys or None, algorithm=a.algorithm)
    (out_dir / "detections.json").write_text(json.dumps(_detection_records(res), indent=1))
    (out_dir / "metrics.json").write_text(json.dumps(
        {"order": a.order, "metrics": mt.run_metrics(res).to_dict(),
         "per_class": {hw.value: dict(zip(("psi_t", "psi_f"), mt.compute_psi(res, None, hw)))
                       for hw in HardwareClass}}, indent=1))
    print(f"{len(res.detections)} detection record(s) -> {out_dir}")
    return 0


def cmd_report(a) -> int:
    logs = _read_logs(Path(a.runs))
    ms = []
    for i, log in sorted(logs.items()):
        side = Path(a.runs) / SIDECAR_NAME.format(i)
        m = mt.run_metrics(log)
        if side.exists():
            # detection records are not part of the CSV; take the diagnosis table from the sidecar
            m.confusion = json.loads(side.read_text())["metrics"]["confusion"]
        ms.append(m)
    text = mt.metrics_json(ms)
    if a.out:
        Path(a.out).write_text(text)
        Path(a.out).with_suffix(".csv").write_text(mt.metrics_csv(ms))
    else:
        sys.stdout.write(text + "\n")
    return 0


def cmd_sweep(a) -> int:
    if a.param != "d0":
        raise CliError(f"unsupported sweep parameter {a.param!r} (only d0)")
    try:
        values = [float(v) for v in a.values.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--values must be comma-separated numbers, got {a.values!r}")
    if not values:
        raise CliError("--values is empty")
    base = _load_config(a.config)
    n = a.replicates if a.replicates is not None else base.replicates
    out = _prepare_out(Path(a.out), a.force)
    rows = []
    for v in values:
        det = base.detection
        try:
            det = type(det)(mode=DetectionKind.ORACLE, d0=v, order=det.order, classes=det.classes)
            cfg = base.replace(detection=det)
        except ConfigError as e:
            raise CliError(str(e))
        logs = _run_replicates(cfg, n)
        sub = out / f"d0_{v:g}"
        sub.mkdir(exist_ok=True)
        ms = [_write_run(sub, i, log) for i, log in enumerate(logs)]
        rows.append({
            "d0": v,
            "resources": [m.resources for m in ms],
            "median_resources": mt.lower_median(m.resources for m in ms),
            "median_power": mt.lower_median(m.power_consumed for m in ms),
            "median_lost": mt.lower_median(len(m.lost) for m in ms),
        })
    (out / "sweep.json").write_text(json.dumps({"param": "d0", "rows": rows}, indent=1))
    lines = ["d0,median_resources,median_power,median_lost"]
    lines += [f"{r['d0']},{r['median_resources']},{r['median_power']},{r['median_lost']}" for r in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aapd", description="Antibody population dynamics swarm fault detection.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate replicates of a scenario")
    r.add_argument("--config", required=True, help="scenario JSON")
    r.add_argument("--seed", type=int, help="base seed (replicate i uses seed + i)")
    r.add_argument("--replicates", type=int, help="overrides the config value")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--force", action="store_true", help="write into a non-empty directory")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", help="build the next-order faulty repertoire from logs")
    t.add_argument("--logs", required=True, help="directory of run_*.csv logs")
    t.add_argument("--current-y", default="none", help="repertoire to extend, or none for first order")
    t.add_argument("--holdout", type=int, help="exclude detections from this run index")
    t.add_argument("--out", required=True, help="repertoire JSON to write")
    t.add_argument("--class", dest="hardware_class", default="Motor", choices=[h.value for h in HardwareClass])
    t.add_argument("--order", type=int, help="order of the result (default: previous + 1)")
    t.set_defaults(func=cmd_train)

    y = sub.add_parser("replay", help="re-run the dynamics over a recorded log")
    y.add_argument("--log", required=True, help="recorded run CSV")
    y.add_argument("--y", action="append", default=[], help="repertoire JSON, once per class")
    y.add_argument("--order", type=int, default=0, help="model order of the supplied repertoires")
    y.add_argument("--out", required=True, help="output directory")
    y.add_argument("--algorithm", choices=["GPF", "LPF"], help="controller of the recorded run")
    y.add_argument("--holdout-self", action="store_true",
                   help="drop repertoire entries that came from the replayed run")
    y.add_argument("--force", action="store_true", help="write into a non-empty directory")
    y.set_defaults(func=cmd_replay)

    m = sub.add_parser("report", help="metrics over a directory of run logs")
    m.add_argument("--runs", required=True, help="directory written by run")
    m.add_argument("--out", help="JSON path; a CSV is written beside it")
    m.set_defaults(func=cmd_report)

    s = sub.add_parser("sweep", help="oracle-detector sweep over d0")
    s.add_argument("--config", required=True, help="scenario JSON")
    s.add_argument("--param", default="d0", help="only d0 is supported")
    s.add_argument("--values", required=True, help="comma-separated values in (0, 1)")
    s.add_argument("--replicates", type=int, help="overrides the config value")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--force", action="store_true", help="write into a non-empty directory")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"aapd {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
