"""Command-line driver: ``tailrisk <command> [options]``.

Commands read and write plain delimited text; every run leaves a JSON
manifest (resolved configuration, its hash, seed, package version and the
hash of each output file) next to its outputs. A manifest can be passed back
with ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import engine
from .errors import InputError, InvariantError, TailRiskError
from .series import adf_test, describe, read_series_csv, write_series_csv

log = logging.getLogger("tailrisk")

COMMANDS = ("ingest", "forecast", "combine", "backtest", "simulate", "report")
DEFAULTS = {
    "input": None,
    "output": "out",
    "alpha": [0.01, 0.05],
    "initial_window": 2000,
    "hs_window": 168,
    "combo_window": 1251,
    "eval_tail": 1200,
    "models": ",".join(engine.DEFAULT_MODELS),
    "seed": 0,
    "reps": 1,
    "emit_plot_data": False,
}


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage, self.exc = stage, exc


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tailrisk", description="VaR/ES forecasting, "
                                "combination and backtesting")
    p.add_argument("command", choices=COMMANDS)
    # defaults are None so that config-file values can be told apart from flags
    p.add_argument("--config", help="JSON configuration file or a previous run manifest")
    p.add_argument("--input", help="input file (series CSV or panel CSV)")
    p.add_argument("--output", help="output directory")
    p.add_argument("--alpha", type=float, action="append", help="tail level, repeatable")
    p.add_argument("--initial-window", type=int)
    p.add_argument("--hs-window", type=int)
    p.add_argument("--combo-window", type=int)
    p.add_argument("--eval-tail", type=int)
    p.add_argument("--models", help="comma-separated model identifiers")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int, help="simulation repetitions")
    p.add_argument("--emit-plot-data", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        raw = raw.get("config", raw)  # accept a manifest
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(raw)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["alpha"] = sorted({float(a) for a in cfg["alpha"]})
    if not cfg["alpha"]:
        raise InputError("at least one --alpha is required")
    if cfg["reps"] < 1:
        raise InputError("--reps must be at least 1")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def plan_from(cfg: dict) -> engine.RollingPlan:
    models = tuple(m.strip() for m in str(cfg["models"]).split(",") if m.strip())
    return engine.RollingPlan(
        initial_window=cfg["initial_window"], hs_window=cfg["hs_window"],
        combo_window=cfg["combo_window"], eval_tail=cfg["eval_tail"],
        alphas=tuple(cfg["alpha"]), model_list=models, seed=cfg["seed"])


class Outputs:
    """Tracks files written by a run so a failure can remove them."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []
        self._made_root = not root.exists()

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.files.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        if self._made_root and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()

    def manifest(self, command: str, cfg: dict, name: str = "manifest.json", **extra) -> None:
        digests = {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                   for p in self.files if p.exists()}
        doc = {"command": command, "config": cfg, "config_hash": config_hash(cfg),
               "seed": cfg["seed"], "version": _version(), "outputs": digests, **extra}
        self.path(name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (TailRiskError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


def _need_input(cfg) -> Path:
    if not cfg["input"]:
        raise InputError("--input is required for this command")
    p = Path(cfg["input"])
    if not p.exists():
        raise InputError(f"input file {p} does not exist")
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: dict, out: Outputs) -> None:
    series = _stage("read", read_series_csv, _need_input(cfg))
    stats = _stage("describe", describe, series)
    summary = {"n": len(series), "stats": stats.as_dict()}
    try:
        adf = adf_test(series)
        summary["adf"] = {"statistic": adf.statistic, "p_value": adf.p_value,
                          "reject_unit_root": adf.reject, "lags": adf.used_lag}
    except TailRiskError as exc:
        summary["adf"] = {"error": str(exc)}
    write_series_csv(series, out.path("returns.csv"))
    out.path("summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    out.manifest("ingest", cfg)


def cmd_forecast(cfg: dict, out: Outputs) -> None:
    series = _stage("read", read_series_csv, _need_input(cfg))
    plan = _stage("plan", plan_from, cfg)
    _stage("plan", plan.check_series, len(series))
    panels = _stage("forecast", engine.run_rolling, series, plan)
    engine.write_panel_csv([panels[a] for a in plan.alphas], out.path("panel.csv"))
    first = panels[plan.alphas[0]]
    out.manifest("forecast", cfg, dropped=first.dropped,
                 flagged={m: len(v) for m, v in first.flags.items()})


def _write_weights(panel: engine.ForecastPanel, path: Path, base_ids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"beta_{m}" for m in base_ids]
                   + [f"gamma_{m}" for m in base_ids])
        for t in range(len(panel)):
            w.writerow([engine._ts_str(panel.timestamps[t])]
                       + [repr(float(x)) for x in panel.weights["beta"][t]]
                       + [repr(float(x)) for x in panel.weights["gamma"][t]])


def cmd_combine(cfg: dict, out: Outputs) -> None:
    panels = _stage("read", engine.read_panel_csv, _need_input(cfg))
    plan = _stage("plan", plan_from, {**cfg, "models": "EWMA"})
    combined = {}
    for a in sorted(panels):
        p = panels[a]
        _stage("combine", plan.check_combination, len(p))
        combined[a] = _stage("combine", engine.run_combination, p, plan)
        _write_weights(combined[a], out.path(f"weights_{a:g}.csv"), p.model_ids)
    engine.write_panel_csv([combined[a] for a in sorted(combined)], out.path("combined.csv"))
    out.manifest("combine", cfg)


def _mcs_flags(panel: engine.ForecastPanel, seed: int) -> dict:
    losses = np.column_stack([
        bt.al_log_score_series(panel.realized, panel.var[:, j], panel.es[:, j], panel.alpha)
        for j in range(len(panel.model_ids))])
    in75, pvals, _ = bt.model_confidence_set(losses, 0.75, seed=seed,
                                             model_ids=panel.model_ids)
    in90, _, _ = bt.model_confidence_set(losses, 0.90, seed=seed, model_ids=panel.model_ids)
    if not in75 <= in90:
        raise InvariantError("75% confidence set is not inside the 90% set", state={})
    return {m: (m in in75, m in in90, pvals[m]) for m in panel.model_ids}


def cmd_backtest(cfg: dict, out: Outputs) -> None:
    panels = _stage("read", engine.read_panel_csv, _need_input(cfg))
    reports = []
    for a in sorted(panels):
        p = panels[a]
        if cfg["eval_tail"] > len(p):
            raise StageError("backtest", InputError(
                f"eval tail {cfg['eval_tail']} exceeds the {len(p)} panel rows at alpha {a}"))
        p = p.tail(cfg["eval_tail"])
        mcs = _stage("mcs", _mcs_flags, p, cfg["seed"]) if len(p.model_ids) > 1 else {}
        for j, mid in enumerate(p.model_ids):
            rep = _stage("backtest", bt.backtest_model, mid, p.realized, p.var[:, j],
                         p.es[:, j], a, engine.model_es_level(mid, a))
            if mid in mcs:
                m75, m90, pv = mcs[mid]
                rep = bt.BacktestReport(**{**asdict(rep), "mcs75": m75, "mcs90": m90,
                                           "mcs_p": pv})
            reports.append(rep)
        if cfg["emit_plot_data"]:
            for j, mid in enumerate(p.model_ids):
                with open(out.path(f"plot_{mid}_{a:g}.csv"), "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["timestamp", "realized", "var", "es"])
                    for t in range(len(p)):
                        w.writerow([engine._ts_str(p.timestamps[t]), repr(float(p.realized[t])),
                                    repr(float(p.var[t, j])), repr(float(p.es[t, j]))])
            weights = Path(cfg["input"]).with_name(f"weights_{a:g}.csv")
            if weights.exists():
                rows = weights.read_text().splitlines()
                keep = rows[:1] + rows[1:][-len(p):]
                out.path(f"plot_weights_{a:g}.csv").write_text("\n".join(keep) + "\n")
    bt.write_reports_csv(reports, out.path("backtest.csv"))
    bt.write_reports_json(reports, out.path("backtest.json"))
    out.manifest("backtest", cfg)


SIM_COLUMNS = [f.name for f in fields(engine.SimulationRow)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "ACCEPT" if v else "REJECT"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def cmd_simulate(cfg: dict, out: Outputs) -> None:
    for rep in range(cfg["reps"]):
        seed = cfg["seed"] + rep
        res = _stage("simulate", engine.run_simulation_study, seed)
        name = f"simulation_{rep}.csv"
        with open(out.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SIM_COLUMNS)
            for row in res.rows:
                w.writerow([_fmt(getattr(row, c)) for c in SIM_COLUMNS])
        if cfg["emit_plot_data"]:
            engine.write_panel_csv(res.panel, out.path(f"simulation_panel_{rep}.csv"))
        out.manifest("simulate", {**cfg, "seed": seed, "reps": 1},
                     name=f"manifest_{rep}.json", summary=name)


def cmd_report(cfg: dict, out: Outputs) -> None:
    path = _need_input(cfg)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    wanted = [c for c in header if c in {
        "model_id", "alpha", "vrate", "vratio", "uc_p", "cc_p", "dq1_p", "dq4_p", "qlf",
        "al_score", "mcs75", "mcs90", "dq4_accept", "qlf_rank", "es_rate", "es_ratio",
        "es_dq4_accept", "es_qlf", "es_qlf_rank"}]
    idx = [header.index(c) for c in wanted]

    def cell(s):
        try:
            return f"{float(s):.4f}"
        except ValueError:
            return s

    table = [wanted] + [[cell(r[i]) for i in idx] for r in body]
    widths = [max(len(r[k]) for r in table) for k in range(len(wanted))]
    text = "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in table) + "\n"
    sys.stdout.write(text)
    out.path("report.txt").write_text(text)
    out.manifest("report", cfg, name="report_manifest.json")


HANDLERS = {"ingest": cmd_ingest, "forecast": cmd_forecast, "combine": cmd_combine,
            "backtest": cmd_backtest, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = resolve_config(args)
        out = Outputs(Path(cfg["output"]))
        HANDLERS[args.command](cfg, out)
        return 0
    except StageError as exc:
        code = 2 if isinstance(exc.exc, InvariantError) else 1
        print(f"tailrisk {args.command}: stage {exc.stage} failed: {exc.exc}", file=sys.stderr)
    except InvariantError as exc:
        code = 2
        print(f"tailrisk {args.command}: internal invariant violated: {exc}", file=sys.stderr)
    except (TailRiskError, OSError, ValueError) as exc:
        code = 1
        print(f"tailrisk {args.command}: {exc}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - report as internal failure
        code = 2
        print(f"tailrisk {args.command}: internal error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
    if out is not None:
        out.cleanup()
    return code


if __name__ == "__main__":
    sys.exit(main())
