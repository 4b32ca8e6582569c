"""Command-line front end: estimate, simulate, placebo, oracle.

Exit codes: 0 success, 2 usage or input error, 1 runtime failure. Data goes
to files or stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import methods as fitting
from . import simlab
from .estimator import EstimatorConfig
from .inference import placebo_distribution
from .measures import SimplexWeights
from .ot_oracle import cdf_l2_sq, w1, w2_exact_1d
from .panelio import SchemaError, read_panel, read_samples

SCHEMA_VERSION = 1
SCENARIO_ALIASES = {
    "contamination": "contamination",
    "support": "support_gap",
    "support_gap": "support_gap",
    "bimodal": "bimodal_poisson",
    "bimodal_poisson": "bimodal_poisson",
    "multivariate": "multivariate",
}


class UsageError(Exception):
    pass


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclasses.dataclass
class RunManifest:
    subcommand: str
    config: dict
    inputs: dict
    seed: int | None
    version: str = __version__
    started: str = dataclasses.field(default_factory=_now)
    finished: str | None = None
    schema_version: int = SCHEMA_VERSION
    timing: list | None = None

    def close(self) -> dict:
        self.finished = _now()
        return dataclasses.asdict(self)


def _load_config(path, seed: int | None) -> EstimatorConfig:
    d = {}
    if path:
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise UsageError(f"config {path} must hold a JSON object")
    if seed is not None:
        d["seed"] = seed
    try:
        return EstimatorConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None


def _load_panel(args):
    if not Path(args.data).is_file():
        raise UsageError(f"data file not found: {args.data}")
    order = args.period_order.split(",") if args.period_order else None
    try:
        return read_panel(args.data, args.treated, args.cutoff, order)
    except SchemaError as exc:
        raise UsageError(str(exc)) from None


def _write_json(payload: dict, out) -> None:
    text = json.dumps(payload, indent=2, sort_keys=False)
    if out in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(out).write_text(text + "\n")


def cmd_estimate(args) -> int:
    config = _load_config(args.config, args.seed)
    panel = _load_panel(args)
    manifest = RunManifest("estimate", config.to_dict(), {"data": _digest(args.data)}, config.seed)
    fit = fitting.fit(panel, args.method, config, jobs=args.jobs)
    result = {
        "method": args.method,
        "treated": str(panel.treated),
        "donors": [str(u) for u in panel.donors],
        "pre_periods": [str(p) for p in panel.pre_periods],
        "per_period_weights": [w.tolist() for w in fit.per_period],
        "aggregated": fit.aggregated.tolist(),
    }
    if fit.report is not None:
        result["estimation"] = fit.report.to_dict()
    _write_json({"schema_version": SCHEMA_VERSION, "result": result, "manifest": manifest.close()}, args.out)
    return 0


def cmd_placebo(args) -> int:
    config = _load_config(args.config, args.seed)
    panel = _load_panel(args)
    manifest = RunManifest("placebo", config.to_dict(), {"data": _digest(args.data)}, config.seed)
    res = placebo_distribution(
        panel, args.method, config, exclude_treated=args.exclude_treated, jobs=args.jobs
    )
    result = {"method": args.method, "exclude_treated": args.exclude_treated, **res.to_dict()}
    _write_json({"schema_version": SCHEMA_VERSION, "result": result, "manifest": manifest.close()}, args.out)
    return 0


def cmd_oracle(args) -> int:
    for p in (args.a, args.b):
        if not Path(p).is_file():
            raise UsageError(f"sample file not found: {p}")
    try:
        a, b = read_samples(args.a), read_samples(args.b)
    except SchemaError as exc:
        raise UsageError(str(exc)) from None
    if a.dim != b.dim:
        raise UsageError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if args.metric != "w1" and a.dim != 1:
        raise UsageError(f"{args.metric} is defined for univariate samples only")
    if args.metric == "w1":
        value = w1(a, b)
    elif args.metric == "w2":
        value = w2_exact_1d(a, b).value
    else:
        value = cdf_l2_sq(a, b)
    print(f"{value:.12f}")
    return 0


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _sweep(scenario: str, args) -> tuple[str | None, list[float]]:
    eps, gam = _floats(args.eps), _floats(args.gamma)
    if scenario == "contamination":
        if gam:
            raise UsageError("--gamma applies to the support scenario only")
        return "epsilon", eps or [0.04]
    if scenario == "support_gap":
        if eps:
            raise UsageError("--eps applies to the contamination scenario only")
        return "gamma", gam or [0.0, 0.45, 0.9]
    if eps or gam:
        raise UsageError(f"scenario {scenario} takes no --eps/--gamma sweep")
    return None, [None]


def _plot_extras(report: simlab.McReport, grid_size: int) -> dict:
    """PMF overlay (univariate) or scatter sample (bivariate) from replication 0."""
    rep = report.replications[0]
    if not rep.aggregated:
        return {}
    panel, _ = simlab.generate(dataclasses.replace(report.spec, seed=rep.seed))
    fits = {m: SimplexWeights(w) for m, w in rep.aggregated.items()}
    if panel.dim == 1:
        return {"pmf_overlay": simlab.pmf_overlay(panel, fits, grid_size=grid_size)}
    first = next(iter(fits.values()))
    return {"scatter": simlab.scatter_sample(panel, first, seed=rep.seed)}


def cmd_simulate(args) -> int:
    if args.seed is None:
        raise UsageError("simulate needs --seed (runs are never seeded from the clock)")
    scenario = SCENARIO_ALIASES[args.scenario]
    config = _load_config(args.config, args.seed)
    param, values = _sweep(scenario, args)
    methods = tuple(args.methods.split(",")) if args.methods else None
    base = {"scenario": scenario, "n_micro": args.n_micro, "t0": args.t0}
    if scenario == "bimodal_poisson" and args.n_micro is None:
        base["n_micro"] = 2000
    if scenario == "multivariate" and args.n_micro is None:
        base["n_micro"] = 1000
    base = {k: v for k, v in base.items() if v is not None}
    runs, reports = [], []
    for v in values:
        kw = dict(base)
        if param is not None:
            kw[param] = v
        try:
            spec = simlab.DgpSpec(**kw)
        except ValueError as exc:
            raise UsageError(f"bad scenario settings: {exc}") from None
        rep = simlab.run_monte_carlo(
            spec, methods, args.nsim, config, master_seed=args.seed, jobs=args.jobs, grid_size=args.grid
        )
        reports.append(rep)
        runs.append({"parameter": param, "value": v, "report": rep.to_dict(include_timing=False)})
    manifest = RunManifest("simulate", config.to_dict(), {}, args.seed)
    # wall-clock timings live with the timestamps, outside the reproducible payload
    manifest.timing = [
        {m: [r.seconds.get(m) for r in rep.replications] for m in rep.methods} for rep in reports
    ]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario,
        "sweep_parameter": param,
        "runs": runs,
        "plot": _plot_extras(reports[-1], args.grid),
        "manifest": manifest.close(),
    }
    if args.csv:
        out = Path(args.csv)
        out.mkdir(parents=True, exist_ok=True)
        for v, rep in zip(values, reports):
            name = "table.csv" if param is None else f"table_{param}_{v:g}.csv"
            simlab.write_table(rep, out / name)
    if args.plot_dir:
        emit_plot_data(payload, args.plot_dir)
    _write_json(payload, args.out)
    return 0


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def emit_plot_data(report: dict, out_dir) -> list[Path]:
    """Tidy CSV series from a simulate report; no rendering."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create plot directory {out}: {exc}") from None
    written = []
    param = report.get("sweep_parameter")
    runs = report["runs"]
    if param == "epsilon":
        rows = [
            [r["value"], s["rmse"], m]
            for r in runs
            for m, s in r["report"]["summary"].items()
            if "rmse" in s
        ]
        p = out / "rmse_vs_eps.csv"
        _write_csv(p, ["x", "y", "series"], rows)
        written.append(p)
    if param == "gamma":
        var_rows, w_rows = [], []
        for r in runs:
            for m, s in r["report"]["summary"].items():
                if "rmse" not in s:
                    continue
                var_rows.append([r["value"], float(np.mean(s["aggregated_var"])), m])
                for j, w in enumerate(s["mean_weights"]):
                    w_rows.append([r["value"], w, m, j + 1])
        for name, header, rows in (
            ("var_vs_gamma.csv", ["x", "y", "series"], var_rows),
            ("weights_vs_gamma.csv", ["x", "y", "series", "donor"], w_rows),
        ):
            _write_csv(out / name, header, rows)
            written.append(out / name)
    plot = report.get("plot", {})
    if "pmf_overlay" in plot:
        names = {"target": "target_mass", "wgan": "wgan_mass", "w2quantile": "w2q_mass", "cdfl2": "cdfl2_mass"}
        table = plot["pmf_overlay"]
        cols = [c for c in table[0] if c != "value"]
        header = ["value"] + [names.get(c[: -len("_mass")], c) for c in cols]
        p = out / "pmf_overlay.csv"
        _write_csv(p, header, [[row["value"], *[row[c] for c in cols]] for row in table])
        written.append(p)
    if "scatter" in plot:
        pts = plot["scatter"]
        dims = [k for k in pts[0] if k != "series"]
        p = out / "scatter.csv"
        _write_csv(p, [*dims, "series"], [[*[r[k] for k in dims], r["series"]] for r in pts])
        written.append(p)
    return written


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wsynth", description="Distributional synthetic controls via Wasserstein-1.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def panel_args(sp):
        sp.add_argument("--data", required=True, help="long CSV: unit,period,v1[,v2...]")
        sp.add_argument("--treated", required=True)
        sp.add_argument("--cutoff", required=True, help="last pre-treatment period label")
        sp.add_argument("--period-order", help="comma-separated period labels in time order")
        sp.add_argument("--method", choices=fitting.METHODS, default="wgan")
        sp.add_argument("--config", help="JSON with EstimatorConfig fields")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out", help="report path (stdout if omitted)")

    est = sub.add_parser("estimate", help="fit donor weights for the treated unit")
    panel_args(est)
    est.set_defaults(func=cmd_estimate)

    pl = sub.add_parser("placebo", help="permutation test of no effect")
    panel_args(pl)
    pl.add_argument("--exclude-treated", action="store_true",
                    help="drop the real treated unit from placebo donor pools")
    pl.set_defaults(func=cmd_placebo)

    sim = sub.add_parser("simulate", help="Monte Carlo study of one design")
    sim.add_argument("--scenario", required=True, choices=sorted(SCENARIO_ALIASES))
    sim.add_argument("--nsim", type=int, default=20)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--eps", help="contamination rates, comma-separated")
    sim.add_argument("--gamma", help="gap parameters, comma-separated")
    sim.add_argument("--n-micro", type=int)
    sim.add_argument("--t0", type=int)
    sim.add_argument("--methods", help="comma-separated subset of " + ",".join(fitting.METHODS))
    sim.add_argument("--grid", type=int, default=512, help="quantile grid size")
    sim.add_argument("--config")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--out", help="report path (stdout if omitted)")
    sim.add_argument("--csv", help="directory for per-period tables")
    sim.add_argument("--plot-dir", help="directory for plot-data CSVs")
    sim.set_defaults(func=cmd_simulate)

    orc = sub.add_parser("oracle", help="exact distance between two sample files")
    orc.add_argument("--metric", choices=("w1", "w2", "cdfl2"), required=True)
    orc.add_argument("--a", required=True)
    orc.add_argument("--b", required=True)
    orc.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "jobs", 1) < 1:
        print("wsynth: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    if getattr(args, "nsim", 1) < 1:
        print("wsynth: error: --nsim must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wsynth: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"wsynth: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
