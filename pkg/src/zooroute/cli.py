"""Operator command line: simulate, replay, sweep, serve, report, calibrate-guessing.

Exit codes: 0 success, 1 usage or config error, 2 SLA-infeasible configuration.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .baselines import calibrate_guessing
from .core import SlaParams
from .metrics import MetricStream, compliance_report
from .simulator import (
    ExperimentTrace,
    ScenarioConfig,
    build_zoo,
    canonical_scenario,
    feasible_alpha,
    generate_trace,
    run_experiment,
    sweep,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2

SWEEP_COLUMNS = [
    "alpha",
    "v",
    "c",
    "seed",
    "mean_cost_mj",
    "mean_satisfaction",
    "time_to_sla",
    "exploration_count",
    "exploration_energy_share",
    "queue_over_t",
    "max_queue",
]

REPORT_COLUMNS_FIXED = ["policy", "seed", "mean_cost_mj", "mean_satisfaction"]


class CliError(Exception):
    """Usage or configuration problem; maps to exit code 1."""


class InfeasibleError(Exception):
    """SLA target no model can meet; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that
        raise CliError(message)


def _parse_floats(raw: str) -> list[float]:
    try:
        return [float(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(f"expected a comma-separated float list, got {raw!r}") from exc


def _parse_ints(raw: str) -> list[int]:
    try:
        return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(f"expected a comma-separated int list, got {raw!r}") from exc


def load_scenario(path: Optional[str]) -> ScenarioConfig:
    """Scenario from a JSON file, or the built-in canonical one."""
    if path is None:
        return canonical_scenario()
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read scenario {path}: {exc}") from exc
    try:
        sla = SlaParams(**raw.pop("sla"))
        if "base_costs_mj" in raw:
            raw["base_costs_j"] = [c * 1e6 for c in raw.pop("base_costs_mj")]
        for key in ("model_names", "base_costs_j", "costs_per_token_j", "target_rates"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return ScenarioConfig(sla=sla, **raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid scenario {path}: {exc}") from exc


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    sla = config.sla
    try:
        sla = SlaParams(
            alpha=args.alpha if args.alpha is not None else sla.alpha,
            v=args.v if args.v is not None else sla.v,
            c=args.c if args.c is not None else sla.c,
        )
        config = replace(config, sla=sla)
        if getattr(args, "t_horizon", None) is not None:
            config = replace(config, t_horizon=args.t_horizon)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    return config


def _check_feasible(config: ScenarioConfig) -> None:
    best = feasible_alpha(build_zoo(config))
    if config.sla.alpha > best:
        raise InfeasibleError(
            f"alpha={config.sla.alpha} exceeds the best model rate {best:.4f}"
        )


def _summary_payload(stream: MetricStream, policy: str, config: ScenarioConfig) -> dict:
    payload = stream.summary()
    payload.update(
        {
            "policy": policy,
            "seed": config.seed,
            "alpha": config.sla.alpha,
            "v": config.sla.v,
            "c": config.sla.c,
            "metadata": {
                "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat()
            },
        }
    )
    return payload


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _slug(policy: str) -> str:
    return policy.replace(":", "-").replace(".", "p")


def cmd_simulate(args) -> int:
    config = _apply_overrides(load_scenario(args.scenario), args)
    _check_feasible(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grace = args.grace
    for seed in _parse_ints(args.seeds):
        cfg = replace(config, seed=seed)
        zoo = build_zoo(cfg)
        trace = generate_trace(cfg, zoo)
        if args.save_trace:
            trace.save(out / f"trace_seed{seed}.jsonl")
        stream = run_experiment(trace, args.policy, cfg.sla, seed, zoo)
        slug = _slug(args.policy)
        stream.to_csv(out / f"steps_{slug}_seed{seed}.csv")
        _write_json(out / f"summary_{slug}_seed{seed}.json", _summary_payload(stream, args.policy, cfg))
        report = compliance_report(stream, cfg.sla, min(grace, len(stream)))
        _write_json(out / f"compliance_{slug}_seed{seed}.json", report)
        print(
            f"seed={seed} policy={args.policy} "
            f"cost={stream.mean_cost_j / 1e6:.4f}MJ sat={stream.running_satisfaction:.4f} "
            f"compliant={report['compliant']}"
        )
    return EXIT_OK


def cmd_replay(args) -> int:
    config = _apply_overrides(load_scenario(args.scenario), args)
    try:
        trace = ExperimentTrace.load(args.trace)
    except (OSError, ValueError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot load trace {args.trace}: {exc}") from exc
    zoo = build_zoo(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        stream = run_experiment(trace, args.policy, config.sla, args.seed, zoo)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    slug = _slug(args.policy)
    stream.to_csv(out / f"steps_{slug}_seed{args.seed}.csv")
    cfg = replace(config, seed=args.seed)
    _write_json(out / f"summary_{slug}_seed{args.seed}.json", _summary_payload(stream, args.policy, cfg))
    print(f"replayed {len(trace)} requests with {args.policy}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_scenario(args.scenario)
    if args.t_horizon is not None:
        config = replace(config, t_horizon=args.t_horizon)
    rows = sweep(
        config,
        alphas=_parse_floats(args.alphas),
        vs=_parse_floats(args.vs),
        cs=_parse_floats(args.cs),
        seeds=_parse_ints(args.seeds),
        jobs=args.jobs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([
                "" if row[col] is None else repr(row[col]) if isinstance(row[col], float) else row[col]
                for col in SWEEP_COLUMNS
            ])
    print(f"wrote {len(rows)} sweep cells to {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = []
    for pattern in args.inputs:
        try:
            summaries.append(json.loads(Path(pattern).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read summary {pattern}: {exc}") from exc
    if not summaries:
        raise CliError("report needs at least one summary file")
    n_models = max(len(s.get("call_ratios", [])) for s in summaries)
    columns = REPORT_COLUMNS_FIXED + [f"ratio_{i}" for i in range(n_models)] + [
        "exploration_energy_share",
        "sla_ok",
    ]
    rows = []
    for s in summaries:
        ratios = s.get("call_ratios", [])
        rows.append(
            [
                s.get("policy", "?"),
                s.get("seed", ""),
                s["mean_cost_mj"],
                s["mean_satisfaction"],
                *[ratios[i] if i < len(ratios) else "" for i in range(n_models)],
                s.get("exploration_energy_share", 0.0),
                s["mean_satisfaction"] >= args.alpha,
            ]
        )
    rows.sort(key=lambda r: (str(r[0]), str(r[1])))
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            writer.writerows(rows)
    widths = [max(len(str(c)), *(len(_fmt(r[i])) for r in rows)) for i, c in enumerate(columns)]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(_fmt(v).ljust(w) for v, w in zip(r, widths)))
    return EXIT_OK


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def cmd_serve(args) -> int:
    from .service import load_service_config, serve

    try:
        config = load_service_config(args.config)
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"invalid service config: {exc}") from exc
    if args.port is not None or args.data_dir is not None:
        config = replace(
            config,
            port=args.port if args.port is not None else config.port,
            data_dir=args.data_dir if args.data_dir is not None else config.data_dir,
        )
    serve(config)
    return EXIT_OK


def cmd_calibrate_guessing(args) -> int:
    accuracies = _parse_floats(args.accuracies)
    try:
        policy = calibrate_guessing(accuracies, args.alpha)
    except ValueError as exc:
        if "Alpha too high" in str(exc):
            raise InfeasibleError(str(exc)) from exc
        raise CliError(str(exc)) from exc
    print(
        json.dumps(
            {
                "probs": policy.probs.tolist(),
                "expected_accuracy": policy.expected_accuracy,
            },
            indent=2,
        )
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="zooroute", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_sla_overrides(p):
        p.add_argument("--alpha", type=float, default=None, help="SLA satisfaction target")
        p.add_argument("--v", type=float, default=None, help="cost/constraint trade-off weight")
        p.add_argument("--c", type=float, default=None, help="exploration scale")

    p = sub.add_parser("simulate", help="run a policy on a synthetic scenario")
    p.add_argument(
        "--config", "--scenario", dest="scenario", default=None,
        help="scenario JSON (default: canonical)",
    )
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", "--seeds", dest="seeds", default="42", help="comma-separated seeds")
    p.add_argument("--policy", default="adaptive")
    p.add_argument("--t-horizon", type=int, default=None, dest="t_horizon")
    p.add_argument("--grace", type=int, default=2000, help="compliance grace period")
    p.add_argument("--no-save-trace", dest="save_trace", action="store_false")
    add_sla_overrides(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="run a policy over a saved trace")
    p.add_argument("--trace", required=True)
    p.add_argument(
        "--config", "--scenario", dest="scenario", default=None,
        help="scenario JSON matching the trace's zoo",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--policy", default="adaptive")
    add_sla_overrides(p)
    p.set_defaults(func=cmd_replay, t_horizon=None)

    p = sub.add_parser("sweep", help="grid of runs over alpha, v, c, seeds")
    p.add_argument("--config", "--scenario", dest="scenario", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--alphas", default="0.66")
    p.add_argument("--vs", default="0.001")
    p.add_argument("--cs", default="0.1")
    p.add_argument("--seeds", default="42,43,44")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--t-horizon", type=int, default=None, dest="t_horizon")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="comparison table from summary JSON files")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--out", default=None, help="also write the table as CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="start the HTTP gateway")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--data-dir", default=None, dest="data_dir")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("calibrate-guessing", help="accuracy-calibrated mixing probabilities")
    p.add_argument("--accuracies", required=True, help="comma-separated per-model accuracies")
    p.add_argument("--alpha", type=float, required=True)
    p.set_defaults(func=cmd_calibrate_guessing)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
