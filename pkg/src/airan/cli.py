"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from ._runtime import tune_allocator
from .agent import SACAgent
from .config import Config, describe_keys, load_config
from .errors import ConfigError, NonFiniteError, TraceFormatError, TrainingDiverged
from .forecaster import SpikeAwareLSTM, evaluate, fit_forecaster, persistence_metrics
from .nn import file_digest
from .orchestrator import (evaluate_policies, load_scenario, series_digest, train_agent,
                           write_manifest)
from .policies import POLICY_KINDS
from .traces import SYNTH_KINDS, synth_trace, write_trace

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON (or TOML on Python >= 3.11) config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key; repeatable, wins over --config")
    p.add_argument("--seed", type=int, help="root seed (same as --set run.seed=N)")
    p.add_argument("--out", help="output directory (same as --set run.out_dir=DIR)")


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys (section.key = default):\n" + describe_keys()
    parser = _Parser(prog="airan", description=__doc__.splitlines()[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter, epilog=epilog)
    parser.add_argument("--version", action="version", version=f"airan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-forecaster", help="train the spike-aware LSTM on trace files",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=epilog)
    _common(p)
    p.add_argument("--train", nargs="+", required=True, help="training trace file(s)")
    p.add_argument("--test", required=True, help="held-out trace file")
    p.add_argument("--epochs", type=int, help="override forecaster.epochs")

    p = sub.add_parser("train-agent", help="train the SAC orchestrator",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=epilog)
    _common(p)
    p.add_argument("--forecaster", help="forecaster checkpoint (or run.forecaster_checkpoint)")
    p.add_argument("--train", nargs="+", help="training trace file(s); default: synthetic run.scenario")
    p.add_argument("--test", help="held-out trace file")
    p.add_argument("--scenario", choices=SYNTH_KINDS, help="synthetic scenario kind")
    p.add_argument("--episodes", type=int, help="override run.episodes")
    p.add_argument("--steps", type=int, help="override env.steps_per_episode")
    p.add_argument("--record-kpi", help="record the KPI stream to this file")
    p.add_argument("--replay-kpi", help="drive the run from a recorded KPI stream")

    p = sub.add_parser("evaluate", help="compare SAC against the static baselines on the held-out trace",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=epilog)
    _common(p)
    p.add_argument("--forecaster", help="forecaster checkpoint (or run.forecaster_checkpoint)")
    p.add_argument("--agent", help="SAC checkpoint, or a train-agent output directory (uses run.eval_checkpoint)")
    p.add_argument("--policy", choices=POLICY_KINDS + ("all",), help="restrict to one policy")
    p.add_argument("--train", nargs="+", help="training trace file(s) (scenario identity only)")
    p.add_argument("--test", help="held-out trace file")
    p.add_argument("--scenario", choices=SYNTH_KINDS, help="synthetic scenario kind")
    p.add_argument("--steps", type=int, help="override env.steps_per_episode")
    p.add_argument("--record-kpi", help="record the KPI stream to this file")
    p.add_argument("--replay-kpi", help="drive the run from a recorded KPI stream")

    p = sub.add_parser("synth", help="write a synthetic RNTI trace")
    p.add_argument("--kind", required=True, help=f"one of {', '.join(SYNTH_KINDS)}")
    p.add_argument("--n", type=int, required=True, help="number of steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--period", type=int, default=96, help="steps per day")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _resolve(args) -> Config:
    overrides = list(args.overrides)
    mapping = [("seed", "run.seed"), ("out", "run.out_dir"), ("epochs", "forecaster.epochs"),
               ("episodes", "run.episodes"), ("steps", "env.steps_per_episode"), ("scenario", "run.scenario"),
               ("forecaster", "run.forecaster_checkpoint"), ("agent", "run.agent_checkpoint"),
               ("policy", "run.policy"), ("test", "run.test_trace")]
    for attr, key in mapping:
        val = getattr(args, attr, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    train = getattr(args, "train", None)
    if train:
        overrides.append("run.train_traces=" + json.dumps(list(train)))
    return load_config(args.config, overrides)


def _require(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _load_forecaster(cfg: Config):
    path = _require(cfg.run.forecaster_checkpoint, "forecaster checkpoint (--forecaster)")
    return SpikeAwareLSTM.load(path), path


# ----------------------------------------------------------------- commands
def cmd_train_forecaster(args) -> int:
    cfg = _resolve(args)
    for p in cfg.run.train_traces:
        _require(p, "training trace")
    _require(cfg.run.test_trace, "test trace")
    scenario = load_scenario(cfg.run)
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "forecaster.npz"
    model, history, data = fit_forecaster(scenario.train_series, scenario.test_series, cfg.forecaster,
                                          checkpoint=ckpt)
    summary = {"model": evaluate(model, data.test), "persistence": persistence_metrics(data.scaler, data.test),
               "final_train_loss": history.final_loss, "epochs": cfg.forecaster.epochs}
    (out / "forecaster_eval.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    traces = {p: series_digest(s) for p, s in zip(cfg.run.train_traces, scenario.train_series)}
    traces[cfg.run.test_trace] = series_digest(scenario.test_series)
    write_manifest(out, cfg, "train-forecaster", traces, {"forecaster": ckpt})
    m = summary["model"]
    print(f"test mse {m['mse']:.6g} (persistence {summary['persistence']['mse']:.6g})")
    print(f"spike precision {m['spike_precision']:.3f} recall {m['spike_recall']:.3f} f1 {m['spike_f1']:.3f}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_train_agent(args) -> int:
    cfg = _resolve(args)
    forecaster, fpath = _load_forecaster(cfg)
    scenario = load_scenario(cfg.run)
    out = Path(cfg.run.out_dir)
    replay = _require(args.replay_kpi, "KPI recording") if args.replay_kpi else None

    def progress(row):
        if (row["episode"] + 1) % 50 == 0 or row["episode"] == 0:
            print(f"episode {row['episode'] + 1}/{cfg.run.episodes} reward {row['reward_mean']:.4f} "
                  f"ran {row['completion_ran_pct']:.1f}% ai {row['completion_ai_pct']:.1f}%", flush=True)

    result = train_agent(cfg, scenario, forecaster, out, record=args.record_kpi, replay=replay, progress=progress)
    traces = {f"train[{k}]": series_digest(s) for k, s in enumerate(scenario.train_series)}
    artifacts = {"forecaster": fpath, "curves": out / "curves.csv", **result.checkpoints}
    if args.record_kpi:
        artifacts["kpi_stream"] = Path(args.record_kpi)
    write_manifest(out, cfg, "train-agent", traces, artifacts, {"best_episode": result.best_episode})
    print(f"checkpoints {result.checkpoints['sac_final']} {result.checkpoints['sac_best']}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    forecaster, fpath = _load_forecaster(cfg)
    kinds = POLICY_KINDS if cfg.run.policy == "all" else (cfg.run.policy,)
    agent, apath = None, None
    if "sac" in kinds:
        apath = cfg.run.agent_checkpoint
        if apath is not None and Path(apath).is_dir():
            apath = str(Path(apath) / f"sac_{cfg.run.eval_checkpoint}.npz")
        apath = _require(apath, "SAC checkpoint (--agent)")
        agent, _ = SACAgent.load(apath)
        if agent.state_dim != cfg.env.state_dim:
            raise ConfigError(f"agent expects state dim {agent.state_dim}, env.H gives {cfg.env.state_dim}")
    scenario = load_scenario(cfg.run)
    out = Path(cfg.run.out_dir)
    replay = _require(args.replay_kpi, "KPI recording") if args.replay_kpi else None
    res = evaluate_policies(cfg, scenario, forecaster, agent, kinds, out, record=args.record_kpi, replay=replay)
    artifacts = {"forecaster": fpath, "summary": out / "summary.json"}
    if apath is not None:
        artifacts["agent"] = apath
    artifacts.update({f"telemetry_{k}": out / f"telemetry_{k}.csv" for k in kinds})
    write_manifest(out, cfg, "evaluate", {"test": series_digest(scenario.test_series),
                                          "episode": res.summary["trace_hash"]}, artifacts)
    print(res.table)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown kind {args.kind!r}; expected one of {', '.join(SYNTH_KINDS)}")
    series = synth_trace(args.kind, args.n, args.seed, period=args.period)
    path = write_trace(args.out, series)
    # sidecar manifest: the output directory is shared with other traces
    doc = {"command": "synth", "package_version": __version__, "argv": sys.argv, "kind": args.kind,
           "n": args.n, "seed": args.seed, "period": args.period,
           "trace": {"path": str(path), "sha256": file_digest(path), "series_sha256": series_digest(series)}}
    side = path.with_name(path.name + ".manifest.json")
    side.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(path)
    return EXIT_OK


COMMANDS = {"train-forecaster": cmd_train_forecaster, "train-agent": cmd_train_agent,
            "evaluate": cmd_evaluate, "synth": cmd_synth}


def main(argv=None) -> int:
    tune_allocator()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"airan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, TraceFormatError, FileNotFoundError) as exc:
        print(f"airan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteError) as exc:
        print(f"airan: training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report any other failure as a runtime error
        print(f"airan: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
