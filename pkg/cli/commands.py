"""
Command-line front end.

    run        execute a guided (or --baseline random) campaign
    calibrate  derive the similarity threshold from a fault-free run
    replay     re-execute a recorded campaign and diff it against its recording
    report     distinct-state curves and guided-vs-baseline statistics
    render     DOT snapshot of the timeline at one recorded step
"""

import argparse
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import wraps
from pathlib import Path
from typing import Any, Dict, List, Optional

from config import Config
from models.errors import (
    CheckpointError, ConfigError, FuzzerError, ReplayDivergenceError, VersionMismatchError,
)
from harness.campaign import (
    Campaign, CampaignConfig, CampaignResult, collect_steady_summaries, load_config, parse_config,
)
from harness.replay import load_recording, replay
from mediator.novelty import calibrate, coinciding_fraction
from sut.registry import RAFT_REGISTRY
from utils.dot_export import write_dot
from utils.reporting import build_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_REPLAY = 3
EXIT_FINDINGS = 4


def _result(success: bool, data: Optional[Dict[str, Any]] = None, error: str = None,
            source: str = "cli") -> Dict[str, Any]:
    return {"success": success, "data": data or {}, "error": error, "source": source}


def _emit(result: Dict[str, Any]):
    print(json.dumps(result, sort_keys=True))


def _guarded(command):
    """Convert library exceptions into exit codes and a printed error result"""

    @wraps(command)
    def wrapper(*args, **kwargs) -> int:
        source = command.__name__
        try:
            return command(*args, **kwargs)
        except (ConfigError, CheckpointError) as exc:
            data = {"key": exc.key} if isinstance(exc, ConfigError) and exc.key else {}
            _emit(_result(False, data, str(exc), source))
            return EXIT_CONFIG
        except ReplayDivergenceError as exc:
            _emit(_result(False, {"step": exc.step, "detail": exc.detail}, str(exc), source))
            return EXIT_REPLAY
        except VersionMismatchError as exc:
            _emit(_result(False, None, str(exc), source))
            return EXIT_REPLAY
        except FuzzerError as exc:
            logger.exception("%s failed", source)
            _emit(_result(False, None, str(exc), source))
            return EXIT_FAILURE

    return wrapper


def _campaign_config(config_path: Optional[str], **overrides) -> CampaignConfig:
    cfg = load_config(config_path) if config_path else CampaignConfig()
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return cfg
    return parse_config({**cfg.model_dump(mode="json"), **updates})


def _summary(result: CampaignResult, out_dir) -> Dict[str, Any]:
    return {
        "steps": len(result.steps),
        "distinct_states": result.distinct_states,
        "findings": len(result.findings),
        "out_dir": str(out_dir) if out_dir else None,
    }


def _run_one(cfg: CampaignConfig, baseline: bool, out_dir, resume: bool) -> CampaignResult:
    return Campaign(cfg, baseline=baseline, out_dir=out_dir).run(resume=resume)


@_guarded
def cmd_run(config_path: Optional[str] = None, seed: Optional[int] = None, budget: Optional[int] = None,
            out_dir: Optional[str] = None, baseline: bool = False, replicas: int = 1,
            resume: Optional[str] = None) -> int:
    if resume:
        cfg, baseline, _ = load_recording(resume)
        results = [(resume, _run_one(cfg, baseline, resume, True))]
    else:
        cfg = _campaign_config(config_path, seed=seed, budget_steps=budget)
        out_dir = Path(out_dir or Config.DEFAULT_OUT_DIR)
        if replicas < 1:
            raise ConfigError("--replicas must be at least 1", key="replicas")
        if replicas == 1:
            results = [(out_dir, _run_one(cfg, baseline, out_dir, False))]
        else:
            configs = [cfg.model_copy(update={"seed": cfg.seed + i}) for i in range(replicas)]
            dirs = [out_dir / f"seed-{c.seed}" for c in configs]
            with ThreadPoolExecutor(max_workers=replicas) as pool:
                done = list(pool.map(lambda c, d: _run_one(c, baseline, d, False), configs, dirs))
            results = list(zip(dirs, done))

    for directory, result in results:
        data = _summary(result, directory)
        data["agent"] = "random" if baseline else "guided"
        _emit(_result(True, data, source="cmd_run"))
    if any(result.findings for _, result in results):
        return EXIT_FINDINGS
    return EXIT_OK


@_guarded
def cmd_calibrate(config_path: Optional[str] = None, windows: int = 50, write: bool = False) -> int:
    cfg = _campaign_config(config_path)
    summaries = collect_steady_summaries(cfg, windows)
    epsilon = calibrate(summaries, cfg.minhash_k, cfg.hash_seed)
    fraction = coinciding_fraction(summaries, epsilon, cfg.minhash_k, cfg.hash_seed)
    if write:
        if not config_path:
            raise ConfigError("--write needs --config", key="config")
        doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        doc["epsilon"] = epsilon
        Path(config_path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
        logger.info("epsilon %.2f written to %s", epsilon, config_path)
    _emit(_result(True, {"epsilon": epsilon, "coinciding": fraction, "windows": windows},
                  source="cmd_calibrate"))
    return EXIT_OK


@_guarded
def cmd_replay(campaign_dir: str) -> int:
    result = replay(campaign_dir)
    _emit(_result(True, _summary(result, campaign_dir), source="cmd_replay"))
    return EXIT_OK


@_guarded
def cmd_report(campaign_dirs: List[str], out_dir: Optional[str] = None) -> int:
    out_dir = out_dir or str(Path(Config.DEFAULT_OUT_DIR) / "report")
    stats = build_report(campaign_dirs, out_dir)
    _emit(_result(True, {"out_dir": out_dir, **stats}, source="cmd_report"))
    return EXIT_OK


@_guarded
def cmd_render(campaign_dir: str, step: int, out_path: Optional[str] = None) -> int:
    cfg, baseline, steps = load_recording(campaign_dir)
    if not 0 <= step < len(steps):
        raise ConfigError(f"step {step} outside the recorded 0..{len(steps) - 1}", key="step")
    plan = [str(a) for a in steps["action"].tolist()[: step + 1]]
    cfg = cfg.model_copy(update={"budget_steps": step + 1})
    campaign = Campaign(cfg, baseline=baseline, fault_plan=plan, retire_graphs=False)
    campaign.run()
    out_path = out_path or str(Path(campaign_dir) / f"timeline-step-{step}.dot")
    write_dot(out_path, campaign.last_graph, RAFT_REGISTRY)
    _emit(_result(True, {"step": step, "path": out_path, "vertices": len(campaign.last_graph.vertices())},
                  source="cmd_render"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causeway", description="Timeline-guided fault-schedule fuzzer")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a fuzzing campaign")
    run.add_argument("--config", help="campaign config (JSON)")
    run.add_argument("--seed", type=int)
    run.add_argument("--budget", type=int, help="total steps")
    run.add_argument("--out", help="campaign directory")
    run.add_argument("--baseline", action="store_true", help="uniform random fault selection")
    run.add_argument("--replicas", type=int, default=1, help="independent seeds run in parallel")
    run.add_argument("--resume", metavar="DIR", help="continue a checkpointed campaign")

    cal = sub.add_parser("calibrate", help="calibrate the similarity threshold")
    cal.add_argument("--config")
    cal.add_argument("--windows", type=int, default=50)
    cal.add_argument("--write", action="store_true", help="store the result in the config file")

    rep = sub.add_parser("replay", help="replay a recorded campaign")
    rep.add_argument("campaign_dir")

    report = sub.add_parser("report", help="compare campaigns")
    report.add_argument("campaign_dirs", nargs="*")
    report.add_argument("--out")

    render = sub.add_parser("render", help="write the timeline at a step as DOT")
    render.add_argument("campaign_dir")
    render.add_argument("--step", type=int, required=True)
    render.add_argument("--out")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.seed, args.budget, args.out, args.baseline, args.replicas, args.resume)
    if args.command == "calibrate":
        return cmd_calibrate(args.config, args.windows, args.write)
    if args.command == "replay":
        return cmd_replay(args.campaign_dir)
    if args.command == "report":
        return cmd_report(args.campaign_dirs, args.out)
    return cmd_render(args.campaign_dir, args.step, args.out)
