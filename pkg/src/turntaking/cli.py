"""Command-line entry point: ``turntaking <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import AgentEntry, ExperimentConfig, load_config
from .core import BehaviorType
from .env import ConfigError, WorldStateError
from .experiments import (PHASE_EVAL, converged_placements, evaluate, load_prototypes, make_schedule,
                          phase_rng, placement_step_curve, run_pipeline, sample_roster, save_prototypes,
                          train_fusion, train_policy, train_prototypes)
from .fusion import FusionModel
from .placement import get_placement_policy
from .policy import save_policy
from .sim import play_game

log = logging.getLogger("turntaking")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.games is not None:
        changes["games"] = args.games
    if args.state is not None:
        changes["state"] = args.state
    if args.opponents:
        changes["roster"] = tuple(AgentEntry(BehaviorType.parse(x.strip()))
                                  for x in args.opponents.split(",") if x.strip())
    if args.eval_runs is not None:
        changes["eval_runs"] = args.eval_runs
    if args.eval_games is not None:
        changes["eval_games"] = args.eval_games
    if args.workers is not None:
        changes["workers"] = args.workers
    return cfg.replace(**changes) if changes else cfg


def _prototypes(cfg, out: Path):
    if (out / "prototype_passive.json").exists():
        return load_prototypes(out)
    log.info("no prototypes in %s, training them first", out)
    protos = train_prototypes(cfg)
    save_prototypes(protos, out)
    return protos


def _fusion(cfg, out: Path, protos):
    path = out / "fusion.json"
    if path.exists():
        return FusionModel.load(path)
    log.info("no fusion model in %s, training it first", out)
    fusion = train_fusion(cfg, protos)
    fusion.save(path)
    return fusion


def cmd_train_prototypes(cfg, out: Path) -> None:
    save_prototypes(train_prototypes(cfg), out)
    print(f"wrote prototypes to {out}")


def cmd_train_fusion(cfg, out: Path) -> None:
    fusion = train_fusion(cfg, _prototypes(cfg, out))
    fusion.save(out / "fusion.json")
    print(f"wrote {out / 'fusion.json'}")


def cmd_evaluate(cfg, out: Path) -> None:
    protos = _prototypes(cfg, out)
    report = evaluate(cfg, protos, _fusion(cfg, out, protos))
    report.write_csv(out / "metrics.csv")
    report.write_csv(out / "fused_metrics.csv", model="fused")
    for r in report.rows:
        print(f"{r.scenario:8s} {r.model:5s} {r.btype.label:10s} acc={r.accuracy:.3f} kl={r.kl:.4f}")


def cmd_train_policy(cfg, out: Path) -> None:
    protos = _prototypes(cfg, out)
    fusion = _fusion(cfg, out, protos)
    policy, curve = train_policy(cfg, protos, fusion, games_csv=out / "games.csv")
    curve.write_csv(out / "curve.csv")
    save_policy(policy, out / "policy.json", horizon=cfg.horizon, state=cfg.state,
                schedule=dataclasses.asdict(make_schedule(cfg)))
    placements = placement_step_curve(converged_placements(curve, cfg))
    placements.write_csv(out / "placements.csv")
    tail = curve.mean_return[-50:].mean()
    print(f"mean return over the last 50 games: {tail:.3f} (placement curve R^2 {placements.r2:.3f})")


def cmd_simulate(cfg, out: Path) -> None:
    """Play one game between the configured rule agents and draw the tower."""
    rng = phase_rng(cfg.seed, PHASE_EVAL, 999)
    specs = sample_roster(cfg.roster_types, rng, cfg)
    place = get_placement_policy(cfg.placement)

    def placing(world, size):
        p = place(world, size)
        where = "nowhere" if p is None else f"row {p.row}, col {p.start_col}"
        print(f"turn {world.step_index}: block of {size} -> {where}")
        return p

    res = play_game(cfg, specs, rng, placement_policy=placing)
    print(f"{res.steps} turns, {'collapsed' if res.collapsed else 'standing'}")
    print(res.world.render())


COMMANDS = {
    "train-prototypes": cmd_train_prototypes,
    "train-fusion": cmd_train_fusion,
    "train-policy": cmd_train_policy,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "pipeline": lambda cfg, out: run_pipeline(cfg, out),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="turntaking", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs", help="output / model directory (default: runs)")
    p.add_argument("--trials", type=int)
    p.add_argument("--games", type=int)
    p.add_argument("--state", choices=["behavior", "baseline"])
    p.add_argument("--opponents", help="comma-separated types, e.g. passive,aggressive or P,A,S")
    p.add_argument("--eval-runs", type=int)
    p.add_argument("--eval-games", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = _config(args)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (ConfigError, WorldStateError, FloatingPointError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
