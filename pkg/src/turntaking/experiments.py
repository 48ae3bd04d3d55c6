"""Training phases, prediction metrics and learning-curve experiments."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agents import RuleAgentSpec, make_rule_agent
from .config import ExperimentConfig
from .core import N_TYPES, BehaviorType, argmax3
from .env import MAX_BLOCK
from .fusion import FusionModel
from .placement import get_placement_policy
from .policy import Schedule, save_policy
from .sim import Learner, make_policy, play_game
from .wfst import BehaviorModel, build_topology

log = logging.getLogger(__name__)

# spawn-key tags keeping each phase's random streams disjoint
PHASE_PROTOTYPES, PHASE_FUSION, PHASE_POLICY, PHASE_EVAL = 1, 2, 3, 4

SCENARIOS = {1: "single", 2: "pairwise", 3: "all"}


def type_combinations() -> list[tuple[BehaviorType, ...]]:
    """The 7 non-empty type subsets, smallest first."""
    return [c for r in (1, 2, 3) for c in itertools.combinations(list(BehaviorType), r)]


def phase_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def topology_bricks(cfg: ExperimentConfig) -> int:
    return max([cfg.blocks_per_agent] + [e.budget or 0 for e in cfg.roster]) * MAX_BLOCK


def blank_model(cfg: ExperimentConfig) -> BehaviorModel:
    return build_topology(topology_bricks(cfg), cfg.eta, cfg.streak_cap)


def sample_roster(types: Sequence[BehaviorType], rng: np.random.Generator,
                  cfg: Optional[ExperimentConfig] = None) -> list[RuleAgentSpec]:
    entries = list(cfg.roster) if cfg is not None else [None] * len(types)
    specs = []
    for k, t in enumerate(types):
        e = entries[k] if k < len(entries) and entries[k] is not None and entries[k].btype == t else None
        specs.append(make_rule_agent(k, t, rng,
                                     None if e is None else e.policy_table,
                                     None if e is None else e.block_size_dist))
    return specs


# ---------------------------------------------------------------- phase 1 / 2


def observation_plan(cfg: ExperimentConfig) -> list[tuple[int, tuple, int]]:
    """``(combination index, combination, game)`` for every observation-only game."""
    return [(ci, combo, g) for ci, combo in enumerate(type_combinations())
            for g in range(cfg.games_per_combination)]


def train_prototypes(cfg: ExperimentConfig) -> dict[BehaviorType, BehaviorModel]:
    """Observe 30 games of every type combination, updating one WFST per type."""
    protos = {t: blank_model(cfg) for t in BehaviorType}
    place = get_placement_policy(cfg.placement)
    plan = observation_plan(cfg)
    for ci, combo, g in plan:
        rng = phase_rng(cfg.seed, PHASE_PROTOTYPES, ci, g)
        specs = sample_roster(combo, rng)
        play_game(cfg, specs, rng, models=[protos[s.btype] for s in specs],
                  placement_policy=place)
    log.info("prototype training observed %d games", len(plan))
    return protos


def collect_fusion_dataset(cfg: ExperimentConfig, prototypes) -> tuple[np.ndarray, np.ndarray]:
    place = get_placement_policy(cfg.placement)
    rows: list = []
    for ci, combo, g in observation_plan(cfg):
        rng = phase_rng(cfg.seed, PHASE_FUSION, ci, g)
        specs = sample_roster(combo, rng)
        models = [prototypes[s.btype].clone() for s in specs]
        play_game(cfg, specs, rng, models=models, fusion_rows=rows, placement_policy=place)
    if not rows:
        raise ValueError("fusion observation phase produced no training rows")
    X = np.stack([x for x, _ in rows])
    y = np.array([a for _, a in rows], dtype=int)
    return X, y


def train_fusion(cfg: ExperimentConfig, prototypes) -> FusionModel:
    X, y = collect_fusion_dataset(cfg, prototypes)
    model = FusionModel(N_TYPES)
    losses = model.train(X, y, lr=cfg.fusion_lr, epochs=cfg.fusion_epochs,
                         rng=phase_rng(cfg.seed, PHASE_FUSION, 99))
    log.info("fusion trained on %d rows, final loss %.4f", len(y), losses[-1])
    return model.freeze()


def export_dataset(path, X: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


# ---------------------------------------------------------------- metrics


def kl_divergence(p_true, p_hat, floor: float = 1e-9) -> float:
    """KL(true || predicted) in nats, with predictions floored then renormalized."""
    q0, q1, q2 = p_hat
    q0 = q0 if q0 > floor else floor
    q1 = q1 if q1 > floor else floor
    q2 = q2 if q2 > floor else floor
    z = q0 + q1 + q2
    total = 0.0
    for pt, qk in zip(p_true, (q0, q1, q2)):
        if pt > 0.0:
            total += pt * math.log(pt * z / qk)
    return total if total > 0.0 else 0.0


class PredictionLog:
    """Running per-type accuracy and KL for the WFST and fused predictions."""

    def __init__(self):
        self.n = [0] * N_TYPES
        self.correct = {"wfst": [0] * N_TYPES, "fused": [0] * N_TYPES}
        self.kl = {"wfst": [0.0] * N_TYPES, "fused": [0.0] * N_TYPES}

    def add(self, btype: int, wfst_pred, fused_pred, action, true_dist) -> None:
        self.n[btype] += 1
        a = int(action)
        for name, pred in (("wfst", wfst_pred), ("fused", fused_pred)):
            self.correct[name][btype] += argmax3(pred) == a
            self.kl[name][btype] += kl_divergence(true_dist, pred)

    def accuracy(self, model: str = "wfst") -> list:
        return [c / n if n else float("nan") for c, n in zip(self.correct[model], self.n)]

    def mean_kl(self, model: str = "wfst") -> list:
        return [k / n if n else float("nan") for k, n in zip(self.kl[model], self.n)]


@dataclass
class MetricRow:
    scenario: str
    model: str
    btype: BehaviorType
    accuracy: float
    kl: float
    runs: int


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def get(self, scenario: str, btype: BehaviorType, model: str = "wfst") -> MetricRow:
        for r in self.rows:
            if r.scenario == scenario and r.btype == btype and r.model == model:
                return r
        raise KeyError((scenario, btype, model))

    def write_csv(self, path, model: str = "wfst") -> None:
        """One row per (scenario, type) for the given predictor."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "type", "accuracy", "kl", "runs"])
            for r in self.rows:
                if r.model == model:
                    w.writerow([r.scenario, r.btype.label, f"{r.accuracy:.6f}", f"{r.kl:.6f}", r.runs])


def prediction_metrics(run_logs: Sequence[tuple[int, PredictionLog]]) -> MetricReport:
    """Aggregate per-run logs into scenario x type means.

    ``run_logs`` pairs each run's roster size with its log; a run counts
    once per type present, with accuracy and KL averaged over its steps.
    """
    per: dict = {}
    for size, plog in run_logs:
        scenario = SCENARIOS[size]
        for model in ("wfst", "fused"):
            acc, kl = plog.accuracy(model), plog.mean_kl(model)
            for t in BehaviorType:
                if plog.n[t] > 0:
                    per.setdefault((scenario, model, t), []).append((acc[t], kl[t]))
    report = MetricReport()
    for scenario in SCENARIOS.values():
        for model in ("wfst", "fused"):
            for t in BehaviorType:
                vals = per.get((scenario, model, t))
                if vals:
                    a = np.array(vals)
                    report.rows.append(MetricRow(scenario, model, t, float(a[:, 0].mean()),
                                                 float(a[:, 1].mean()), len(vals)))
    return report


def evaluate(cfg: ExperimentConfig, prototypes, fusion: Optional[FusionModel],
             combos: Optional[Sequence[tuple]] = None) -> MetricReport:
    """Online prediction quality while adapted clones track fresh agents.

    Each run samples new agents for one type combination and follows them
    for ``eval_games`` observation-only games, scoring every prediction
    before the action it predicts is revealed.
    """
    place = get_placement_policy(cfg.placement)
    logs = []
    for ci, combo in enumerate(type_combinations()):
        if combos is not None and tuple(combo) not in {tuple(c) for c in combos}:
            continue
        for run in range(cfg.eval_runs):
            rng = phase_rng(cfg.seed, PHASE_EVAL, ci, run)
            specs = sample_roster(combo, rng)
            models = [prototypes[s.btype].clone() for s in specs]
            plog = PredictionLog()
            for g in range(cfg.eval_games):
                play_game(cfg, specs, rng, models=models, fusion=fusion, pred_log=plog,
                          placement_policy=place)
            logs.append((len(combo), plog))
    return prediction_metrics(logs)


# ---------------------------------------------------------------- phase 3


@dataclass
class TrialResult:
    returns: np.ndarray
    collisions: np.ndarray
    placement_steps: list
    policy: object = None


@dataclass
class LearningCurve:
    mean_return: np.ndarray
    eps: np.ndarray
    alpha: np.ndarray
    trials: int
    returns: np.ndarray  # trials x games
    placement_steps: list  # per trial, per game

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["game", "mean_return", "eps", "alpha"])
            for g in range(len(self.mean_return)):
                w.writerow([g, f"{self.mean_return[g]:.6f}", repr(float(self.eps[g])),
                            repr(float(self.alpha[g]))])


def make_schedule(cfg: ExperimentConfig) -> Schedule:
    _, alpha = cfg.resolved_gamma_alpha()
    return Schedule(cfg.eps_initial, cfg.eps_floor, alpha, cfg.schedule_hold, cfg.schedule_decay)


def run_trial(cfg: ExperimentConfig, prototypes, fusion: Optional[FusionModel], trial: int) -> TrialResult:
    """One independent learner trained against one sampled roster."""
    rng = phase_rng(cfg.seed, PHASE_POLICY, trial)
    types = cfg.roster_types
    specs = sample_roster(types, rng, cfg)
    models = [prototypes[s.btype].clone() for s in specs]
    gamma, _ = cfg.resolved_gamma_alpha()
    schedule = make_schedule(cfg)
    learner = Learner(make_policy(cfg, gamma, len(specs) + 1), cfg, fusion, len(specs) + 1, schedule)
    place = get_placement_policy(cfg.placement)
    returns = np.zeros(cfg.games)
    collisions = np.zeros(cfg.games, dtype=bool)
    steps = []
    for g in range(cfg.games):
        res = play_game(cfg, specs, rng, models=models, fusion=fusion, learner=learner,
                        placement_policy=place, game_idx=g)
        returns[g] = res.learner_return
        collisions[g] = res.collision
        steps.append(res.placement_steps)
    return TrialResult(returns, collisions, steps, learner.policy)


def _trial_worker(args):
    cfg, prototypes, fusion, trial = args
    return run_trial(cfg, prototypes, fusion, trial)


def train_policy(cfg: ExperimentConfig, prototypes, fusion: Optional[FusionModel],
                 games_csv: Optional[Path] = None):
    """Train ``cfg.trials`` independent learners; returns (last trial's policy, curve)."""
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_trial_worker,
                                    [(cfg, prototypes, fusion, t) for t in range(cfg.trials)]))
    else:
        results = [run_trial(cfg, prototypes, fusion, t) for t in range(cfg.trials)]
    if games_csv is not None:
        with open(games_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "game", "return", "eps", "alpha", "collision", "placement_steps"])
            sched = make_schedule(cfg)
            for t, res in enumerate(results):
                for g in range(cfg.games):
                    w.writerow([t, g, res.returns[g], repr(sched.epsilon(g)), repr(sched.alpha(g)),
                                int(res.collisions[g]), " ".join(map(str, res.placement_steps[g]))])
    returns = np.stack([r.returns for r in results])
    sched = make_schedule(cfg)
    curve = LearningCurve(
        mean_return=returns.mean(axis=0),
        eps=np.array([sched.epsilon(g) for g in range(cfg.games)]),
        alpha=np.array([sched.alpha(g) for g in range(cfg.games)]),
        trials=cfg.trials,
        returns=returns,
        placement_steps=[r.placement_steps for r in results],
    )
    return results[-1].policy, curve


# ---------------------------------------------------------------- curve analysis


@dataclass
class PlacementCurve:
    mean_steps: np.ndarray
    counts: np.ndarray
    r2: float
    flagged: bool

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block_index", "mean_step"])
            for i, s in enumerate(self.mean_steps, start=1):
                w.writerow([i, f"{s:.6f}"])


def linear_r2(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return float("nan")
    slope, icept = np.polyfit(x, y, 1)
    ss_res = float(((y - (slope * x + icept)) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot


def placement_step_curve(placement_steps: Sequence[Sequence[int]], min_r2: float = 0.9) -> PlacementCurve:
    """Mean turn index of the learner's i-th successful placement."""
    longest = max((len(p) for p in placement_steps), default=0)
    if longest == 0:
        warnings.warn("no learner placements logged; empty placement curve")
        return PlacementCurve(np.zeros(0), np.zeros(0, dtype=int), float("nan"), False)
    sums = np.zeros(longest)
    counts = np.zeros(longest, dtype=int)
    for p in placement_steps:
        for i, s in enumerate(p):
            sums[i] += s
            counts[i] += 1
    means = sums / counts
    r2 = linear_r2(np.arange(1, longest + 1), means)
    flagged = bool(longest >= 3 and r2 < min_r2 and np.polyfit(np.arange(longest), means, 2)[0] > 0)
    return PlacementCurve(means, counts, r2, flagged)


def converged_window(curve_values: np.ndarray, target: float, window: int = 50,
                     before: Optional[int] = None, tol: float = 1e-9) -> Optional[int]:
    """First game starting ``window`` consecutive games with value >= target - tol."""
    ok = np.asarray(curve_values) >= target - tol
    stop = len(ok) if before is None else min(before, len(ok))
    run = 0
    for g in range(stop):
        run = run + 1 if ok[g] else 0
        if run >= window:
            return g - window + 1
    return None


def optimal_window(curve_values: np.ndarray, target: float, window: int = 50,
                   before: Optional[int] = None, tol: float = 0.0) -> Optional[int]:
    """First game starting ``window`` consecutive games whose mean is >= target - tol.

    The window has to end by ``before`` when given.
    """
    v = np.asarray(curve_values, dtype=float)
    if len(v) < window:
        return None
    means = np.convolve(v, np.full(window, 1.0 / window), mode="valid")
    ok = np.flatnonzero(means >= target - tol)
    if before is not None:
        ok = ok[ok + window <= before]
    return int(ok[0]) if len(ok) else None


# ---------------------------------------------------------------- persistence / pipeline


def save_prototypes(prototypes, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, model in prototypes.items():
        model.save(directory / f"prototype_{t.label}.json")


def load_prototypes(directory) -> dict[BehaviorType, BehaviorModel]:
    directory = Path(directory)
    return {t: BehaviorModel.load(directory / f"prototype_{t.label}.json") for t in BehaviorType}


@dataclass
class PipelineOutputs:
    prototypes: dict
    fusion: FusionModel
    report: MetricReport
    curve: LearningCurve
    placements: PlacementCurve


def run_pipeline(cfg: ExperimentConfig, out) -> PipelineOutputs:
    """All three phases plus evaluation, writing every artifact under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    protos = train_prototypes(cfg)
    save_prototypes(protos, out)
    fusion = train_fusion(cfg, protos)
    fusion.save(out / "fusion.json")
    report = evaluate(cfg, protos, fusion)
    report.write_csv(out / "metrics.csv")
    report.write_csv(out / "fused_metrics.csv", model="fused")
    policy, curve = train_policy(cfg, protos, fusion, games_csv=out / "games.csv")
    curve.write_csv(out / "curve.csv")
    save_policy(policy, out / "policy.json", horizon=cfg.horizon, state=cfg.state,
                schedule=dataclasses.asdict(make_schedule(cfg)))
    placements = placement_step_curve(converged_placements(curve, cfg))
    placements.write_csv(out / "placements.csv")
    return PipelineOutputs(protos, fusion, report, curve, placements)


def converged_placements(curve: LearningCurve, cfg: ExperimentConfig) -> list:
    """Placement step lists from games played once exploration reached its floor."""
    start = min(cfg.schedule_hold + cfg.schedule_decay, len(curve.mean_return))
    return [steps for trial in curve.placement_steps for steps in trial[start:]]
