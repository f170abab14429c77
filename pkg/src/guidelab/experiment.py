"""Experiment configuration and seed-sweep runners.

A single JSON file describes an experiment: the mixture world, a named
condition registry, the schedule, the guidance settings, the seed
sweep, and the output locations. The runners here resolve that file
into live objects, drive the samplers over the seeds, and hand
artifact-ready tables back to the CLI. Every run is deterministic given
the resolved config, so artifact files are byte-reproducible.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from guidelab.guidance import STRATEGIES, GuidanceConfig
from guidelab.oracle import Condition, GmmWorld
from guidelab.sampler import run_dual_branch, run_single_branch
from guidelab.schedule import NoiseSchedule, make_linear_schedule

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "DEFAULT_CONFIG",
    "default_config",
    "parse_config",
    "load_config",
    "config_hash",
    "run_strategy",
    "strategy_comparison",
]

STRATEGY_ORDER = ("CFG", "NP", "SDN", "TDD_ONLY", "SDG")

# The bundled two-well world. Separation between the component means is
# wide enough that the normalized dual-branch strategies empty the
# counterfactual basin while plain negative prompting retains a
# measurable remnant, and the schedule keeps the late-step discrepancy
# growth (and with it the lagged-suppression ordering) intact at 50
# steps.
DEFAULT_CONFIG = {
    "world": {
        "components": [
            {"mean": [-12.0, 0.0], "cov_diag": [1.0, 1.0]},
            {"mean": [12.0, 0.0], "cov_diag": [1.0, 1.0]},
        ],
        "weights": [0.5, 0.5],
    },
    "conditions": {
        "scene": {"components": [0, 1]},
        "plausible": {"components": [0]},
        "counterfactual": {"components": [1]},
    },
    "positive": "scene",
    "negative": "counterfactual",
    "mass_labels": {"plausible": [0], "counterfactual": [1]},
    "schedule": {"num_steps": 50, "beta_start": 0.03, "beta_end": 0.10},
    "guidance": {"strategy": "SDG", "w": 6.0, "lambda": 30.0, "eps_stab": 1e-8},
    "run": {"seeds": {"count": 64, "base": 0}, "deterministic": True},
    "output": {"directory": "runs/two_well", "formats": ["csv", "jsonl"]},
}


class ConfigError(ValueError):
    """Config parsing/validation error; the message names the offending field."""


def default_config() -> dict:
    """A deep copy of the bundled default experiment config."""
    return json.loads(json.dumps(DEFAULT_CONFIG))


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment: live objects plus the raw dict they came from."""

    world: GmmWorld
    conditions: dict
    condition_records: dict
    positive: str
    negative: str
    schedule: NoiseSchedule
    guidance: GuidanceConfig
    seeds: tuple
    deterministic: bool
    mass_labels: dict
    out_dir: Path
    formats: tuple
    raw: dict

    @property
    def positive_condition(self) -> Condition:
        return self.conditions[self.positive]

    @property
    def negative_condition(self):
        return self.conditions[self.negative] if self.negative else None


def _need(raw: dict, key: str, where: str):
    if key not in raw:
        raise ConfigError(f"missing field '{where}{key}'")
    return raw[key]


def _parse_world(raw) -> GmmWorld:
    comps = _need(raw, "components", "world.")
    if not isinstance(comps, list) or not comps:
        raise ConfigError("field 'world.components' must be a nonempty list")
    pairs = []
    for i, comp in enumerate(comps):
        mean = _need(comp, "mean", f"world.components[{i}].")
        cov = _need(comp, "cov_diag", f"world.components[{i}].")
        pairs.append((mean, cov))
    weights = _need(raw, "weights", "world.")
    try:
        return GmmWorld.from_components(pairs, weights)
    except ValueError as exc:
        raise ConfigError(f"field 'world' invalid: {exc}") from exc


def _parse_conditions(raw, world: GmmWorld) -> tuple:
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("field 'conditions' must be a nonempty mapping")
    conditions, records = {}, {}
    for name, spec in raw.items():
        comps = _need(spec, "components", f"conditions.{name}.")
        try:
            cond = Condition.subset(comps)
            cond.resolve(world)
        except ValueError as exc:
            raise ConfigError(f"field 'conditions.{name}' invalid: {exc}") from exc
        conditions[name] = cond
        if "record_id" in spec:
            records[name] = str(spec["record_id"])
    return conditions, records


def parse_config(raw: dict, out_dir=None, seed_base=None) -> ExperimentConfig:
    """Validate and resolve a raw config dict.

    out_dir overrides output.directory; seed_base replaces the base of a
    count+base seed spec or offsets an explicit seed list. The resolved
    raw dict (with overrides applied) is kept for hashing and manifest
    embedding.
    """
    raw = json.loads(json.dumps(raw))
    world = _parse_world(_need(raw, "world", ""))
    conditions, records = _parse_conditions(_need(raw, "conditions", ""), world)

    positive = _need(raw, "positive", "")
    if positive not in conditions:
        raise ConfigError(f"field 'positive' names unknown condition '{positive}'")
    negative = raw.get("negative")
    if negative is not None and negative not in conditions:
        raise ConfigError(f"field 'negative' names unknown condition '{negative}'")

    sched_raw = _need(raw, "schedule", "")
    try:
        schedule = make_linear_schedule(
            int(_need(sched_raw, "num_steps", "schedule.")),
            float(_need(sched_raw, "beta_start", "schedule.")),
            float(_need(sched_raw, "beta_end", "schedule.")),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'schedule' invalid: {exc}") from exc

    g = _need(raw, "guidance", "")
    strategy = _need(g, "strategy", "guidance.")
    if strategy not in STRATEGIES:
        raise ConfigError(f"field 'guidance.strategy' has unknown value '{strategy}'")
    try:
        guidance = GuidanceConfig(
            strategy=strategy,
            w=float(g.get("w", 6.0)),
            lambda_=float(g.get("lambda", 30.0)),
            eps_stab=float(g.get("eps_stab", 1e-8)),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'guidance' invalid: {exc}") from exc

    run = _need(raw, "run", "")
    seeds_raw = _need(run, "seeds", "run.")
    if isinstance(seeds_raw, dict):
        count = int(_need(seeds_raw, "count", "run.seeds."))
        base = int(seeds_raw.get("base", 0))
        if seed_base is not None:
            base = int(seed_base)
            raw["run"]["seeds"]["base"] = base
        if count < 1:
            raise ConfigError("field 'run.seeds.count' must be >= 1")
        seeds = list(range(base, base + count))
    elif isinstance(seeds_raw, list):
        seeds = [int(s) for s in seeds_raw]
        if seed_base is not None:
            seeds = [s + int(seed_base) for s in seeds]
            raw["run"]["seeds"] = seeds
    else:
        raise ConfigError("field 'run.seeds' must be a list or a {count, base} mapping")
    seen, deduped = set(), []
    for s in seeds:
        if s not in seen:
            seen.add(s)
            deduped.append(s)
    seeds = deduped
    sample_count = run.get("sample_count")
    if sample_count is not None:
        sample_count = int(sample_count)
        if sample_count < 1:
            raise ConfigError("field 'run.sample_count' must be >= 1")
        seeds = seeds[:sample_count]
    deterministic = bool(run.get("deterministic", True))

    mass_raw = raw.get("mass_labels", {})
    mass_labels = {str(k): tuple(int(i) for i in v) for k, v in mass_raw.items()}

    out = _need(raw, "output", "")
    directory = Path(out_dir) if out_dir is not None else Path(_need(out, "directory", "output."))
    if out_dir is not None:
        raw["output"]["directory"] = str(directory)
    formats = tuple(out.get("formats", ["csv", "jsonl"]))

    return ExperimentConfig(
        world=world,
        conditions=conditions,
        condition_records=records,
        positive=positive,
        negative=negative,
        schedule=schedule,
        guidance=guidance,
        seeds=tuple(seeds),
        deterministic=deterministic,
        mass_labels=mass_labels,
        out_dir=directory,
        formats=formats,
        raw=raw,
    )


def load_config(path, out_dir=None, seed_base=None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(raw, out_dir=out_dir, seed_base=seed_base)


def config_hash(raw: dict) -> str:
    """Stable sha256 over the canonical JSON form of a config dict."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def run_strategy(config: ExperimentConfig, strategy: str, seed: int):
    """Run one seed under one strategy and return its trajectory bundle.

    Single-latent strategies return a Trajectory; dual-branch ones a
    DualTrajectory. The CFG row needs no negative condition; the rest
    use the config's negative binding.
    """
    g = config.guidance
    cfg = GuidanceConfig(strategy=strategy, w=g.w, lambda_=g.lambda_, eps_stab=g.eps_stab)
    pos = config.positive_condition
    neg = config.negative_condition
    if strategy == "CFG":
        return run_single_branch(config.world, pos, None, config.schedule, cfg, seed,
                                 deterministic=config.deterministic)
    if neg is None:
        raise ConfigError(f"strategy {strategy} requires a 'negative' condition binding")
    if strategy in ("NP", "SDN"):
        return run_single_branch(config.world, pos, neg, config.schedule, cfg, seed,
                                 deterministic=config.deterministic)
    return run_dual_branch(config.world, pos, neg, config.schedule, cfg, seed,
                           deterministic=config.deterministic)


def final_state(result) -> np.ndarray:
    """The sample a run produced: the (plus branch) final state."""
    return result.plus.final if hasattr(result, "plus") else result.final


def strategy_comparison(config: ExperimentConfig, strategies=STRATEGY_ORDER, jobs: int = 1) -> dict:
    """Counterfactual-mode mass per strategy over the config's seeds.

    Returns {strategy: {"mass_mean", "mass_stderr", "seeds", "finals"}}.
    The counterfactual label must be present in config.mass_labels.
    """
    if "counterfactual" not in config.mass_labels:
        raise ConfigError("field 'mass_labels' must define a 'counterfactual' label for comparison runs")

    def one_strategy(strategy):
        finals = np.stack([final_state(run_strategy(config, strategy, s)) for s in config.seeds])
        cf = np.asarray(sorted(config.mass_labels["counterfactual"]))
        diff = finals[:, None, :] - config.world.means[None]
        log_comp = (
            -0.5 * np.sum(diff * diff / config.world.cov_diags[None], axis=2)
            - 0.5 * np.sum(np.log(config.world.cov_diags), axis=1)[None]
            + np.log(config.world.weights)[None]
        )
        assign = np.argmax(log_comp, axis=1)
        per_seed = np.isin(assign, cf).astype(float)
        n = len(per_seed)
        stderr = float(per_seed.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return {"mass_mean": float(per_seed.mean()), "mass_stderr": stderr, "seeds": n, "finals": finals}

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one_strategy, strategies))
        return dict(zip(strategies, rows))
    return {s: one_strategy(s) for s in strategies}
