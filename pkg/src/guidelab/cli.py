"""Command-line experiment runner.

Subcommands: sample (run the configured strategy over the seed sweep),
compare-guidance (all five strategies on the same world and seeds, one
comparison table), diagnose-lag (discrepancy, spectral, and trajectory
bias curves for a shared-latent run), par-generate (counterfactual
prompt generation over a prompt file, live or mocked), and
schedule-dump (the resolved noise schedule as a table). Every command
reads one JSON config, writes its artifacts plus a manifest with the
resolved config, its hash, and per-file checksums, and returns exit
status 0 only if everything requested succeeded.
"""

import argparse
import csv
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from guidelab.diagnostics import build_report, report_to_json, series_to_csv
from guidelab.experiment import (
    STRATEGY_ORDER,
    ConfigError,
    ExperimentConfig,
    load_config,
    config_hash,
    final_state,
    run_strategy,
    strategy_comparison,
)
from guidelab.par import (
    LlmEndpointConfig,
    MockTransport,
    HttpTransport,
    default_template,
    generate_batch,
)

__all__ = [
    "cmd_sample",
    "cmd_compare_guidance",
    "cmd_diagnose_lag",
    "cmd_par_generate",
    "cmd_schedule_dump",
    "main",
]


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, raw_config: dict, seeds, artifact_names) -> None:
    manifest = {
        "command": command,
        "config": raw_config,
        "config_hash": config_hash(raw_config),
        "seeds": list(seeds),
        "artifacts": {name: _sha256(out_dir / name) for name in artifact_names},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mode_label(x: np.ndarray, config: ExperimentConfig) -> str:
    world = config.world
    diff = x[None, :] - world.means
    log_comp = (
        -0.5 * np.sum(diff * diff / world.cov_diags, axis=1)
        - 0.5 * np.sum(np.log(world.cov_diags), axis=1)
        + np.log(world.weights)
    )
    k = int(np.argmax(log_comp))
    for label, idx in config.mass_labels.items():
        if k in idx:
            return label
    return str(k)


def _vec(v):
    return None if v is None else [float(c) for c in v]


def _trajectory_lines(seed: int, result) -> list:
    branches = [("plus", result.plus), ("minus", result.minus)] if hasattr(result, "plus") else [("single", result)]
    lines = []
    for branch_name, traj in branches:
        for rec in traj.records:
            lines.append(json.dumps({
                "seed": seed,
                "branch": branch_name,
                "t": rec.t,
                "eps_pos": _vec(rec.eps_pos),
                "eps_neg": _vec(rec.eps_neg),
                "delta": _vec(rec.delta),
                "correction": _vec(rec.correction),
                "x_after": _vec(rec.x_after),
            }, sort_keys=True))
    return lines


def _prepare(config_path, out_dir, seed_base) -> ExperimentConfig:
    config = load_config(config_path, out_dir=out_dir, seed_base=seed_base)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    return config


def cmd_sample(config_path, out_dir=None, jobs=1, seed_base=None, strict=False) -> int:
    """Run the configured strategy over the seeds; write samples + trajectories."""
    try:
        config = _prepare(config_path, out_dir, seed_base)
        results = [(seed, run_strategy(config, config.guidance.strategy, seed)) for seed in config.seeds]
    except (ConfigError, ValueError, OSError) as exc:
        print(f"sample: error: {exc}", file=sys.stderr)
        return 2

    artifacts = []
    with open(config.out_dir / "samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed"] + [f"x{i}" for i in range(config.world.dim)] + ["mode"])
        for seed, result in results:
            x = final_state(result)
            writer.writerow([seed] + [repr(float(c)) for c in x] + [_mode_label(x, config)])
    artifacts.append("samples.csv")

    if "jsonl" in config.formats:
        with open(config.out_dir / "trajectories.jsonl", "w") as fh:
            for seed, result in results:
                for line in _trajectory_lines(seed, result):
                    fh.write(line + "\n")
        artifacts.append("trajectories.jsonl")

    _write_manifest(config.out_dir, "sample", config.raw, config.seeds, artifacts)
    return 0


def cmd_compare_guidance(config_path, out_dir=None, jobs=1, seed_base=None, strict=False) -> int:
    """All five strategies on the same world/seeds; one comparison table."""
    try:
        config = _prepare(config_path, out_dir, seed_base)
        if config.negative is None:
            raise ConfigError("comparison runs need a 'negative' condition binding")
        table = strategy_comparison(config, jobs=jobs)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"compare-guidance: error: {exc}", file=sys.stderr)
        return 2

    with open(config.out_dir / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "counterfactual_mass_mean", "counterfactual_mass_stderr", "seeds"])
        for strategy in STRATEGY_ORDER:
            row = table[strategy]
            writer.writerow([strategy, repr(row["mass_mean"]), repr(row["mass_stderr"]), row["seeds"]])

    _write_manifest(config.out_dir, "compare-guidance", config.raw, config.seeds, ["comparison.csv"])
    for strategy in STRATEGY_ORDER:
        print(f"{strategy:<9} counterfactual mass {table[strategy]['mass_mean']:.4f}"
              f" +/- {table[strategy]['mass_stderr']:.4f} over {table[strategy]['seeds']} seeds")
    return 0


def cmd_diagnose_lag(config_path, out_dir=None, jobs=1, seed_base=None, strict=False) -> int:
    """Discrepancy-norm, spectral, and trajectory-bias curves for an NP/SDN run."""
    try:
        config = _prepare(config_path, out_dir, seed_base)
        if config.guidance.strategy not in ("NP", "SDN"):
            raise ConfigError(
                f"diagnose-lag needs guidance.strategy NP or SDN, got '{config.guidance.strategy}'"
            )
        if config.negative is None:
            raise ConfigError("diagnose-lag needs a 'negative' condition binding")
        with warnings.catch_warnings():
            if strict:
                warnings.simplefilter("error")
            report = build_report(
                config.world,
                config.positive_condition,
                config.negative_condition,
                config.schedule,
                config.guidance,
                config.seeds,
                config.mass_labels or {"all": list(range(config.world.num_components))},
            )
    except (ConfigError, ValueError, OSError, RuntimeWarning) as exc:
        print(f"diagnose-lag: error: {exc}", file=sys.stderr)
        return 2

    out = config.out_dir
    series_to_csv(out / "delta_norms.csv", report.delta_norms, "delta_norm")
    series_to_csv(out / "suppression_proj.csv", report.suppression_proj, "projection")
    series_to_csv(out / "bias_gap.csv", report.bias_gap, "gap")
    with open(out / "eigen.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "eigenvalue"] + [f"v{i}" for i in range(config.world.dim)])
        for t, lam, v in report.leading_eigs:
            writer.writerow([t, repr(float(lam))] + [repr(float(c)) for c in v])
    with open(out / "report.json", "w") as fh:
        json.dump(report_to_json(report), fh, indent=2)
        fh.write("\n")

    k = max(1, config.schedule.num_steps // 10)
    delta_vals = [val for _, val in report.delta_norms]
    gap_vals = [val for _, val in report.bias_gap]
    early = float(np.mean(delta_vals[:k]))
    late = float(np.mean(delta_vals[-k:]))
    summary = {
        "early_mean_delta_norm": early,
        "late_mean_delta_norm": late,
        "ratio": early / late if late > 0 else float("inf"),
        "bias_gap_at_T": gap_vals[0],
        "bias_gap_early_mean": float(np.mean(gap_vals[1:1 + k])),
        "bias_gap_late_mean": float(np.mean(gap_vals[-k:])),
        "window": k,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    artifacts = ["delta_norms.csv", "suppression_proj.csv", "bias_gap.csv", "eigen.csv",
                 "report.json", "summary.json"]
    _write_manifest(out, "diagnose-lag", config.raw, config.seeds, artifacts)
    print(f"lag ratio (early/late mean delta norm over window {k}): {summary['ratio']:.4f}")
    return 0


def _endpoint_from_config(raw: dict, mock: bool) -> LlmEndpointConfig:
    par = raw.get("par")
    if par is None:
        if not mock:
            raise ConfigError("field 'par' (endpoint settings) is required without --mock")
        par = {"base_url": "http://localhost:0", "model": "mock-model"}
    try:
        return LlmEndpointConfig(
            base_url=str(par.get("base_url", "http://localhost:0")),
            model=str(par.get("model", "mock-model")),
            api_key_env=str(par.get("api_key_env", "GUIDELAB_API_KEY")),
            timeout=float(par.get("timeout", 60.0)),
            max_retries=int(par.get("max_retries", 2)),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'par' invalid: {exc}") from exc


def cmd_par_generate(config_path, prompts_path, out_dir=None, mock=None, jobs=1, strict=False) -> int:
    """Generate counterfactual records for each prompt in a file."""
    try:
        config = _prepare(config_path, out_dir, None)
        with open(config_path) as fh:
            raw = json.load(fh)
        endpoint = _endpoint_from_config(raw, mock is not None)
        with open(prompts_path, encoding="utf-8") as fh:
            prompts = [line.strip() for line in fh if line.strip()]
        transport = MockTransport.from_dir(mock) if mock is not None else HttpTransport()
    except (ConfigError, ValueError, OSError) as exc:
        print(f"par-generate: error: {exc}", file=sys.stderr)
        return 2

    if not prompts:
        print("par-generate: warning: prompts file is empty, nothing to do", file=sys.stderr)
        _write_manifest(config.out_dir, "par-generate", config.raw, [], [])
        return 0

    corpus = config.out_dir / "corpus.jsonl"
    quarantine = config.out_dir / "quarantine.jsonl"
    results = generate_batch(
        endpoint,
        default_template(),
        prompts,
        transport,
        corpus_path=corpus,
        quarantine_path=quarantine,
        jobs=jobs,
    )

    hard_fail = False
    transport_fail = False
    for prompt, status, detail in results:
        print(f"{status:<19} {prompt}")
        if status != "ok":
            hard_fail = True
            if status == "transport_error":
                transport_fail = True

    artifacts = [p.name for p in (corpus, quarantine) if p.exists()]
    _write_manifest(config.out_dir, "par-generate", config.raw, [], artifacts)
    if transport_fail or (hard_fail and strict):
        return 1
    return 0


def cmd_schedule_dump(config_path, out_dir=None, jobs=1, seed_base=None, strict=False) -> int:
    """Write the resolved noise schedule as a (t, beta, alpha_bar) table."""
    try:
        config = _prepare(config_path, out_dir, seed_base)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"schedule-dump: error: {exc}", file=sys.stderr)
        return 2
    s = config.schedule
    with open(config.out_dir / "schedule.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "beta", "alpha_bar"])
        for t in range(1, s.num_steps + 1):
            writer.writerow([t, repr(s.beta(t)), repr(s.alpha_bar(t))])
    _write_manifest(config.out_dir, "schedule-dump", config.raw, config.seeds, ["schedule.csv"])
    return 0


def main(argv=None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the experiment JSON config")
    common.add_argument("--out", default=None, help="output directory (overrides config output.directory)")
    common.add_argument("--jobs", type=int, default=1, help="parallelism bound for independent runs")
    common.add_argument("--seed-base", type=int, default=None,
                        help="replace the seed base (count+base configs) or offset an explicit seed list")
    common.add_argument("--strict", action="store_true",
                        help="fail on soft errors (per-prompt failures, diagnostic warnings)")

    parser = argparse.ArgumentParser(prog="guidelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="run the configured strategy over the seed sweep")
    sub.add_parser("compare-guidance", parents=[common], help="compare all strategies on one world")
    sub.add_parser("diagnose-lag", parents=[common], help="emit lag/bias/spectral diagnostic curves")
    p_par = sub.add_parser("par-generate", parents=[common], help="generate counterfactual prompt records")
    p_par.add_argument("prompts", help="file with one user prompt per line")
    p_par.add_argument("--mock", default=None, help="fixture directory for the mock transport")
    sub.add_parser("schedule-dump", parents=[common], help="dump the resolved noise schedule")

    args = parser.parse_args(argv)
    if args.command == "sample":
        return cmd_sample(args.config, args.out, args.jobs, args.seed_base, args.strict)
    if args.command == "compare-guidance":
        return cmd_compare_guidance(args.config, args.out, args.jobs, args.seed_base, args.strict)
    if args.command == "diagnose-lag":
        return cmd_diagnose_lag(args.config, args.out, args.jobs, args.seed_base, args.strict)
    if args.command == "par-generate":
        return cmd_par_generate(args.config, args.prompts, args.out, args.mock, args.jobs, args.strict)
    return cmd_schedule_dump(args.config, args.out, args.jobs, args.seed_base, args.strict)


if __name__ == "__main__":
    sys.exit(main())
