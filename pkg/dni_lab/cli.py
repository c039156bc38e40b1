#!/usr/bin/env python3
"""
DNI Lab Command Line
Generates datasets, trains configured experiments, runs the theory simulators,
analyzes trained checkpoints and summarizes run directories

Exit codes: 0 success, 1 failed verdict or experiment error, 2 config or usage error,
3 I/O or data error.
"""

import argparse
import json
import logging
import os
import sys
from collections import defaultdict
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv

from dni_lab.analysis import (
    compute_rdm,
    layer_activations,
    loss_surface_experiment,
    loss_surface_snapshot,
    probe_layers,
    rank_correlation,
    rdm_distance_profile,
    rdm_summary,
    surface_fidelity,
    weight_norm_profile,
    write_dict_rows,
    write_loss_surfaces_csv,
    write_matrix_csv,
    write_probe_csv,
    write_profile_csv,
)
from dni_lab.config import DatasetSpec, ExperimentConfig, load_config, validate_config
from dni_lab.data import (
    GENERATORS,
    Dataset,
    GridDataset,
    describe,
    generate,
    grid_2d,
    load_csv,
    load_mnist,
    mnist_paths,
    sample_sorted,
    save_csv,
    subset,
    train_test_split,
)
from dni_lab.errors import (
    CheckpointError,
    ConfigError,
    DniLabError,
    IdxFormatError,
    ShapeError,
    UnsupportedModuleError,
    ValidationError,
)
from dni_lab.metrics_recorder import MetricsRecorder
from dni_lab.theory import (
    critical_point_demo,
    random_problem,
    theorem1_init,
    theorem1_run,
    write_trajectory_csv,
)
from dni_lab.trainer import (
    CHECKPOINT_FILE,
    METRICS_FILE,
    Comparison,
    Trainer,
    baseline_spec,
    depth_sweep,
    run_experiment,
    run_table3,
    table3_markdown,
)

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.json"
EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
CRITICAL_POINT_TOL = 1e-2


class VerdictFailed(Exception):
    """An experiment ran but its verdict was negative"""


# ---------------------------------------------------------------------------
# Datasets and run directories
# ---------------------------------------------------------------------------

def mnist_dir(spec: DatasetSpec) -> str:
    data_dir = spec.data_dir or os.getenv("MNIST_DATA_DIR")
    if not data_dir:
        raise ConfigError("dataset.data_dir", "set it or the MNIST_DATA_DIR environment variable")
    return data_dir


def grid_from_spec(spec: DatasetSpec, seed: int) -> GridDataset:
    return grid_2d(spec.resolution, spec.range[0], spec.range[1], spec.labeler, seed)


def dataset_from_spec(spec: DatasetSpec, seed: int) -> Tuple[Dataset, Optional[Dataset]]:
    """Build (train, test) for a validated dataset spec; test is None unless a split exists"""
    test = None
    if spec.kind in GENERATORS:
        dataset = generate(spec.kind, spec.k, seed, spec.n_points)
    elif spec.kind == "grid":
        dataset = grid_from_spec(spec, seed).dataset
    elif spec.kind == "mnist":
        data_dir = mnist_dir(spec)
        dataset = load_mnist(*mnist_paths(data_dir, "train"), subset_size=spec.subset, seed=seed)
        if spec.test_fraction is None:
            test = load_mnist(*mnist_paths(data_dir, "test"))
    else:
        dataset = load_csv(spec.path)
    if spec.subset and spec.kind != "mnist":
        dataset = subset(dataset, spec.subset, seed)
    if spec.test_fraction is not None:
        dataset, test = train_test_split(dataset, spec.test_fraction, seed)
    logger.info(f"Dataset {spec.kind}: {describe(dataset)}")
    return dataset, test


def prepare_run_dir(config: ExperimentConfig) -> str:
    run_dir = os.path.join(config.output_dir, config.run_name)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, CONFIG_FILE), "w", encoding="utf-8") as f:
        json.dump(config.normalized, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Run directory: {run_dir}")
    return run_dir


def write_summary(run_dir: str, summary: Dict) -> str:
    path = os.path.join(run_dir, SUMMARY_FILE)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_run(run_dir: str, checkpoint: Optional[str] = None) -> Tuple[ExperimentConfig, Trainer]:
    """Rebuild the trainer of a run directory from its config and checkpoint"""
    config_path = os.path.join(run_dir, CONFIG_FILE)
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise OSError(f"Could not read {config_path}: {e}") from e
    config = validate_config(raw)
    if config.network is None or config.experiment not in ("single", "loss_surface"):
        raise ConfigError("experiment", f"{config.experiment} runs have no single checkpoint to analyze")
    trainer = Trainer(config.network, config.training)
    trainer.restore(checkpoint or os.path.join(run_dir, CHECKPOINT_FILE))
    return config, trainer


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.kind == "grid":
        dataset = grid_2d(args.resolution, args.range[0], args.range[1], args.labeler, args.seed).dataset
    else:
        dataset = generate(args.kind, args.k, args.seed, args.n_points)
    save_csv(dataset, args.out)
    print(f"Wrote {args.out}: {describe(dataset)}")
    if "flipped" in dataset.spec:
        print(f"Flipped labels: {len(dataset.spec['flipped'])}")
    return EXIT_OK


def _print_final(label: str, record: Optional[Dict]) -> None:
    if record is None:
        print(f"{label}: no records")
        return
    text = f"{label}: iteration {record['iteration']} train_loss={record['train_loss']:.6f} " \
           f"train_accuracy={record['train_accuracy']:.4f}"
    if record.get("test_loss") is not None:
        text += f" test_loss={record['test_loss']:.6f} test_accuracy={record['test_accuracy']:.4f}"
    print(text)


def train_single(config: ExperimentConfig, run_dir: str, resume: bool, stop_after: Optional[int]) -> Dict:
    dataset, test = dataset_from_spec(config.dataset, config.seed)
    result = run_experiment(config.network, config.training, dataset, run_dir, test, resume=resume,
                            stop_after=stop_after)
    _print_final(config.network.method, result.final)
    summary = {"experiment": "single", "method": config.network.method, "completed": result.completed,
               "stopped_early": result.stopped_early, "final": result.final}
    if not result.completed:
        print(f"Stopped after {result.trainer.iteration} iterations; rerun with --resume to continue")
        return summary
    if config.compare_with_backprop:
        baseline = run_experiment(baseline_spec(config.network), config.training, dataset,
                                  os.path.join(run_dir, "backprop"), test, resume=resume)
        _print_final("backprop", baseline.final)
        comparison = Comparison(result.trainer.evaluate(dataset)[0], baseline.trainer.evaluate(dataset)[0])
        print(f"Final loss gap ({config.network.method} - backprop): {comparison.gap:.6f}")
        summary["backprop_final"] = baseline.final
        summary["gap"] = comparison.gap
    return summary


def train_table3(config: ExperimentConfig, run_dir: str) -> Dict:
    rows = run_table3(config.table3_cells, config.training, config.table3_replicates,
                      config.table3_hidden_width, config.table3_sg_kind, config.dataset.n_points)
    markdown = table3_markdown(rows)
    with open(os.path.join(run_dir, "table3.md"), "w", encoding="utf-8") as f:
        f.write(markdown + "\n")
    print(markdown)
    return {"experiment": "table3",
            "gaps": {f"{r.cell.row_name} {r.cell.column_name}": r.mean_gap for r in rows}}


def train_loss_surface(config: ExperimentConfig, run_dir: str) -> Dict:
    grid = grid_from_spec(config.dataset, config.seed)
    trainer = Trainer(config.network, config.training)
    surfaces = loss_surface_experiment(trainer, grid, config.analysis.snapshots)
    write_loss_surfaces_csv(surfaces, os.path.join(run_dir, "loss_surfaces.csv"))
    trainer.save(os.path.join(run_dir, CHECKPOINT_FILE))
    fidelity = {}
    for surface in surfaces:
        scores = surface_fidelity(surface)
        fidelity[str(surface.iteration)] = {str(k): v for k, v in scores.items()}
        print(f"iteration {surface.iteration}: " + " ".join(f"sg{k}={v:.3f}" for k, v in scores.items()))
    return {"experiment": "loss_surface", "fidelity": fidelity}


def train_depth_sweep(config: ExperimentConfig, run_dir: str) -> Dict:
    dataset, _ = dataset_from_spec(config.dataset, config.seed)
    rows = depth_sweep(config.depths, config.network, config.training, dataset, config.depth_hidden_width, run_dir)
    write_dict_rows(rows, ["depth", "method", "train_loss", "train_accuracy"], os.path.join(run_dir, "depth_sweep.csv"))
    for row in rows:
        print(f"depth {row['depth']:>3} {row['method']:<9} train_accuracy={row['train_accuracy']:.4f}")
    return {"experiment": "depth_sweep", "rows": rows}


def cmd_train(args) -> int:
    config = load_config(args.config, args.set, seed=args.seed, output_dir=args.output_dir)
    run_dir = prepare_run_dir(config)
    if config.experiment == "single":
        summary = train_single(config, run_dir, args.resume, args.stop_after)
    elif config.experiment == "table3":
        summary = train_table3(config, run_dir)
    elif config.experiment == "loss_surface":
        summary = train_loss_surface(config, run_dir)
    else:
        summary = train_depth_sweep(config, run_dir)
    summary["seed"] = config.seed
    write_summary(run_dir, summary)
    print(f"Outputs in {run_dir}")
    return EXIT_OK


def cmd_theorem1(args) -> int:
    X, y = random_problem(args.S, args.d, args.seed)
    trajectory = theorem1_run(theorem1_init(X, y, args.seed), tol=args.tol, max_iters=args.max_iters)
    if args.out:
        write_trajectory_csv(trajectory, args.out)
    final = trajectory.rows[-1]
    print(f"{trajectory.message}; ||f||+||xi|| = {final['combined']:.3e}, ||W - W*|| = {final['w_error']:.3e}")
    print(f"monotone decrease: {'verified' if trajectory.monotone else 'VIOLATED'}")
    if not (trajectory.converged and trajectory.monotone):
        raise VerdictFailed(trajectory.message or "||f||+||xi|| did not decrease monotonically")
    return EXIT_OK


def cmd_critical_point(args) -> int:
    rows, verdict = critical_point_demo(args.a0, args.b0, args.c0, args.lr_main, args.lr_sg, args.iters,
                                        use_true_grad=args.use_true_grad)
    if args.out:
        write_dict_rows(rows, ["iteration", "a", "b", "c"], args.out)
    print(verdict.message)
    if args.use_true_grad:
        ok = abs(verdict.a) < CRITICAL_POINT_TOL and abs(verdict.b) < CRITICAL_POINT_TOL
    else:
        ok = verdict.spurious
    if not ok:
        raise VerdictFailed(verdict.message)
    return EXIT_OK


def _analysis_dataset(args, config: ExperimentConfig) -> Dataset:
    if args.dataset == "mnist":
        return load_mnist(*mnist_paths(mnist_dir(config.dataset), "train"), subset_size=config.dataset.subset,
                          seed=config.seed)
    if args.dataset:
        return load_csv(args.dataset, n_classes=config.network.layer_dims[-1])
    return dataset_from_spec(config.dataset, config.seed)[0]


def cmd_analyze(args) -> int:
    config, trainer = load_run(args.run_dir, args.checkpoint)
    out_dir = args.out_dir or args.run_dir
    toggles = config.analysis
    if args.kind == "loss-surface":
        if config.dataset.kind != "grid":
            raise ConfigError("dataset.kind", "loss-surface analysis needs a grid run")
        grid = grid_from_spec(config.dataset, config.seed).dataset
        surface = loss_surface_snapshot(trainer, grid.X, grid.Y, trainer.iteration)
        write_loss_surfaces_csv([surface], os.path.join(out_dir, f"loss_surface_{trainer.iteration}.csv"))
        for k, v in surface_fidelity(surface).items():
            print(f"sg{k}: rank correlation with true loss {v:.4f}")
        return EXIT_OK

    dataset = _analysis_dataset(args, config)
    if args.kind == "rdm":
        sample = sample_sorted(dataset, min(toggles.rdm_samples, dataset.n), config.seed)
        rdms = [compute_rdm(acts) for acts in layer_activations(trainer.net, sample.X)]
        for layer, rdm in enumerate(rdms, start=1):
            write_matrix_csv(rdm, os.path.join(out_dir, "rdm", f"layer{layer:02d}.csv"))
            stats = rdm_summary(rdm, sample.labels)
            print(f"layer {layer:>2}: within={stats['within']:.4f} between={stats['between']:.4f}")
        write_profile_csv(rdm_distance_profile(rdms, sample.labels), os.path.join(out_dir, "rdm_profile.csv"),
                          column="distance_to_final")
    elif args.kind == "probes":
        results = probe_layers(trainer.net, dataset.X, dataset.labels, toggles.probe_steps, toggles.probe_lr,
                               toggles.probe_regress, toggles.probe_batch_size)
        write_probe_csv(results, os.path.join(out_dir, "probes.csv"))
        for r in results:
            print(f"layer {r.layer:>2}: accuracy={r.accuracy:.4f}" + (" (degenerate)" if r.degenerate else ""))
    else:
        profile = weight_norm_profile(trainer.net)
        write_profile_csv(profile, os.path.join(out_dir, "norms.csv"), column="normalized_sq_norm")
        print(f"norm profile over {len(profile)} layers; rank correlation with depth "
              f"{rank_correlation(profile):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def analyze_run_dir(run_dir: str) -> Dict:
    """Summary data for one run directory (an 'error' key when it cannot be read)"""
    name = os.path.basename(run_dir.rstrip(os.sep))
    try:
        with open(os.path.join(run_dir, CONFIG_FILE), "r", encoding="utf-8") as f:
            raw = json.load(f)
        summary = {}
        summary_path = os.path.join(run_dir, SUMMARY_FILE)
        if os.path.exists(summary_path):
            with open(summary_path, "r", encoding="utf-8") as f:
                summary = json.load(f)
        records = []
        metrics_path = os.path.join(run_dir, METRICS_FILE)
        if os.path.exists(metrics_path):
            records = MetricsRecorder.read(metrics_path)
        return {
            "name": name,
            "experiment": raw.get("experiment", "single"),
            "description": raw.get("description"),
            "method": (raw.get("network") or {}).get("method", "backprop"),
            "final": summary.get("final") or (records[-1] if records else None),
            "summary": summary,
            "n_records": len(records),
        }
    except Exception as e:
        return {"name": name, "error": str(e)}


def cmd_report(args) -> int:
    runs_dir = args.runs_dir
    if not os.path.isdir(runs_dir):
        print(f"Error: Directory '{runs_dir}' not found.")
        return EXIT_IO
    run_dirs = sorted(os.path.join(runs_dir, d) for d in os.listdir(runs_dir)
                      if os.path.exists(os.path.join(runs_dir, d, CONFIG_FILE)))
    if not run_dirs:
        print("No run directories found.")
        return EXIT_OK

    print(f"\n{'='*80}")
    print("Run Summary")
    print(f"{'='*80}")
    print(f"\nFound {len(run_dirs)} run(s)\n")

    runs = [analyze_run_dir(d) for d in run_dirs]
    by_experiment: Dict[str, List[Dict]] = defaultdict(list)
    for run in runs:
        if "error" not in run:
            by_experiment[run["experiment"]].append(run)

    for experiment, group in sorted(by_experiment.items()):
        print(f"\n{'-'*80}")
        print(f"Experiment: {experiment.upper()}")
        print(f"{'-'*80}\n")
        for run in group:
            print(f"Run: {run['name']}")
            if run["description"]:
                print(f"Description: {run['description']}")
            if experiment == "single":
                print(f"Method: {run['method']}  Records: {run['n_records']}")
                final = run["final"]
                if final:
                    print(f"  Final train loss: {final['train_loss']:.6f}  accuracy: {final['train_accuracy']:.4f}")
                if run["summary"].get("gap") is not None:
                    print(f"  Gap vs backprop: {run['summary']['gap']:.6f}")
            elif experiment == "table3":
                for cell, gap in run["summary"].get("gaps", {}).items():
                    print(f"  {cell:.<40} {gap:>10.5f}")
            elif experiment == "depth_sweep":
                for row in run["summary"].get("rows", []):
                    print(f"  depth {row['depth']:>3} {row['method']:<9} {row['train_accuracy']:.4f}")
            elif experiment == "loss_surface":
                for iteration, scores in run["summary"].get("fidelity", {}).items():
                    print(f"  iteration {iteration:>6}: " + " ".join(f"sg{k}={v:.3f}" for k, v in scores.items()))
            print()

    print(f"\n{'='*80}")
    print("Overall Statistics")
    print(f"{'='*80}\n")
    for experiment, group in sorted(by_experiment.items()):
        print(f"  {experiment:.<40} {len(group):>8}")

    errors = [run for run in runs if "error" in run]
    if errors:
        print(f"\n{'-'*80}")
        print("Runs with errors:")
        for run in errors:
            print(f"  {run['name']}: {run['error']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dni_lab", description="Synthetic-gradient and conspiring-gradient experiments")
    parser.add_argument('--verbose', action='store_true', help='Log at DEBUG level')
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Write an artificial dataset to CSV")
    gen.add_argument('--kind', choices=list(GENERATORS) + ["grid"], default="linear")
    gen.add_argument('--k', type=int, default=2, help='Input dimensionality (default: 2)')
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--n-points', type=int, help='Sample count (default: 100 for k <= 2, else 1000)')
    gen.add_argument('--resolution', type=int, default=20, help='Grid points per axis (grid only)')
    gen.add_argument('--range', type=float, nargs=2, default=[-2.0, 2.0], metavar=('LO', 'HI'))
    gen.add_argument('--labeler', choices=["linear_with_noise", "random"], default="linear_with_noise")
    gen.add_argument('--out', required=True, help='Output CSV path')
    gen.set_defaults(func=cmd_gen_data)

    train = sub.add_parser("train", help="Run a JSON experiment config")
    train.add_argument('config', help='Experiment config JSON file')
    train.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                       help='Override a config value, e.g. training.iterations=500 (repeatable)')
    train.add_argument('--seed', type=int, help='Override the config seed')
    train.add_argument('--output-dir', help='Override the config output_dir')
    train.add_argument('--resume', action='store_true', help='Continue from the run checkpoint')
    train.add_argument('--stop-after', type=int, help='Checkpoint and stop after this many iterations')
    train.set_defaults(func=cmd_train)

    t1 = sub.add_parser("theorem1", help="Simulate linear-model SG dynamics to convergence")
    t1.add_argument('--S', type=int, default=20, help='Number of samples')
    t1.add_argument('--d', type=int, default=5, help='Input dimensionality')
    t1.add_argument('--seed', type=int, default=0)
    t1.add_argument('--tol', type=float, default=1e-6)
    t1.add_argument('--max-iters', type=int, default=200000)
    t1.add_argument('--out', help='Trajectory CSV path')
    t1.add_argument('--config', dest='preset', help='JSON preset supplying option defaults')
    t1.set_defaults(func=cmd_theorem1)
    parser.preset_parsers = {"theorem1": t1}

    cp = sub.add_parser("critical-point", help="One-dimensional spurious-equilibrium demo")
    cp.add_argument('--a0', type=float, default=1.0)
    cp.add_argument('--b0', type=float, default=0.0)
    cp.add_argument('--c0', type=float, default=0.0)
    cp.add_argument('--lr-main', type=float, default=1e-3)
    cp.add_argument('--lr-sg', type=float, default=0.1)
    cp.add_argument('--iters', type=int, default=5000)
    cp.add_argument('--use-true-grad', action='store_true', help='Descend on the true subgradient instead')
    cp.add_argument('--out', help='Trajectory CSV path')
    cp.add_argument('--config', dest='preset', help='JSON preset supplying option defaults')
    cp.set_defaults(func=cmd_critical_point)
    parser.preset_parsers["critical-point"] = cp

    an = sub.add_parser("analyze", help="Write analysis CSVs for a trained run")
    an.add_argument('kind', choices=["rdm", "probes", "norms", "loss-surface"])
    an.add_argument('--run-dir', required=True, help='Run directory produced by train')
    an.add_argument('--checkpoint', help='Checkpoint path (default: the run checkpoint)')
    an.add_argument('--dataset', help="Dataset CSV, or 'mnist' (default: rebuild the run's dataset)")
    an.add_argument('--out-dir', help='Where to write CSVs (default: the run directory)')
    an.set_defaults(func=cmd_analyze)

    rep = sub.add_parser("report", help="Summarize every run directory")
    rep.add_argument('--runs-dir', default="runs", help='Directory holding run directories (default: runs)')
    rep.set_defaults(func=cmd_report)
    return parser


def apply_preset(parser: argparse.ArgumentParser, args, argv: Optional[List[str]]):
    """Re-parse with a JSON preset as subcommand defaults; explicit flags still win"""
    try:
        with open(args.preset, "r", encoding="utf-8") as f:
            preset = json.load(f)
    except OSError as e:
        raise OSError(f"Could not read preset {args.preset}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError("", f"{args.preset} is not valid JSON: {e}") from e
    preset.pop("description", None)
    sub = parser.preset_parsers[args.command]
    known = {action.dest for action in sub._actions}
    for key in preset:
        if key not in known or key in ("preset", "help"):
            raise ConfigError(key, f"not an option of {args.command}")
    sub.set_defaults(**preset)
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        if getattr(args, "preset", None):
            args = apply_preset(parser, args, argv)
        return args.func(args)
    except VerdictFailed as e:
        logger.error(f"Verdict failed: {e}")
        return EXIT_VERDICT
    except (ConfigError, ValidationError, UnsupportedModuleError) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except (OSError, IdxFormatError, CheckpointError, ShapeError) as e:
        logger.error(str(e))
        return EXIT_IO
    except DniLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
