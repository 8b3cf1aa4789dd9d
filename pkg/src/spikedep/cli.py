"""Command-line surface.

Subcommands:
  train            homogeneous training (vanilla or adversarial_training)
  train-hetero     heterogeneous poisoning protocols (c_plus_p / p_plus_c)
  eval             accuracy triple of a checkpoint under the eval attacks
  sweep            epsilon / pgd_k / timestep sweeps to CSV
  hessian          top-5 Hessian spectrum on clean/FGSM/PGD probe batches
  checkpoint-info  header summary of a checkpoint file

Every subcommand takes --config (plain-text key/value file; omit for the
reference defaults) plus --seed and --out overrides.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import checkpoint, harness
from .config import (
    ConfigError,
    build_dataset_from_spec,
    build_model_from_spec,
    load_config,
    parse_epsilon,
    resolve,
)


def _load(args) -> "ExperimentConfig":
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if args.config is not None:
        return load_config(args.config, **overrides)
    return resolve({}, **overrides)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key/value config file")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="override the output directory")


def _restore(cfg, ckpt_path: str):
    model = build_model_from_spec(cfg.model, cfg.lif, cfg.seed)
    checkpoint.load_into_model(ckpt_path, model)
    return model


def _print_run(result: harness.RunResult) -> None:
    last = result.records[-1]
    print(
        f"done: {result.total_steps} steps, "
        f"clean {last.test_acc_clean:.4f} "
        f"fgsm {last.test_acc_fgsm:.4f} "
        f"pgd {last.test_acc_pgd:.4f} "
        f"({result.wall_time:.1f}s) -> {result.out_dir}"
    )


def _cmd_train(args) -> int:
    _print_run(harness.train_homogeneous(_load(args)))
    return 0


def _cmd_train_hetero(args) -> int:
    _print_run(harness.train_hetero(_load(args)))
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args)
    model = _restore(cfg, args.ckpt)
    dataset = build_dataset_from_spec(cfg.dataset)
    triple = harness.evaluate(
        model, dataset, cfg.eval_attack, cfg.t_steps, cfg.eval_samples
    )
    print(
        json.dumps(
            {"clean": triple.clean, "fgsm": triple.fgsm, "pgd": triple.pgd}
        )
    )
    return 0


def _parse_sweep_values(mode: str, text: str) -> list:
    parts = [p for p in (s.strip() for s in text.split(",")) if p]
    if not parts:
        raise ConfigError("empty sweep value list")
    if mode == "epsilon":
        return [parse_epsilon(p) for p in parts]
    return [int(p) for p in parts]


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    values = _parse_sweep_values(args.mode, args.values)
    model = None
    dataset = build_dataset_from_spec(cfg.dataset)
    if args.ckpt is not None:
        model = _restore(cfg, args.ckpt)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = args.csv or os.path.join(cfg.out_dir, f"sweep_{args.mode}.csv")
    rows = harness.sweep_to_csv(
        cfg, args.mode, values, path, model=model, dataset=dataset
    )
    print(f"wrote {len(rows)} rows -> {path}")
    return 0


def _cmd_hessian(args) -> int:
    cfg = _load(args)
    dataset = build_dataset_from_spec(cfg.dataset)
    if args.ckpt is not None:
        model = _restore(cfg, args.ckpt)
        step = 0
    else:
        result = harness.run_experiment(cfg)
        model, step = result.model, result.total_steps
    reports = harness.probe_model(
        model,
        dataset,
        cfg.eval_attack,
        cfg.t_steps,
        probe_batch=args.batch,
        k=args.k,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = args.jsonl or os.path.join(cfg.out_dir, "hessian.jsonl")
    harness.write_hessian_jsonl(path, reports, step=step)
    for rep in reports:
        print(
            f"{rep.batch_id}: rho {rep.rho:.6g} pr {rep.pr:.4f} "
            f"converged {sum(rep.converged_flags)}/{len(rep.converged_flags)}"
        )
    print(f"wrote {len(reports)} rows -> {path}")
    return 0


def _cmd_checkpoint_info(args) -> int:
    print(json.dumps(checkpoint.describe(args.path), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikedep",
        description="Spiking-net training with dominant-eigencomponent "
        "gradient projection, poisoning protocols, and Hessian probes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="homogeneous training run")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-hetero", help="heterogeneous poisoning run")
    _add_common(p)
    p.set_defaults(func=_cmd_train_hetero)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint to evaluate")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="sweep to CSV")
    _add_common(p)
    p.add_argument("--mode", required=True, choices=harness.SWEEP_MODES)
    p.add_argument(
        "--values",
        required=True,
        help="comma list; epsilon mode accepts N/255 fractions",
    )
    p.add_argument("--ckpt", help="reuse a trained checkpoint")
    p.add_argument("--csv", help="output path (default out_dir/sweep_MODE.csv)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("hessian", help="Hessian spectrum probe")
    _add_common(p)
    p.add_argument("--ckpt", help="probe this checkpoint (default: train first)")
    p.add_argument("--k", type=int, default=5, help="eigenvalues to extract")
    p.add_argument("--batch", type=int, default=128, help="probe batch size")
    p.add_argument("--jsonl", help="output path (default out_dir/hessian.jsonl)")
    p.set_defaults(func=_cmd_hessian)

    p = sub.add_parser("checkpoint-info", help="describe a checkpoint file")
    p.add_argument("path")
    p.set_defaults(func=_cmd_checkpoint_info)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
