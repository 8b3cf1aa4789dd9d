"""Experiment orchestration: training loops, poisoning protocols, evaluation
sweeps, Hessian probing, and metrics emission.

A run writes four artifacts under its output directory:

  metrics.jsonl   one record per evaluation point (epoch granularity); holds
                  only deterministic fields so equal-seed runs byte-match
  steps.jsonl     one record per optimizer step, with the poison flag
  manifest.json   resolved config, parameter count, wall time
  model.ckpt      final parameters in the binary checkpoint format

Heterogeneous training injects `b` poison batches per epoch from
`start_epoch` on. Scheme c_plus_p trains on clean base batches and poisons
with white-box FGSM batches; p_plus_c perturbs the base stream (as in
adversarial training) and injects clean batches as the poison. Placement
append_end adds the poison after the epoch's batches (b extra steps);
replace_random substitutes b seeded positions in place. Poison content is
generated against the current model state at injection time. With b=0 both
schemes reduce bitwise to homogeneous training: the poison RNG streams are
never even constructed.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import attacks, checkpoint, data, dep, hessian, snn
from .config import (
    ConfigError,
    ExperimentConfig,
    build_dataset_from_spec,
    build_model_from_spec,
    manifest_dict,
)

# Disjoint tags keep the poison RNG streams independent of every other
# seeded stream (init, shuffling, dataset synthesis).
_POISON_DRAW_TAG = 7701
_REPLACE_POS_TAG = 7702


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    step: int
    train_loss: float | None
    test_acc_clean: float
    test_acc_fgsm: float
    test_acc_pgd: float
    rho: float | None = None
    pr: float | None = None
    wall_time: float = 0.0

    def jsonl_payload(self) -> dict:
        # wall_time stays out of metrics.jsonl so equal-seed runs
        # byte-match; the manifest carries the run's wall time instead.
        return {
            "epoch": self.epoch,
            "step": self.step,
            "train_loss": self.train_loss,
            "test_acc_clean": self.test_acc_clean,
            "test_acc_fgsm": self.test_acc_fgsm,
            "test_acc_pgd": self.test_acc_pgd,
            "rho": self.rho,
            "pr": self.pr,
        }


@dataclass(frozen=True)
class EvalTriple:
    clean: float
    fgsm: float
    pgd: float


@dataclass
class RunResult:
    model: snn.Model
    dataset: data.Dataset
    records: list
    total_steps: int
    out_dir: str
    wall_time: float


def _adapt(x: np.ndarray, model: snn.Model) -> np.ndarray:
    """Reshape a batch to the model's input shape (e.g. 8x8 -> flat 64)."""
    want = (len(x),) + model.input_shape
    if x.shape == want:
        return x
    try:
        return x.reshape(want)
    except ValueError:
        raise snn.ShapeMismatch(
            0, f"batch shape {x.shape[1:]} incompatible with model input "
            f"{model.input_shape}"
        ) from None


def _accuracy(model: snn.Model, x: np.ndarray, y: np.ndarray, t_steps: int,
              chunk: int = 256) -> float:
    """Fraction classified correctly by argmax of time-summed logits."""
    hits = 0
    for lo in range(0, len(x), chunk):
        xb = _adapt(x[lo : lo + chunk], model)
        fr = snn.forward(model, xb, t_steps)
        summed = np.sum(fr.logits_per_step, axis=0)
        hits += int(np.sum(np.argmax(summed, axis=1) == y[lo : lo + chunk]))
    return hits / len(x)


def evaluate(
    model: snn.Model,
    dataset: data.Dataset,
    eval_attack: attacks.AttackConfig,
    t_steps: int,
    eval_samples: int = 256,
) -> EvalTriple:
    """Clean / FGSM / PGD accuracy triple on a test-set prefix.

    The test split is stored pre-shuffled, so the prefix is class-balanced.
    Attacks are white-box against `model` with the evaluation budget.
    """
    n = min(eval_samples, len(dataset.test_x))
    if n == 0:
        raise ValueError("dataset has no test split to evaluate on")
    x = _adapt(dataset.test_x[:n], model)
    y = dataset.test_y[:n]
    clean = _accuracy(model, x, y, t_steps)
    x_fgsm = attacks.fgsm(model, x, y, eval_attack, t_steps)
    x_pgd = attacks.pgd(model, x, y, eval_attack, t_steps)
    return EvalTriple(
        clean=clean,
        fgsm=_accuracy(model, x_fgsm, y, t_steps),
        pgd=_accuracy(model, x_pgd, y, t_steps),
    )


def _jsonl_line(payload: dict) -> str:
    return json.dumps(payload, separators=(", ", ": ")) + "\n"


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Train per config and write the full artifact set. Returns the final
    model plus the in-memory metrics records."""
    t0 = time.perf_counter()
    os.makedirs(cfg.out_dir, exist_ok=True)
    dataset = build_dataset_from_spec(cfg.dataset)
    model = build_model_from_spec(cfg.model, cfg.lif, cfg.seed)
    optimizer = dep.SgdOptimizer(model, cfg.optimizer)
    plan = data.BatchPlan(cfg.batch_size, cfg.seed)
    n_train = len(dataset.train_x)

    scheme = cfg.hetero.scheme
    base_mode = (
        "perturb"
        if cfg.train_mode == "adversarial_training" or scheme == "p_plus_c"
        else "clean_passthrough"
    )
    poison_mode = "perturb" if scheme == "c_plus_p" else "clean_passthrough"

    records: list[MetricsRecord] = []
    global_step = 0

    metrics_path = os.path.join(cfg.out_dir, "metrics.jsonl")
    steps_path = os.path.join(cfg.out_dir, "steps.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as mf, open(
        steps_path, "w", encoding="utf-8"
    ) as sf:

        def emit(epoch: int, train_loss: float | None) -> None:
            triple = evaluate(
                model, dataset, cfg.eval_attack, cfg.t_steps, cfg.eval_samples
            )
            rec = MetricsRecord(
                epoch=epoch,
                step=global_step,
                train_loss=train_loss,
                test_acc_clean=triple.clean,
                test_acc_fgsm=triple.fgsm,
                test_acc_pgd=triple.pgd,
                wall_time=time.perf_counter() - t0,
            )
            records.append(rec)
            mf.write(_jsonl_line(rec.jsonl_payload()))
            mf.flush()

        emit(0, None)
        for epoch_idx in range(cfg.epochs):
            poison_active = (
                scheme != "none"
                and cfg.hetero.b > 0
                and epoch_idx >= cfg.hetero.start_epoch
            )
            batches = [
                (idx, False) for idx in plan.epoch_batches(n_train, epoch_idx)
            ]
            if poison_active and cfg.hetero.placement == "replace_random":
                pos_rng = np.random.default_rng(
                    (cfg.seed, _REPLACE_POS_TAG, epoch_idx)
                )
                chosen = pos_rng.choice(
                    len(batches),
                    size=min(cfg.hetero.b, len(batches)),
                    replace=False,
                )
                for pos in chosen:
                    batches[pos] = (batches[pos][0], True)
            if poison_active and cfg.hetero.placement == "append_end":
                draw_rng = np.random.default_rng(
                    (cfg.seed, _POISON_DRAW_TAG, epoch_idx)
                )
                for _ in range(cfg.hetero.b):
                    idx = draw_rng.choice(
                        n_train,
                        size=min(cfg.batch_size, n_train),
                        replace=False,
                    )
                    batches.append((idx, True))

            epoch_losses = []
            for batch_index, (idx, poisoned) in enumerate(batches):
                x = _adapt(dataset.train_x[idx], model)
                y = dataset.train_y[idx]
                mode = poison_mode if poisoned else base_mode
                x, y = data.make_poisoned_batch(
                    model, x, y, cfg.train_attack, mode, cfg.t_steps
                )
                value, grads, _ = snn.loss_and_grad(model, x, y, cfg.t_steps)
                optimizer.step(grads)
                global_step += 1
                epoch_losses.append(value)
                sf.write(
                    _jsonl_line(
                        {
                            "epoch": epoch_idx + 1,
                            "step": global_step,
                            "batch_index": batch_index,
                            "poisoned": poisoned,
                            "loss": value,
                        }
                    )
                )
            sf.flush()
            emit(epoch_idx + 1, float(np.mean(epoch_losses)))

    checkpoint.save(os.path.join(cfg.out_dir, "model.ckpt"), model.params())
    wall = time.perf_counter() - t0
    with open(
        os.path.join(cfg.out_dir, "manifest.json"), "w", encoding="utf-8"
    ) as fh:
        json.dump(
            {
                "config": manifest_dict(cfg),
                "num_params": model.num_params,
                "total_steps": global_step,
                "wall_time_seconds": wall,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return RunResult(
        model=model,
        dataset=dataset,
        records=records,
        total_steps=global_step,
        out_dir=cfg.out_dir,
        wall_time=wall,
    )


def train_homogeneous(cfg: ExperimentConfig) -> RunResult:
    if cfg.hetero.scheme != "none":
        raise ConfigError(
            "homogeneous training requires hetero.scheme = none "
            "(use train_hetero for poisoning protocols)"
        )
    return run_experiment(cfg)


def train_hetero(cfg: ExperimentConfig) -> RunResult:
    if cfg.hetero.scheme == "none":
        raise ConfigError("hetero training requires hetero.scheme != none")
    return run_experiment(cfg)


def probe_model(
    model: snn.Model,
    dataset: data.Dataset,
    eval_attack: attacks.AttackConfig,
    t_steps: int,
    probe_batch: int = 128,
    k: int = 5,
    tol: float = 1e-5,
    max_iter: int = 500,
    batch_ids: tuple = ("clean", "fgsm", "pgd"),
    model_tag: str = "",
) -> list:
    """Hessian spectral reports on clean/FGSM/PGD versions of one test batch."""
    n = min(probe_batch, len(dataset.test_x))
    if n == 0:
        raise ValueError("dataset has no test split to probe on")
    x = _adapt(dataset.test_x[:n], model)
    y = dataset.test_y[:n]
    variants = {}
    if "clean" in batch_ids:
        variants["clean"] = x
    if "fgsm" in batch_ids:
        variants["fgsm"] = attacks.fgsm(model, x, y, eval_attack, t_steps)
    if "pgd" in batch_ids:
        variants["pgd"] = attacks.pgd(model, x, y, eval_attack, t_steps)
    reports = []
    for batch_id in batch_ids:
        rep = hessian.spectral_report(
            model,
            variants[batch_id],
            y,
            t_steps,
            k=k,
            tol=tol,
            max_iter=max_iter,
            batch_id=batch_id,
            model_tag=model_tag,
        )
        reports.append(rep)
    return reports


def write_hessian_jsonl(path: str, reports: list, step: int = 0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(
                _jsonl_line(
                    {
                        "step": step,
                        "batch_id": rep.batch_id,
                        "rho": rep.rho,
                        "top5": list(rep.top5),
                        "pr": rep.pr,
                        "converged_flags": [bool(f) for f in rep.converged_flags],
                    }
                )
            )


def mean_rho_at_t(
    model: snn.Model,
    dataset: data.Dataset,
    t_steps: int,
    probe_batch: int = 128,
    n_batches: int = 3,
    tol: float = 1e-5,
    max_iter: int = 500,
) -> tuple:
    """Mean converged top eigenvalue of the train-loss Hessian at a given T.

    Probes `n_batches` contiguous train-set slices (the split is stored
    pre-shuffled). Returns (mean_rho, n_converged, n_batches).
    """
    rhos = []
    converged = 0
    for j in range(n_batches):
        lo = (j * probe_batch) % max(len(dataset.train_x) - probe_batch + 1, 1)
        x = _adapt(dataset.train_x[lo : lo + probe_batch], model)
        y = dataset.train_y[lo : lo + probe_batch]
        rep = hessian.spectral_report(
            model, x, y, t_steps, k=1, tol=tol, max_iter=max_iter
        )
        if rep.converged_flags[0]:
            rhos.append(rep.rho)
            converged += 1
    mean = float(np.mean(rhos)) if rhos else float("nan")
    return mean, converged, n_batches


SWEEP_MODES = ("epsilon", "pgd_k", "timestep")


def sweep_rows(
    cfg: ExperimentConfig,
    mode: str,
    values: list,
    model: snn.Model,
    dataset: data.Dataset,
):
    """Yield (header, row) pairs for a sweep; header comes first, once.

    epsilon:  evaluation triple per perturbation budget
    pgd_k:    evaluation triple per PGD iteration count
    timestep: mean train-loss Hessian top eigenvalue per simulation length,
              probed on the frozen trained parameters
    """
    if mode == "epsilon":
        header = ["epsilon", "acc_clean", "acc_fgsm", "acc_pgd"]
        yield header, None
        for eps in values:
            eval_cfg = replace(cfg.eval_attack, epsilon=float(eps))
            triple = evaluate(
                model, dataset, eval_cfg, cfg.t_steps, cfg.eval_samples
            )
            yield None, [float(eps), triple.clean, triple.fgsm, triple.pgd]
    elif mode == "pgd_k":
        header = ["k_steps", "acc_clean", "acc_fgsm", "acc_pgd"]
        yield header, None
        for k in values:
            eval_cfg = replace(cfg.eval_attack, k_steps=int(k))
            triple = evaluate(
                model, dataset, eval_cfg, cfg.t_steps, cfg.eval_samples
            )
            yield None, [int(k), triple.clean, triple.fgsm, triple.pgd]
    elif mode == "timestep":
        header = ["t_steps", "mean_rho", "converged", "batches"]
        yield header, None
        for t in values:
            mean, conv, total = mean_rho_at_t(model, dataset, int(t))
            yield None, [int(t), mean, conv, total]
    else:
        raise ConfigError(f"unknown sweep mode {mode!r}; pick from {SWEEP_MODES}")


def sweep_to_csv(
    cfg: ExperimentConfig,
    mode: str,
    values: list,
    path: str,
    model: snn.Model | None = None,
    dataset: data.Dataset | None = None,
) -> list:
    """Run a sweep, streaming RFC-4180 rows so partial results survive a
    failure mid-sweep. Trains a model per config when none is supplied."""
    import csv

    if dataset is None:
        dataset = build_dataset_from_spec(cfg.dataset)
    if model is None:
        model = run_experiment(cfg).model
    rows = []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for header, row in sweep_rows(cfg, mode, values, model, dataset):
            if header is not None:
                writer.writerow(header)
            else:
                writer.writerow(row)
                rows.append(row)
            fh.flush()
    return rows
