"""Spiking-network training with dominant-eigencomponent gradient
projection, adversarial attacks, Hessian spectral probes, and
heterogeneous-batch poisoning protocols."""

from .attacks import AttackConfig, fgsm, pgd
from .config import (
    ConfigError,
    ExperimentConfig,
    build_dataset_from_spec,
    build_model_from_spec,
    load_config,
    resolve,
)
from .data import BatchPlan, Dataset, load_cifar10_binary, synth_gaussians
from .dep import OptimizerConfig, SgdOptimizer, dep_project, matrixize
from .harness import (
    evaluate,
    probe_model,
    run_experiment,
    sweep_to_csv,
    train_hetero,
    train_homogeneous,
)
from .hessian import curvature_bound_check, hvp, spectral_report
from .snn import (
    LifConfig,
    Model,
    backward,
    build_convnet,
    build_mlp,
    forward,
    loss,
    loss_and_grad,
)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "BatchPlan",
    "ConfigError",
    "Dataset",
    "ExperimentConfig",
    "LifConfig",
    "Model",
    "OptimizerConfig",
    "SgdOptimizer",
    "backward",
    "build_convnet",
    "build_dataset_from_spec",
    "build_mlp",
    "build_model_from_spec",
    "curvature_bound_check",
    "dep_project",
    "evaluate",
    "fgsm",
    "forward",
    "hvp",
    "load_cifar10_binary",
    "load_config",
    "loss",
    "loss_and_grad",
    "matrixize",
    "pgd",
    "probe_model",
    "resolve",
    "run_experiment",
    "spectral_report",
    "sweep_to_csv",
    "synth_gaussians",
    "train_hetero",
    "train_homogeneous",
    "__version__",
]
