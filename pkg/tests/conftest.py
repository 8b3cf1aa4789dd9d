"""Shared fixtures: the reference experiment cache and the acceptance summary.

The acceptance tests all exercise the same desk-scale reference task, so
training runs are cached per (dep_enabled, scheme, b, start_epoch, seed) for
the whole session. Unit test modules ignore these fixtures.
"""

import pytest

from spikedep import harness
from spikedep.config import resolve

# One verdict line per acceptance criterion, echoed after the run summary so
# they are visible even when pytest captures stdout.
ACCEPTANCE_LINES = []


def reference_values(**overrides):
    """The frozen reference experiment: 4-class synthetic 8x8 blobs on an
    mlp:64-128-64-4, T=4, 30 epochs, heavy-ball SGD tuned to the edge where
    a single perturbed batch per epoch can tip training into collapse."""
    values = {
        "dataset": "synth:classes=4,shape=8x8,per_class=500,spread=0.18,seed=0",
        "model": "mlp:64-128-64-4",
        "t_steps": 4,
        "epochs": 30,
        "batch_size": 64,
        "eval_samples": 256,
        "lif.tau": 1.1,
        "lif.surrogate_alpha": 12.0,
        "optimizer.lr": 0.015,
        "optimizer.momentum": 0.9,
    }
    values.update(overrides)
    return values


@pytest.fixture(scope="session")
def ref_runs(tmp_path_factory):
    """Lazy cache of reference-task training runs keyed by
    (dep_enabled, scheme, b, start_epoch, seed)."""
    root = tmp_path_factory.mktemp("ref_runs")
    cache = {}

    def get(dep=False, scheme="none", b=0, start_epoch=0, seed=0):
        key = (dep, scheme, b, start_epoch, seed)
        if key not in cache:
            tag = f"d{int(dep)}_{scheme}_b{b}_e{start_epoch}_s{seed}"
            cfg = resolve(
                reference_values(
                    **{
                        "seed": seed,
                        "optimizer.dep_enabled": dep,
                        "hetero.scheme": scheme,
                        "hetero.b": b,
                        "hetero.start_epoch": start_epoch,
                        "out_dir": str(root / tag),
                    }
                )
            )
            if scheme == "none":
                cache[key] = harness.train_homogeneous(cfg)
            else:
                cache[key] = harness.train_hetero(cfg)
        return cache[key]

    return get


def record(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
