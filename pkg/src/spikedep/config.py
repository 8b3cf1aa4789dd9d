"""Run configuration: a plain-text key/value file with a typed schema.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Dotted keys group into sections. Unknown keys are errors (catches typos);
all keys are optional and default to the desk-scale reference task.

Schema (defaults in parentheses):

  model            layer spec string ("mlp:64-128-64-4")
                   - "mlp:IN-H1-...-C": dense net, first number input dim
                   - "conv:CxHxW:c8k3-c16k3-d64-C": conv tokens cNkM
                     (N channels, MxM kernel), dense tokens dN, final
                     number = classes
  dataset          dataset spec ("synth:classes=4,shape=8x8,per_class=500,
                   spread=0.18,seed=0")
                   - synth:... keys classes/shape/per_class/spread/seed
                     (per_class takes one count or colon-separated
                     per-class counts, e.g. per_class=800:400:400:400)
                   - cifar10:train=path1;path2,test=path3
  t_steps          simulation steps per forward (4)
  epochs           training epochs (30)
  seed             master seed (0)
  batch_size       (64)
  eval_samples     test samples used per evaluation (256)
  out_dir          run artifact directory ("runs/latest")

  lif.tau (1.1)  lif.v_threshold (1.0)  lif.v_reset (0.0)
  lif.surrogate_alpha (2.0)

  optimizer.lr (0.1)            optimizer.weight_decay (0.0)
  optimizer.momentum (0.0)      optimizer.dep_enabled (false)
  optimizer.dep_min_rank_dims (2)

  train.mode       vanilla | adversarial_training (vanilla)

  hetero.scheme    none | c_plus_p | p_plus_c (none)
  hetero.start_epoch (0)   hetero.b (0)
  hetero.placement append_end | replace_random (append_end)

  train_attack.*   attack used for AT base streams and poison batches
                   (epsilon 2/255, alpha 2/255, k_steps 1, random_start
                   false); epsilon/alpha accept "N/255" or a float
  eval_attack.*    attack used for evaluation (epsilon 8/255, alpha 0.01,
                   k_steps 7, random_start false)
  attack.method    fgsm | pgd — eval attack family for the fgsm/pgd
                   accuracy columns is fixed; this picks the attack for
                   single-attack commands (fgsm)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import data, snn
from .attacks import AttackConfig
from .dep import OptimizerConfig
from .snn import LifConfig


class ConfigError(ValueError):
    """Bad key, value, or combination in a run configuration."""


def parse_epsilon(text: str) -> float:
    """Accept a plain float or the "N/255" pixel convention."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        try:
            return float(num) / float(den)
        except ValueError as e:
            raise ConfigError(f"bad fraction {text!r}") from e
    try:
        return float(text)
    except ValueError as e:
        raise ConfigError(f"bad float {text!r}") from e


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


# key -> (parser, default)
_SCHEMA = {
    "model": (str, "mlp:64-128-64-4"),
    "dataset": (str, "synth:classes=4,shape=8x8,per_class=500,spread=0.18,seed=0"),
    "t_steps": (int, 4),
    "epochs": (int, 30),
    "seed": (int, 0),
    "batch_size": (int, 64),
    "eval_samples": (int, 256),
    "out_dir": (str, "runs/latest"),
    "lif.tau": (float, 1.1),
    "lif.v_threshold": (float, 1.0),
    "lif.v_reset": (float, 0.0),
    "lif.surrogate_alpha": (float, 2.0),
    "optimizer.lr": (float, 0.1),
    "optimizer.weight_decay": (float, 0.0),
    "optimizer.momentum": (float, 0.0),
    "optimizer.dep_enabled": (_parse_bool, False),
    "optimizer.dep_min_rank_dims": (int, 2),
    "train.mode": (str, "vanilla"),
    "hetero.scheme": (str, "none"),
    "hetero.start_epoch": (int, 0),
    "hetero.b": (int, 0),
    "hetero.placement": (str, "append_end"),
    "train_attack.epsilon": (parse_epsilon, 2.0 / 255.0),
    "train_attack.alpha": (parse_epsilon, 2.0 / 255.0),
    "train_attack.k_steps": (int, 1),
    "train_attack.random_start": (_parse_bool, False),
    "eval_attack.epsilon": (parse_epsilon, 8.0 / 255.0),
    "eval_attack.alpha": (parse_epsilon, 0.01),
    "eval_attack.k_steps": (int, 7),
    "eval_attack.random_start": (_parse_bool, False),
    "attack.method": (str, "fgsm"),
}


@dataclass(frozen=True)
class HeteroSpec:
    scheme: str = "none"
    start_epoch: int = 0
    b: int = 0
    placement: str = "append_end"


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    dataset: str
    t_steps: int
    epochs: int
    seed: int
    batch_size: int
    eval_samples: int
    out_dir: str
    lif: LifConfig
    optimizer: OptimizerConfig
    train_mode: str
    hetero: HeteroSpec
    train_attack: AttackConfig
    eval_attack: AttackConfig
    attack_method: str
    raw: dict = field(default_factory=dict, compare=False)


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines against the schema; returns typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(raw)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from e
    return values


def resolve(values: dict | None = None, **overrides) -> ExperimentConfig:
    """Fill defaults, apply overrides (e.g. seed=3, out_dir=...), validate."""
    merged = {k: default for k, (_, default) in _SCHEMA.items()}
    merged.update(values or {})
    for key, val in overrides.items():
        if val is None:
            continue
        key = key.replace("__", ".")
        if key not in _SCHEMA:
            raise ConfigError(f"unknown override {key!r}")
        parser, _ = _SCHEMA[key]
        merged[key] = parser(val) if isinstance(val, str) else val
    if merged["train.mode"] not in ("vanilla", "adversarial_training"):
        raise ConfigError(f"bad train.mode {merged['train.mode']!r}")
    if merged["hetero.scheme"] not in ("none", "c_plus_p", "p_plus_c"):
        raise ConfigError(f"bad hetero.scheme {merged['hetero.scheme']!r}")
    if merged["hetero.placement"] not in ("append_end", "replace_random"):
        raise ConfigError(f"bad hetero.placement {merged['hetero.placement']!r}")
    if merged["hetero.b"] < 0:
        raise ConfigError("hetero.b must be >= 0")
    if merged["hetero.start_epoch"] > merged["epochs"]:
        raise ConfigError("hetero.start_epoch must be <= epochs")
    if merged["epochs"] < 0:
        raise ConfigError("epochs must be >= 0")
    if merged["attack.method"] not in ("fgsm", "pgd"):
        raise ConfigError(f"bad attack.method {merged['attack.method']!r}")
    lif = LifConfig(
        tau=merged["lif.tau"],
        v_threshold=merged["lif.v_threshold"],
        v_reset=merged["lif.v_reset"],
        surrogate_alpha=merged["lif.surrogate_alpha"],
    )
    opt = OptimizerConfig(
        learning_rate=merged["optimizer.lr"],
        weight_decay=merged["optimizer.weight_decay"],
        momentum=merged["optimizer.momentum"],
        dep_enabled=merged["optimizer.dep_enabled"],
        dep_min_rank_dims=merged["optimizer.dep_min_rank_dims"],
    )
    train_attack = AttackConfig(
        epsilon=merged["train_attack.epsilon"],
        alpha=merged["train_attack.alpha"],
        k_steps=merged["train_attack.k_steps"],
        random_start=merged["train_attack.random_start"],
    )
    eval_attack = AttackConfig(
        epsilon=merged["eval_attack.epsilon"],
        alpha=merged["eval_attack.alpha"],
        k_steps=merged["eval_attack.k_steps"],
        random_start=merged["eval_attack.random_start"],
    )
    hetero = HeteroSpec(
        scheme=merged["hetero.scheme"],
        start_epoch=merged["hetero.start_epoch"],
        b=merged["hetero.b"],
        placement=merged["hetero.placement"],
    )
    return ExperimentConfig(
        model=merged["model"],
        dataset=merged["dataset"],
        t_steps=merged["t_steps"],
        epochs=merged["epochs"],
        seed=merged["seed"],
        batch_size=merged["batch_size"],
        eval_samples=merged["eval_samples"],
        out_dir=merged["out_dir"],
        lif=lif,
        optimizer=opt,
        train_mode=merged["train.mode"],
        hetero=hetero,
        train_attack=train_attack,
        eval_attack=eval_attack,
        attack_method=merged["attack.method"],
        raw=dict(merged),
    )


def load_config(path: str, **overrides) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return resolve(parse_config_text(fh.read()), **overrides)


def with_updates(cfg: ExperimentConfig, **kv) -> ExperimentConfig:
    """New config with raw keys changed (dots spelled as '__'), revalidated."""
    merged = dict(cfg.raw)
    for key, val in kv.items():
        key = key.replace("__", ".")
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        merged[key] = val
    return resolve(merged)


def manifest_dict(cfg: ExperimentConfig) -> dict:
    """Resolved key/value view for the run manifest (provenance record)."""
    return {k: cfg.raw[k] for k in sorted(cfg.raw)}


def _parse_shape(text: str) -> tuple:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError as e:
        raise ConfigError(f"bad shape {text!r}") from e
    if not dims or any(d < 1 for d in dims):
        raise ConfigError(f"bad shape {text!r}")
    return dims


def build_model_from_spec(spec: str, lif: LifConfig, seed: int) -> snn.Model:
    """Instantiate a model from its spec string (see module docstring)."""
    family, _, rest = spec.partition(":")
    if family == "mlp":
        try:
            dims = [int(p) for p in rest.split("-")]
        except ValueError as e:
            raise ConfigError(f"bad mlp spec {spec!r}") from e
        if len(dims) < 2:
            raise ConfigError(f"mlp spec needs input and output dims: {spec!r}")
        return snn.build_mlp(dims, lif, seed)
    if family == "conv":
        shape_text, _, tokens_text = rest.partition(":")
        input_shape = _parse_shape(shape_text)
        if len(input_shape) != 3:
            raise ConfigError(f"conv input shape must be CxHxW: {spec!r}")
        conv, dense, classes = [], [], None
        for token in tokens_text.split("-"):
            if token.startswith("c") and "k" in token:
                ch_text, _, k_text = token[1:].partition("k")
                try:
                    conv.append((int(ch_text), int(k_text)))
                except ValueError as e:
                    raise ConfigError(f"bad conv token {token!r}") from e
            elif token.startswith("d"):
                try:
                    dense.append(int(token[1:]))
                except ValueError as e:
                    raise ConfigError(f"bad dense token {token!r}") from e
            else:
                if classes is not None:
                    raise ConfigError(f"bad conv spec {spec!r}")
                try:
                    classes = int(token)
                except ValueError as e:
                    raise ConfigError(f"bad token {token!r}") from e
        if classes is None:
            raise ConfigError(f"conv spec missing class count: {spec!r}")
        return snn.build_convnet(input_shape, conv, dense, classes, lif, seed)
    raise ConfigError(f"unknown model family {family!r}")


def build_dataset_from_spec(spec: str) -> data.Dataset:
    """Instantiate a dataset from its spec string (see module docstring)."""
    family, _, rest = spec.partition(":")
    kv = {}
    if rest:
        for part in rest.split(","):
            key, eq, val = part.partition("=")
            if not eq:
                raise ConfigError(f"bad dataset option {part!r}")
            kv[key.strip()] = val.strip()
    if family == "synth":
        known = {
            "classes", "shape", "per_class", "spread", "seed",
            "test_fraction", "mean_lo", "mean_hi",
        }
        unknown = set(kv) - known
        if unknown:
            raise ConfigError(f"unknown synth options {sorted(unknown)}")
        pc_raw = kv.get("per_class", "500")
        per_class = (
            [int(p) for p in pc_raw.split(":")] if ":" in pc_raw else int(pc_raw)
        )
        try:
            return data.synth_gaussians(
                num_classes=int(kv.get("classes", "4")),
                shape=_parse_shape(kv.get("shape", "8x8")),
                samples_per_class=per_class,
                spread=float(kv.get("spread", "0.18")),
                seed=int(kv.get("seed", "0")),
                test_fraction=float(kv.get("test_fraction", "0.2")),
                mean_lo=float(kv.get("mean_lo", "0.3")),
                mean_hi=float(kv.get("mean_hi", "0.7")),
            )
        except ValueError as e:
            raise ConfigError(f"bad synth spec {spec!r}: {e}") from e
    if family == "cifar10":
        known = {"train", "test", "limit"}
        unknown = set(kv) - known
        if unknown:
            raise ConfigError(f"unknown cifar10 options {sorted(unknown)}")
        if "train" not in kv:
            raise ConfigError("cifar10 spec needs train=path[;path...]")
        ds = data.load_cifar10_binary(
            kv["train"].split(";"), kv.get("test") or None
        )
        limit = int(kv["limit"]) if "limit" in kv else None
        if limit is not None and limit < len(ds.train_x):
            ds = data.Dataset(
                train_x=ds.train_x[:limit],
                train_y=ds.train_y[:limit],
                test_x=ds.test_x,
                test_y=ds.test_y,
                num_classes=ds.num_classes,
                provenance={**ds.provenance, "limit": limit},
            )
        return ds
    raise ConfigError(f"unknown dataset family {family!r}")
