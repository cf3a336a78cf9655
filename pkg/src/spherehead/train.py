"""Model assembly, SGD training loop, evaluation, and multi-seed runs.

A model is a ReLU MLP encoder, an optional unit-sphere embedding step on
its output features, and a classification head consumed by one of the
loss families in :mod:`spherehead.heads`. Everything downstream of a
seed is deterministic: dataset draw, split, parameter init, and the
per-epoch shuffles are all keyed off explicit integers, so a run can be
reproduced exactly from its config echo and seed alone.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import results as results_store
from .data import Dataset, SplitSpec, gen_gaussian_blobs, gen_two_spirals, load_cifar_binary, load_delimited, split
from .errors import ConfigError, LayoutError, ShapeError, StateError, TrainingDiverged
from .heads import FAMILIES, EmbeddingQueue, HeadWeights, MarginConfig, broadface_step, head_forward
from .ndcore import Tensor, backward, expand_rows, matmul, relu
from .stereo import project_batch

__all__ = [
    "ModelConfig",
    "OptimConfig",
    "DataConfig",
    "Model",
    "RunReport",
    "default_learning_rate",
    "build_model",
    "build_datasets",
    "sgd_step",
    "fit",
    "evaluate",
    "run_experiment",
    "experiment_name",
    "emit_table",
    "population_std",
]

# Plateau rule: stop once the best epoch loss has gone PLATEAU_WINDOW
# consecutive epochs without improving by a relative PLATEAU_REL.
PLATEAU_REL = 1e-4
PLATEAU_WINDOW = 10

DATA_KINDS = ("two_spirals", "blobs", "delimited", "cifar10", "cifar100")


def default_learning_rate(family: str) -> float:
    """Family-conditional default step size.

    The margin families train on a compact logit range (cosines scaled
    by s), where larger steps oscillate; the raw-logit baseline
    tolerates a 10x larger step.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    return 1e-3 if family == "cce" else 1e-4


@dataclass(frozen=True)
class ModelConfig:
    """Architecture: encoder widths, feature width, embedding toggle."""

    feature_dim: int
    margin: MarginConfig
    encoder_layers: tuple = (512, 256)
    projection_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(int(w) for w in self.encoder_layers))
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be at least 1, got {self.feature_dim}")
        for w in self.encoder_layers:
            if w < 1:
                raise ConfigError(f"encoder widths must be at least 1, got {w}")
        if not isinstance(self.margin, MarginConfig):
            raise ConfigError("margin must be a MarginConfig")

    @property
    def head_dim(self) -> int:
        """Width the head sees: feature_dim plus the sphere's extra axis."""
        return self.feature_dim + 1 if self.projection_enabled else self.feature_dim

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "encoder_layers": list(self.encoder_layers),
            "projection_enabled": self.projection_enabled,
            "margin": {
                "family": self.margin.family,
                "m": self.margin.m,
                "s": self.margin.s,
                "use_monotone_psi": self.margin.use_monotone_psi,
                "queue_capacity": self.margin.queue_capacity,
            },
        }


@dataclass(frozen=True)
class OptimConfig:
    """SGD-with-momentum settings plus the run seed."""

    learning_rate: float
    epochs: int
    momentum: float = 0.92
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0.0:
            raise ConfigError(f"learning rate must be finite and non-negative, got {self.learning_rate!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class DataConfig:
    """Which dataset to build and how to carve out the test side."""

    kind: str
    params: dict = field(default_factory=dict)
    train_fraction: float = 0.7

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"kind must be one of {DATA_KINDS}, got {self.kind!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train fraction must be in (0, 1), got {self.train_fraction!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(sorted(self.params.items())),
            "train_fraction": self.train_fraction,
        }


class Model:
    """Encoder layers, optional sphere embedding, classification head."""

    __slots__ = ("config", "layers", "head", "class_count")

    def __init__(self, config: ModelConfig, layers: list, head: HeadWeights, class_count: int):
        self.config = config
        self.layers = layers
        self.head = head
        self.class_count = int(class_count)

    def parameters(self) -> list:
        params = []
        for W, b in self.layers:
            params.append(W)
            params.append(b)
        params.append(self.head.W)
        return params

    def forward_features(self, X) -> Tensor:
        """Encode a [B, n] batch into head-ready features.

        Hidden layers are affine + ReLU; the final feature layer stays
        linear so features cover all of feature space, and the sphere
        embedding (when enabled) is applied last.
        """
        if not isinstance(X, Tensor):
            X = Tensor(X)
        if len(X.shape) != 2:
            raise ShapeError(f"expected a [B, n] batch, got shape {X.shape}")
        h = X
        rows = X.shape[0]
        for i, (W, b) in enumerate(self.layers):
            h = matmul(h, W) + expand_rows(b, rows)
            if i < len(self.layers) - 1:
                h = relu(h)
        if self.config.projection_enabled:
            h = project_batch(h)
        return h


def build_model(config: ModelConfig, input_dim: int, class_count: int, seed: int) -> Model:
    """Deterministic init: uniform(+-sqrt(6/fan_in)) weights, zero biases."""
    if input_dim < 1:
        raise ConfigError(f"input_dim must be at least 1, got {input_dim}")
    if class_count < 2:
        raise ConfigError(f"need at least 2 classes, got {class_count}")
    rng = np.random.default_rng(seed)
    widths = (int(input_dim),) + config.encoder_layers + (config.feature_dim,)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        W = Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)
        b = Tensor(np.zeros((1, fan_out)), requires_grad=True)
        layers.append((W, b))
    head_limit = np.sqrt(6.0 / config.head_dim)
    head = HeadWeights(rng.uniform(-head_limit, head_limit, size=(config.head_dim, class_count)))
    return Model(config, layers, head, class_count)


def sgd_step(params: list, grads: list, velocities: list | None, opt: OptimConfig) -> list:
    """One heavy-ball update in place: v <- mu v + g, p <- p - lr v.

    Returns the updated velocity buffers (created on first call).
    """
    if len(params) != len(grads):
        raise StateError(f"{len(params)} parameters but {len(grads)} gradients")
    if velocities is None:
        velocities = [np.zeros_like(p.data) for p in params]
    if len(velocities) != len(params):
        raise StateError(f"{len(params)} parameters but {len(velocities)} velocity buffers")
    for p, g, v in zip(params, grads, velocities):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape or v.shape != p.data.shape:
            raise StateError(
                f"shape mismatch in update: param {p.data.shape}, grad {g.shape}, velocity {v.shape}"
            )
        v *= opt.momentum
        v += g
        p.data -= opt.learning_rate * v
    return velocities


def _batch_loss(model: Model, X: np.ndarray, y: np.ndarray, queue: EmbeddingQueue | None) -> Tensor:
    feats = model.forward_features(Tensor(X))
    cfg = model.config.margin
    if cfg.family == "broadface" and queue is not None:
        loss, _ = broadface_step(feats, model.head, cfg, y, queue)
        return loss
    return head_forward(feats, model.head, cfg, y)


def _dataset_loss(model: Model, ds: Dataset, batch_size: int) -> float:
    """Sample-weighted mean loss over the dataset, no parameter updates.

    broadface is measured against a throwaway queue so bookkeeping from
    the measurement never leaks into training state.
    """
    cfg = model.config.margin
    total = 0.0
    n = len(ds)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        queue = EmbeddingQueue(cfg.queue_capacity) if cfg.family == "broadface" else None
        loss = _batch_loss(model, ds.features.data[start:stop], ds.labels[start:stop], queue)
        total += loss.item() * (stop - start)
    return total / n


def fit(model: Model, train_ds: Dataset, opt: OptimConfig) -> tuple[Model, dict]:
    """Train in place; returns the model and its epoch history.

    Each epoch reshuffles with a generator seeded by (run seed, epoch),
    so histories are bitwise reproducible. Training stops early once the
    loss plateaus, and raises TrainingDiverged the moment a batch loss
    goes non-finite.
    """
    if len(train_ds) == 0:
        raise ConfigError("cannot fit on an empty dataset")
    if train_ds.class_count != model.class_count:
        raise ConfigError(
            f"model has {model.class_count} classes but dataset has {train_ds.class_count}"
        )
    cfg = model.config.margin
    params = model.parameters()
    velocities: list | None = None
    queue = EmbeddingQueue(cfg.queue_capacity) if cfg.family == "broadface" else None
    n = len(train_ds)
    X_all = train_ds.features.data
    y_all = train_ds.labels

    history = {
        "initial_loss": _dataset_loss(model, train_ds, opt.batch_size),
        "epoch_loss": [],
        "epoch_accuracy": [],
        "stopped_early_at": None,
    }
    trajectory: list[float] = [history["initial_loss"]]
    best_loss = np.inf
    stale_epochs = 0

    for epoch in range(1, opt.epochs + 1):
        perm = np.random.default_rng((opt.seed, epoch)).permutation(n)
        epoch_total = 0.0
        for batch_index, start in enumerate(range(0, n, opt.batch_size)):
            idx = perm[start : start + opt.batch_size]
            # a blow-up surfaces as a non-finite loss below, so the
            # intermediate overflow warnings are pure noise
            with np.errstate(over="ignore", invalid="ignore"):
                loss = _batch_loss(model, X_all[idx], y_all[idx], queue)
            value = loss.item()
            trajectory.append(value)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, batch_index, trajectory)
            for p in params:
                p.zero_grad()
            backward(loss)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            velocities = sgd_step(params, grads, velocities, opt)
            epoch_total += value * idx.shape[0]
        epoch_loss = epoch_total / n
        history["epoch_loss"].append(epoch_loss)
        history["epoch_accuracy"].append(evaluate(model, train_ds))
        if not np.isfinite(best_loss) or epoch_loss < best_loss - PLATEAU_REL * max(abs(best_loss), 1e-12):
            best_loss = epoch_loss
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= PLATEAU_WINDOW:
                history["stopped_early_at"] = epoch
                break
    return model, history


_EVAL_CHUNK = 4096


def evaluate(model: Model, ds: Dataset) -> float:
    """Top-1 accuracy under the head's decision rule.

    Margin families classify by angle, so scores use unit weight
    columns; any train-time scale or margin shift cancels at argmax. The
    raw-logit baseline keeps its weights as trained.
    """
    if len(ds) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    W = model.head.W.data
    if model.config.margin.family == "cce":
        columns = W
    else:
        columns = W / np.linalg.norm(W, axis=0, keepdims=True)
    hits = 0
    for start in range(0, len(ds), _EVAL_CHUNK):
        stop = min(start + _EVAL_CHUNK, len(ds))
        feats = model.forward_features(Tensor(ds.features.data[start:stop]))
        pred = np.argmax(feats.data @ columns, axis=1)
        hits += int(np.sum(pred == ds.labels[start:stop]))
    return hits / len(ds)


def build_datasets(cfg: DataConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Materialize the configured dataset and its train/test partition.

    The generation draw and the split shuffle use independent streams
    spawned from the one seed, so neither leaks randomness into the
    other.
    """
    gen_seed, split_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    p = cfg.params
    if cfg.kind == "two_spirals":
        ds = gen_two_spirals(int(p.get("n_per_class", 500)), float(p.get("noise_sd", 0.1)), gen_seed)
    elif cfg.kind == "blobs":
        ds = gen_gaussian_blobs(
            int(p.get("classes", 4)),
            int(p.get("n_per_class", 250)),
            float(p.get("spread", 1.0)),
            float(p.get("radius", 4.0)),
            gen_seed,
        )
    elif cfg.kind == "delimited":
        if "path" not in p:
            raise ConfigError("delimited data needs a 'path' parameter")
        ds = load_delimited(
            p["path"],
            delimiter=p.get("delimiter", ","),
            label_column=int(p.get("label_column", 0)),
            header=bool(p.get("header", False)),
        )
    elif cfg.kind in ("cifar10", "cifar100"):
        if "dir" not in p:
            raise ConfigError(f"{cfg.kind} data needs a 'dir' parameter")
        subset = p.get("subset_per_class")
        down = p.get("downsample_to")
        ds = load_cifar_binary(
            p["dir"],
            cfg.kind,
            subset_per_class=None if subset is None else int(subset),
            downsample_to=None if down is None else int(down),
            subset_seed=gen_seed,
        )
    else:
        raise ConfigError(f"unknown dataset kind {cfg.kind!r}")
    return split(ds, SplitSpec(cfg.train_fraction, split_seed))


def population_std(values) -> float:
    """Population standard deviation (divide by N, not N-1)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("population_std needs at least one value")
    return float(np.sqrt(np.mean((arr - arr.mean()) ** 2)))


def experiment_name(model_cfg: ModelConfig, data_cfg: DataConfig) -> str:
    proj = "proj" if model_cfg.projection_enabled else "noproj"
    return f"{data_cfg.kind}-{model_cfg.margin.family}-{proj}"


@dataclass(frozen=True)
class RunReport:
    """Aggregate of one experiment over its seeds.

    Accuracies and digests are keyed by seed and cover only the seeds
    that finished; diverged seeds are listed separately. Wall time is
    bookkeeping, not identity: fingerprint() ignores it.
    """

    experiment: str
    config: dict
    seeds: tuple
    accuracies: dict
    failed_seeds: tuple
    record_digests: dict
    wall_time_s: float

    @property
    def mean_accuracy(self) -> float:
        if not self.accuracies:
            return float("nan")
        return float(np.mean([self.accuracies[s] for s in sorted(self.accuracies)]))

    @property
    def std_accuracy(self) -> float:
        if not self.accuracies:
            return float("nan")
        return population_std([self.accuracies[s] for s in sorted(self.accuracies)])

    def fingerprint(self) -> str:
        """sha256 over everything reproducible: config, seeds, outcomes."""
        payload = {
            "experiment": self.experiment,
            "config": self.config,
            "seeds": list(self.seeds),
            "accuracies": {str(s): format(a, ".17g") for s, a in sorted(self.accuracies.items())},
            "failed_seeds": list(self.failed_seeds),
            "record_digests": {str(s): d for s, d in sorted(self.record_digests.items())},
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def run_experiment(model_cfg: ModelConfig, data_cfg: DataConfig, opt: OptimConfig,
                   seeds, results_dir: str | None = None,
                   experiment: str | None = None) -> RunReport:
    """Train once per seed, persist each run record, aggregate.

    Per seed, the dataset draw, split, parameter init, and shuffles all
    derive from that seed, and opt.seed is overridden to match so one
    integer pins the whole run. A seed whose training diverges is
    reported as failed rather than aborting the batch.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ConfigError("run_experiment needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"duplicate seeds in {seeds}")
    name = experiment if experiment is not None else experiment_name(model_cfg, data_cfg)
    out_dir = results_dir if results_dir is not None else results_store.default_results_dir()
    config_echo = {
        "model": model_cfg.to_dict(),
        "data": data_cfg.to_dict(),
        "optim": opt.to_dict(),
    }
    accuracies: dict[int, float] = {}
    digests: dict[int, str] = {}
    failed: list[int] = []
    total_wall = 0.0
    for seed in seeds:
        started = time.perf_counter()
        train_ds, test_ds = build_datasets(data_cfg, seed)
        init_seed = int(np.random.SeedSequence(seed).generate_state(3)[2])
        model = build_model(model_cfg, train_ds.dim, train_ds.class_count, init_seed)
        seed_opt = OptimConfig(
            learning_rate=opt.learning_rate,
            epochs=opt.epochs,
            momentum=opt.momentum,
            batch_size=opt.batch_size,
            seed=seed,
        )
        try:
            model, history = fit(model, train_ds, seed_opt)
        except TrainingDiverged:
            failed.append(seed)
            total_wall += time.perf_counter() - started
            continue
        test_acc = evaluate(model, test_ds)
        wall = time.perf_counter() - started
        total_wall += wall
        record = {
            "experiment": name,
            "seed": seed,
            "config": config_echo,
            "wall_time_s": wall,
            "initial_loss": history["initial_loss"],
            "final_train_accuracy": history["epoch_accuracy"][-1],
            "final_test_accuracy": test_acc,
            "stopped_early_at": history["stopped_early_at"],
            "epoch_loss": history["epoch_loss"],
            "epoch_accuracy": history["epoch_accuracy"],
        }
        results_store.save_run(out_dir, record)
        accuracies[seed] = test_acc
        digests[seed] = results_store.record_digest(record)
    return RunReport(
        experiment=name,
        config=config_echo,
        seeds=seeds,
        accuracies=accuracies,
        failed_seeds=tuple(failed),
        record_digests=digests,
        wall_time_s=total_wall,
    )


def _table_key(report: RunReport) -> tuple[str, str, bool]:
    model = report.config["model"]
    return (report.config["data"]["kind"], model["margin"]["family"], bool(model["projection_enabled"]))


def emit_table(reports, layout: str = "paper_table") -> str:
    """Render mean+-std accuracy as a with/without-embedding comparison.

    Every (dataset, family) needs both embedding settings; the strictly
    better mean in a pair is starred. Rows follow the canonical family
    order, datasets sort by name.
    """
    if layout != "paper_table":
        raise LayoutError(f"unknown table layout {layout!r}")
    reports = list(reports)
    if not reports:
        raise LayoutError("no reports to tabulate")
    cells: dict[tuple[str, str, bool], RunReport] = {}
    for report in reports:
        key = _table_key(report)
        if key in cells:
            raise LayoutError(
                f"duplicate report for dataset {key[0]!r}, family {key[1]!r}, projection={key[2]}"
            )
        if not report.accuracies:
            raise LayoutError(f"report {report.experiment!r} has no finished seeds")
        cells[key] = report
    pairs: dict[tuple[str, str], dict[bool, RunReport]] = {}
    for (dataset, family, proj), report in cells.items():
        pairs.setdefault((dataset, family), {})[proj] = report
    for (dataset, family), sides in sorted(pairs.items()):
        for flag, label in ((True, "on"), (False, "off")):
            if flag not in sides:
                raise LayoutError(
                    f"dataset {dataset!r}, family {family!r} is missing its projection={label} run"
                )

    def cell(report: RunReport, other: RunReport) -> str:
        text = f"{100.0 * report.mean_accuracy:.2f}+-{100.0 * report.std_accuracy:.2f}"
        if report.mean_accuracy > other.mean_accuracy:
            text += "*"
        return text

    lines = ["test accuracy, mean+-std over seeds (percent); * marks the better mean"]
    for dataset in sorted({d for d, _ in pairs}):
        lines.append("")
        lines.append(f"dataset: {dataset}")
        lines.append(f"{'loss':<12} {'projection on':>16} {'projection off':>16}")
        for family in FAMILIES:
            sides = pairs.get((dataset, family))
            if sides is None:
                continue
            on, off = sides[True], sides[False]
            lines.append(f"{family:<12} {cell(on, off):>16} {cell(off, on):>16}")
    return "\n".join(lines) + "\n"
