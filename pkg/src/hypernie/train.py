"""Training loop, early stopping, k-fold driver and checkpoints.

Targets are trained as ``log1p(score)`` standardized with the training
split's mean and std. Rank metrics are computed between raw model outputs
and raw scores; both metrics are invariant to that monotone transform.

Checkpoint layout (little-endian)::

    b"HHKC"  u32 version=1
    u64 len  utf-8 config echo (key = value lines)
    u64 count of tensors, then per tensor:
        u64 len  utf-8 name
        u32 ndim, ndim x u64 shape
        matrix block in the binary feature format (HHKF, rows, cols, f64 data)
"""

from __future__ import annotations

import copy
import io
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .evaluation.metrics import DEFAULT_KS, MetricReport, evaluate_scores, ndcg_at_k, spearman
from .fusion import DualModel, ModelConfig, total_loss
from .hhkg import DataError
from .ingest import read_matrix_block, write_matrix_block
from .numsub.optim import Adam
from .numsub.tensor import no_grad

CKPT_MAGIC = b"HHKC"
LOG_COLUMNS = ("epoch", "loss_fusion", "loss_contrastive", "loss_struct", "loss_semantic",
               "val_spearman", "val_ndcg100", "val_loss_fusion")


class TrainingDiverged(FloatingPointError):
    """Non-finite loss; ``model`` holds the last good parameters."""

    def __init__(self, msg, model=None, log=None):
        super().__init__(msg)
        self.model = model
        self.log = log


@dataclass
class TrainConfig:
    lr: float = 0.005
    weight_decay: float = 5e-4
    max_epochs: int = 10000
    patience: int = 2000
    contrastive_batch: int = 2000
    alpha: float = 0.1
    beta: float = 0.2
    use_contrastive: bool = True
    use_unimodal: bool = True
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be nonnegative")
        if self.max_epochs < 1 or self.patience < 1 or self.contrastive_batch < 1:
            raise ValueError("max_epochs, patience and contrastive_batch must be >= 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")

    def echo(self) -> str:
        flat = {k: v for k, v in asdict(self).items() if k != "model"}
        flat.update(asdict(self.model))
        return "".join(f"{k} = {v}\n" for k, v in flat.items())


def config_from_echo(text: str) -> TrainConfig:
    """Rebuild a :class:`TrainConfig` from the ``key = value`` lines of :meth:`TrainConfig.echo`."""
    raw = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            raw[k.strip()] = v.strip()
    model_kw, train_kw = {}, {}
    for f in fields(ModelConfig):
        if f.name in raw:
            model_kw[f.name] = _coerce(raw[f.name], f.type)
    for f in fields(TrainConfig):
        if f.name in raw and f.name != "model":
            train_kw[f.name] = _coerce(raw[f.name], f.type)
    return TrainConfig(model=ModelConfig(**model_kw), **train_kw)


def _coerce(value: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        if value.lower() in ("true", "1", "yes", "on"):
            return True
        if value.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value


@dataclass
class TargetTransform:
    mean: float
    std: float

    @classmethod
    def fit(cls, scores):
        y = np.log1p(scores)
        sd = float(y.std())
        return cls(float(y.mean()), sd if sd > 0 else 1.0)

    def __call__(self, scores):
        return (np.log1p(scores) - self.mean) / self.std


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    final: dict = field(default_factory=dict)   # split -> metrics of the restored model
    transform: TargetTransform = None

    def append(self, row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_tsv(self, config_echo="") -> str:
        lines = [f"# config\t{ln}" for ln in config_echo.splitlines() if ln.strip()]
        lines.append("\t".join(LOG_COLUMNS))
        for r in self.rows:
            lines.append("\t".join([str(r["epoch"])] + [f"{r[c]:.8g}" for c in LOG_COLUMNS[1:]]))
        for split, m in self.final.items():
            lines.append(f"# final\t{split}\t" + "\t".join(f"{k}={v:.6f}" for k, v in m.items()))
        lines.append(f"# best_epoch\t{self.best_epoch}\tstopped_epoch\t{self.stopped_epoch}")
        return "\n".join(lines) + "\n"


def build_model(features, config: TrainConfig, rng=None) -> DualModel:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return DualModel(features.X1.shape[1], features.X2.shape[1], features.n_types,
                     config.model, rng)


def predict(model, hg, features, chunk_size=None) -> np.ndarray:
    """Fused importance logits in eval mode."""
    model.eval()
    with no_grad():
        out = model(hg, features, chunk_size=chunk_size)
    return out.s_fusion.data.astype(np.float64)


def split_metrics(pred, score_vec, nodes, ks=DEFAULT_KS) -> dict:
    if len(nodes) < 2:
        return {}
    return evaluate_scores(pred[nodes], score_vec[nodes], ks)


def train(hg, features, labels, config: TrainConfig, split=None, verbose=False):
    """Fit one model; returns ``(model, TrainingLog)``.

    ``split`` is ``(train_nodes, val_nodes, test_nodes)``; defaults to the
    label set's canonical split. Parameters are restored to the epoch with
    the lowest validation fusion loss.
    """
    features.check(hg)
    train_nodes, val_nodes, test_nodes = split if split is not None else labels.canonical_split()
    if len(train_nodes) == 0 or len(val_nodes) == 0:
        raise DataError("train and validation splits must be non-empty")
    score_vec = labels.score_vector(hg.n_nodes)
    transform = TargetTransform.fit(score_vec[train_nodes])
    t_train = transform(score_vec[train_nodes])
    t_val = transform(score_vec[val_nodes])

    root = np.random.default_rng(config.seed)
    init_rng, drop_rng, batch_rng = root.spawn(3)
    model = build_model(features, config, init_rng)
    opt = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    log = TrainingLog(transform=transform)
    batch_size = min(config.contrastive_batch, hg.n_nodes)

    best = np.inf
    best_state = model.state_dict()
    for epoch in range(config.max_epochs):
        model.eval()
        with no_grad():
            ev = model(hg, features)
            val_loss = float(np.mean((ev.s_fusion.data[val_nodes] - t_val) ** 2))
        val_pred = ev.s_fusion.data.astype(np.float64)
        row = {"epoch": epoch, "val_loss_fusion": val_loss,
               "val_spearman": spearman(val_pred[val_nodes], score_vec[val_nodes])
               if len(val_nodes) > 1 else float("nan"),
               "val_ndcg100": ndcg_at_k(val_pred[val_nodes], score_vec[val_nodes], 100)}
        if not np.isfinite(val_loss):
            model.load_state_dict(best_state)
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", model, log)
        if val_loss < best:
            best, log.best_epoch = val_loss, epoch
            best_state = model.state_dict()

        model.train()
        out = model(hg, features, rng=drop_rng)
        batch = batch_rng.choice(hg.n_nodes, size=batch_size, replace=False)
        parts = model.loss_parts(out, t_train, train_nodes, batch)
        loss = total_loss(parts, config.alpha, config.beta, config.use_contrastive,
                          config.use_unimodal)
        row.update(parts.values())
        log.append(row)
        if not np.isfinite(loss.data):
            model.load_state_dict(best_state)
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", model, log)
        opt.zero_grad()
        loss.backward()
        try:
            opt.step()
        except FloatingPointError as exc:
            model.load_state_dict(best_state)
            raise TrainingDiverged(str(exc), model, log) from exc
        if verbose and epoch % 50 == 0:
            print(f"epoch {epoch}: loss={float(loss.data):.4f} val={val_loss:.4f}")
        log.stopped_epoch = epoch
        if epoch - log.best_epoch >= config.patience:
            break

    model.load_state_dict(best_state)
    pred = predict(model, hg, features)
    for name, nodes in (("train", train_nodes), ("val", val_nodes), ("test", test_nodes)):
        m = split_metrics(pred, score_vec, nodes)
        if m:
            log.final[name] = m
    return model, log


def _train_fold(args):
    hg, features, labels, config, f = args
    split = labels.fold_split(f) if labels.k_folds > 1 else labels.canonical_split()
    model, log = train(hg, features, labels, config, split)
    return model.state_dict(), log, split


def train_folds(hg, features, labels, config: TrainConfig, jobs=1):
    """Train one model per fold; returns ``(models, logs, splits, MetricReport)``.

    ``jobs > 1`` trains folds in worker processes; results are identical to
    the sequential run since each fold owns its RNG streams.
    """
    k = max(labels.k_folds, 1)
    tasks = [(hg, features, labels, config, f) for f in range(k)]
    if jobs > 1 and k > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_fold, tasks))
    else:
        results = [_train_fold(t) for t in tasks]
    models, logs, splits = [], [], []
    report = MetricReport()
    for state, log, split in results:
        model = build_model(features, config)
        model.load_state_dict(state)
        models.append(model)
        logs.append(log)
        splits.append(split)
        report.add(log.final["test"])
    return models, logs, splits, report


# checkpoints ---------------------------------------------------------------------


def save_checkpoint(path, model, config: TrainConfig, transform: TargetTransform = None,
                    extra=None):
    echo = config.echo()
    if transform is not None:
        echo += f"target_mean = {transform.mean!r}\ntarget_std = {transform.std!r}\n"
    for k, v in (extra or {}).items():
        echo += f"{k} = {v}\n"
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", 1))
    raw = echo.encode("utf-8")
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    state = model.state_dict()
    buf.write(struct.pack("<Q", len(state)))
    for name, arr in state.items():
        b = name.encode("utf-8")
        buf.write(struct.pack("<Q", len(b)))
        buf.write(b)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        rows = arr.shape[0] if arr.ndim else 1
        write_matrix_block(buf, np.asarray(arr, dtype=np.float64).reshape(rows, -1))
    Path(path).write_bytes(buf.getvalue())


def _read_header(fh, path):
    if fh.read(4) != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != 1:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack("<Q", fh.read(8))
    return fh.read(n).decode("utf-8")


def checkpoint_echo(path) -> dict:
    """The ``key = value`` echo stored in a checkpoint, as a dict of strings."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        echo = _read_header(fh, path)
    return dict(line.split(" = ", 1) for line in echo.splitlines() if " = " in line)


def load_checkpoint(path):
    """Return ``(state, config, transform)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        echo = _read_header(fh, path)
        (count,) = struct.unpack("<Q", fh.read(8))
        state = {}
        for _ in range(count):
            (n,) = struct.unpack("<Q", fh.read(8))
            name = fh.read(n).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            state[name] = read_matrix_block(fh, f"{path}:{name}").reshape(shape)
    config = config_from_echo(echo)
    extra = dict(line.split(" = ", 1) for line in echo.splitlines() if " = " in line)
    transform = None
    if "target_mean" in extra:
        transform = TargetTransform(float(extra["target_mean"]), float(extra["target_std"]))
    return state, config, transform


def model_from_checkpoint(path, features):
    state, config, transform = load_checkpoint(path)
    model = build_model(features, config)
    expected = model.state_dict()
    for name, arr in state.items():
        if name in expected and expected[name].shape != arr.shape:
            raise DataError(f"checkpoint tensor {name!r} has shape {arr.shape}, "
                            f"model expects {expected[name].shape}")
    model.load_state_dict({k: v.astype(expected[k].dtype) if k in expected else v
                           for k, v in state.items()})
    return model, config, transform


def clone_model(model):
    return copy.deepcopy(model)
