"""Training and evaluation loops driven by a JSON-serializable run config."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetHandle, augment, channel_stats, load_dataset, normalize
from .model import Network
from .optim import SGD, SgdConfig
from .planner import ArchSpec, ScalePolicy, arch_from_config, realize
from .report import emit_metrics
from .tensor import NumericalError, Tape, backward

log = logging.getLogger(__name__)


class DivergenceError(NumericalError):
    """Training loss became non-finite."""


@dataclass
class RunConfig:
    arch: dict | str
    scale: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "RunConfig":
        d = json.loads(Path(path).read_text())
        unknown = set(d) - {"arch", "scale", "optimizer", "data", "run"}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def arch_spec(self) -> ArchSpec:
        return arch_from_config(self.arch)

    @property
    def policy(self) -> ScalePolicy:
        return ScalePolicy.from_dict(self.scale) if self.scale else ScalePolicy()

    @property
    def sgd(self) -> SgdConfig:
        return SgdConfig(**self.optimizer)

    @property
    def seed(self) -> int:
        return int(self.run.get("seed", 0))

    def with_seed(self, seed: int) -> "RunConfig":
        d = json.loads(json.dumps(self.to_dict()))
        d["run"]["seed"] = seed
        return RunConfig(**d)

    def config_id(self) -> str:
        """Hash of everything except the seed."""
        d = json.loads(json.dumps(self.to_dict()))
        d.get("run", {}).pop("seed", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    lr: float
    wall_time: float = 0.0


@dataclass
class RunSummary:
    final_test_acc: float
    best_test_acc: float
    params: int
    bits: int
    flops: int
    seed: int
    config_id: str = ""
    epochs: int = 0
    diverged: bool = False

    @classmethod
    def from_records(cls, records: list[MetricsRecord], accounting: dict, seed: int, config_id: str,
                     diverged: bool = False) -> "RunSummary":
        accs = [r.test_acc for r in records]
        return cls(
            final_test_acc=accs[-1] if accs else float("nan"),
            best_test_acc=max(accs) if accs else float("nan"),
            params=accounting["trainable_scalars"],
            bits=accounting["stored_bits"],
            flops=accounting["inference_flops"],
            seed=seed,
            config_id=config_id,
            epochs=len(records),
            diverged=diverged,
        )


def accuracy(net: Network, images: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    """Top-1 accuracy in percent with eval-mode batch norm."""
    if len(labels) == 0:
        raise ValueError("accuracy on an empty dataset")
    pred = net.predict(images, batch_size)
    return 100.0 * float(np.mean(pred == labels))


def _prepare(cfg: RunConfig, train_ds, test_ds):
    data = cfg.data
    root = data.get("root")
    if train_ds is None:
        train_ds = load_dataset(data.get("dataset", "mnist"), "train", root)
    if test_ds is None:
        test_ds = load_dataset(data.get("dataset", "mnist"), "test", root)
    subset_seed = int(data.get("subset_seed", 0))
    if data.get("subset_size"):
        train_ds = train_ds.subset(int(data["subset_size"]), subset_seed)
    if data.get("test_subset_size"):
        test_ds = test_ds.subset(int(data["test_subset_size"]), subset_seed)
    mean, std = channel_stats(train_ds)
    return train_ds.with_stats(mean, std), test_ds.with_stats(mean, std)


def train(cfg: RunConfig, out_dir=None, train_ds: DatasetHandle | None = None,
          test_ds: DatasetHandle | None = None) -> tuple[RunSummary, list[MetricsRecord]]:
    """Run one seeded training job; writes metrics, checkpoint and summary under ``out_dir``."""
    run = cfg.run
    epochs = int(run.get("epochs", 20))
    batch_size = int(run.get("batch_size", 128))
    seed = cfg.seed
    aug = cfg.data.get("augment", {})
    crop_pad, flip = int(aug.get("crop_pad", 0)), bool(aug.get("flip", False))

    train_ds, test_ds = _prepare(cfg, train_ds, test_ds)
    x_train = normalize(train_ds.images, train_ds.mean, train_ds.std)
    y_train = train_ds.labels.astype(np.int64)
    x_test = normalize(test_ds.images, train_ds.mean, train_ds.std)
    y_test = test_ds.labels.astype(np.int64)

    plan = realize(cfg.arch_spec, cfg.policy)
    net = Network(plan, seed=seed)
    opt = SGD(net.param_groups(), cfg.sgd)
    rng = np.random.default_rng([seed, 1])
    config_id = cfg.config_id()

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg_d = cfg.to_dict()
        cfg_d["data"] = dict(cfg_d["data"], mean=train_ds.mean.tolist(), std=train_ds.std.tolist())
        (out / "config.json").write_text(json.dumps(cfg_d, indent=2, sort_keys=True) + "\n")
        plan.save(out / "plan.json")

    records: list[MetricsRecord] = []
    diverged = False
    for epoch in range(epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(len(y_train))
        loss_sum, correct, seen = 0.0, 0, 0
        lr = cfg.sgd.lr(epoch)
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            xb = x_train[idx]
            if crop_pad or flip:
                xb = augment(xb, rng, crop_pad, flip)
            yb = y_train[idx]
            net.zero_grad()
            with Tape() as tape:
                logits = net.forward(xb, training=True)
                loss = F.softmax_cross_entropy(logits, yb)
            lval = float(loss.data)
            if not np.isfinite(lval):
                diverged = True
                break
            backward(tape, loss, retain_grad=False)
            lr = opt.step(epoch)
            loss_sum += lval * len(idx)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
            seen += len(idx)
        if diverged:
            rec = MetricsRecord(epoch, float("nan"), float("nan"), float("nan"), lr, time.perf_counter() - t0)
            records.append(rec)
            log.error("loss diverged in epoch %d", epoch)
            break
        test_acc = accuracy(net, x_test, y_test)
        rec = MetricsRecord(epoch, loss_sum / seen, 100.0 * correct / seen, test_acc, lr,
                            time.perf_counter() - t0)
        records.append(rec)
        log.info("epoch %d loss %.4f train %.2f test %.2f lr %g", epoch, rec.train_loss, rec.train_acc,
                 rec.test_acc, lr)
        if out is not None:
            emit_metrics(records, out / "metrics.csv")
            _write_timing(records, out / "timing.csv")

    summary = RunSummary.from_records(records, plan.accounting, seed, config_id, diverged)
    if out is not None:
        emit_metrics(records, out / "metrics.csv")
        _write_timing(records, out / "timing.csv")
        save_checkpoint(out / "model.rpnt", net, extra={"mean": train_ds.mean.tolist(), "std": train_ds.std.tolist(),
                                                        "dataset": cfg.data.get("dataset", "mnist")})
        (out / "summary.json").write_text(json.dumps(asdict(summary), indent=2, sort_keys=True) + "\n")
    if diverged:
        raise DivergenceError(f"non-finite training loss in epoch {records[-1].epoch}")
    return summary, records


def _write_timing(records, path) -> None:
    Path(path).write_text("epoch,wall_time\n" + "".join(f"{r.epoch},{r.wall_time:.3f}\n" for r in records))


def evaluate(checkpoint, dataset: DatasetHandle) -> float:
    """Top-1 accuracy (percent) of a saved model on ``dataset``, no augmentation."""
    net, extra = load_checkpoint(checkpoint)
    c, h, w = net.plan.arch.input_shape
    if dataset.images.shape[1:] != (c, h, w):
        raise ValueError(f"dataset images {dataset.images.shape[1:]} do not match model input {(c, h, w)}")
    mean = extra.get("mean", dataset.mean)
    std = extra.get("std", dataset.std)
    if mean is None:
        raise ValueError("checkpoint carries no normalization statistics and the dataset has none")
    x = normalize(dataset.images, mean, std, net.dtype.type)
    return accuracy(net, x, dataset.labels.astype(np.int64))
