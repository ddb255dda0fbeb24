"""Two-stage training: embedding with a temporary head, then the ATN on frozen features."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine as E
from .errors import ArgumentError, DivergenceError

MIN_IMPROVEMENT = 1e-6


@dataclass
class TrainConfig:
    lr: float = 1e-4
    max_epochs: int = 2000
    batch_size: int = 16
    seed: int = 0
    patience: int = 25
    stage: str = "both"
    dtype: str = "float32"
    check_freeze: bool = True

    def __post_init__(self):
        # zero is accepted so a run can be replayed without updates
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ArgumentError(f"lr must be finite and >= 0, got {self.lr}")
        if self.max_epochs < 1:
            raise ArgumentError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ArgumentError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.stage not in ("one", "two", "both"):
            raise ArgumentError(f"stage must be one, two or both, got {self.stage!r}")
        if self.dtype not in ("float32", "float64"):
            raise ArgumentError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise ArgumentError(f"unknown TrainConfig field {extra[0]!r}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class RunRecord:
    stage: str
    epochs: list = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    best_val_loss: float = math.inf
    checksums: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def train_loss(self):
        return [e["train_loss"] for e in self.epochs]

    @property
    def val_loss(self):
        return [e["val_loss"] for e in self.epochs]

    @property
    def val_acc(self):
        return [e["val_acc"] for e in self.epochs]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for e in self.epochs:
            w.writerow([e["epoch"], repr(e["train_loss"]), repr(e["val_loss"]), repr(e["val_acc"])])
        return buf.getvalue()

    def summary(self):
        best = self.epochs[self.best_epoch - 1] if self.best_epoch else {}
        return {
            "stage": self.stage, "epochs": len(self.epochs), "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch, "best_val_loss": _json_float(self.best_val_loss),
            "best_val_acc": best.get("val_acc"), "checksums": self.checksums, "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=1, sort_keys=True)


def _json_float(v):
    return v if math.isfinite(v) else str(v)


def stop_monitor(history, patience, min_delta=MIN_IMPROVEMENT):
    """Decide whether to keep training from the validation-loss ``history``.

    Returns ``(decision, reason)`` with decision ``"continue"`` or ``"stop"``.
    """
    if not history:
        raise ArgumentError("stop_monitor needs at least one epoch of history")
    if not math.isfinite(history[-1]):
        return "stop", "diverged"
    best = history[0]
    since = 0
    for v in history[1:]:
        if v <= best - min_delta:
            best, since = v, 0
        else:
            since += 1
    if since >= patience:
        return "stop", "patience"
    return "continue", ""


def _batches(n, size, rng):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _eval(logits_fn, X, y, batch):
    """Mean loss and accuracy in eval mode, accumulated in fixed batch order."""
    total, correct = 0.0, 0
    for lo in range(0, len(y), batch):
        logits = logits_fn(X[lo:lo + batch])
        loss, probs = E.softmax_xent(logits, y[lo:lo + batch])
        total += float(loss.data) * len(probs)
        correct += int(np.sum(np.argmax(probs, 1) == y[lo:lo + batch]))
    return total / len(y), correct / len(y)


def _fit(net, prefixes, train_fn, eval_fn, Xtr, ytr, Xva, yva, cfg, stage, on_epoch=None):
    params = {k: p for pre in prefixes for k, p in net.group(pre).items()}
    opt = E.Adam(params.values(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1 if stage == "one" else 2])
    record = RunRecord(stage=stage, config=cfg.to_dict())
    best_state = {k: p.data.copy() for k, p in params.items()}
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        for b, idx in enumerate(_batches(len(ytr), cfg.batch_size, rng)):
            opt.zero_grad()
            loss, _ = E.softmax_xent(train_fn(Xtr[idx], rng), ytr[idx])
            value = float(loss.data)
            if math.isfinite(value):
                loss.backward()
            if not math.isfinite(value) or not all(p.grad is None or np.isfinite(p.grad).all() for p in params.values()):
                for k, p in params.items():
                    p.data[...] = best_state[k]
                what = "loss" if not math.isfinite(value) else "gradient"
                raise DivergenceError(
                    f"stage {stage}: non-finite training {what} at epoch {epoch}, batch {b} "
                    f"(examples {idx.tolist()[:8]}{'...' if len(idx) > 8 else ''})")
            opt.step()
            total += value * len(idx)
        val_loss, val_acc = _eval(eval_fn, Xva, yva, cfg.batch_size)
        history.append(val_loss)
        record.epochs.append({"epoch": epoch, "train_loss": total / len(ytr), "val_loss": val_loss,
                              "val_acc": val_acc, "seconds": time.perf_counter() - t0})
        if math.isfinite(val_loss) and val_loss < record.best_val_loss:
            record.best_val_loss, record.best_epoch = val_loss, epoch
            best_state = {k: p.data.copy() for k, p in params.items()}
        if on_epoch is not None:
            on_epoch(epoch)
        decision, reason = stop_monitor(history, cfg.patience)
        if decision == "stop":
            record.stop_reason = reason
            break
    else:
        record.stop_reason = "max_epochs"
    for k, p in params.items():
        p.data[...] = best_state[k]
    return record


def _split_arrays(train, val, dtype):
    if len(train) == 0 or len(val) == 0:
        raise ArgumentError("training and validation sets must be nonempty")
    if len(np.unique(train.y)) < 2:
        raise ArgumentError("training set needs at least two classes")
    return train.X.astype(dtype), train.y, val.X.astype(dtype), val.y


def train_stage1(net, train, val, cfg):
    """Train the embedding and temporary head; restores the best-validation weights."""
    Xtr, ytr, Xva, yva = _split_arrays(train, val, net.dtype)
    record = _fit(
        net, ("mbed", "head1"),
        lambda xb, rng: net.forward_stage1(net.forward_mbed(xb, True, rng)),
        lambda xb: net.forward_stage1(net.forward_mbed(xb)),
        Xtr, ytr, Xva, yva, cfg, "one",
    )
    record.checksums = {"mbed": net.checksum("mbed")}
    return record


def embed(net, X, batch=64):
    """Eval-mode embedding vectors for every row of ``X``."""
    X = np.asarray(X, dtype=net.dtype)
    return np.concatenate([net.forward_mbed(X[lo:lo + batch]).data for lo in range(0, len(X), batch)])


def train_stage2(net, train, val, cfg):
    """Train the ATN on cached features from the frozen embedding."""
    Xtr, ytr, Xva, yva = _split_arrays(train, val, net.dtype)
    before = net.checksum("mbed")
    Ftr, Fva = embed(net, Xtr), embed(net, Xva)

    def verify(epoch):
        if net.checksum("mbed") != before:
            raise RuntimeError(f"embedding parameters changed during stage two (epoch {epoch})")

    record = _fit(
        net, ("atn",),
        lambda fb, rng: net.forward_atn(fb, True, rng),
        lambda fb: net.forward_atn(fb),
        Ftr, ytr, Fva, yva, cfg, "two", verify if cfg.check_freeze else None,
    )
    verify(len(record.epochs))
    record.checksums = {"mbed_before": before, "mbed_after": net.checksum("mbed"), "atn": net.checksum("atn")}
    return record


def evaluate_loss(net, ds, stage="two", batch=64):
    """Eval-mode (loss, accuracy) of the stage-one or stage-two classifier on ``ds``."""
    X = ds.X.astype(net.dtype)
    if stage == "one":
        fn = lambda xb: net.forward_stage1(net.forward_mbed(xb))
    else:
        fn = lambda xb: net.forward(xb)
    return _eval(fn, X, ds.y, batch)


def predict(net, X, stage="two", batch=64):
    X = np.asarray(X, dtype=net.dtype)
    out = []
    for lo in range(0, len(X), batch):
        f = net.forward_mbed(X[lo:lo + batch])
        logits = net.forward_stage1(f) if stage == "one" else net.forward_atn(f)
        out.append(np.argmax(logits.data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
