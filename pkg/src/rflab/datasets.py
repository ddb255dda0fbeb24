"""Labeled feature-tensor collections and their JSON manifests."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import FeatureTensor, read_feature_tensor, write_feature_tensor
from .errors import FormatError

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


def split_of(example_id):
    """Deterministic 80/10/10 assignment from a hash of the example id."""
    bucket = int(hashlib.sha256(example_id.encode("utf-8")).hexdigest()[:8], 16) % 10
    return "train" if bucket < 8 else ("val" if bucket == 8 else "test")


@dataclass
class Dataset:
    X: np.ndarray  # (n, rows, M)
    y: np.ndarray  # (n,)
    ids: list
    scenario: list
    records: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    @property
    def num_classes(self):
        return int(self.info.get("num_classes", int(self.y.max()) + 1 if len(self.y) else 0))

    def subset(self, mask):
        idx = np.flatnonzero(mask)
        return Dataset(
            self.X[idx], self.y[idx],
            [self.ids[i] for i in idx], [self.scenario[i] for i in idx],
            [self.records[i] for i in idx] if self.records else [],
            dict(self.info),
        )

    def scenario_set(self, name):
        return self.subset(np.array([s == name for s in self.scenario], dtype=bool))

    def split(self, name):
        return self.subset(np.array([split_of(i) == name for i in self.ids], dtype=bool))

    def astype(self, dtype):
        return Dataset(self.X.astype(dtype), self.y, self.ids, self.scenario, self.records, self.info)

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if len(p)]
        info = dict(parts[0].info)
        return Dataset(
            np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]),
            sum((p.ids for p in parts), []), sum((p.scenario for p in parts), []),
            sum((p.records for p in parts), []), info,
        )


def write_dataset(ds, out_dir):
    """Write tensor files plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    examples = []
    for i, ex_id in enumerate(ds.ids):
        rel = f"tensors/{ex_id}.ft"
        write_feature_tensor(out / rel, FeatureTensor(ds.X[i]))
        rec = dict(ds.records[i]) if ds.records else {}
        rec.update({"id": ex_id, "path": rel, "label": int(ds.y[i]), "scenario": ds.scenario[i]})
        examples.append(rec)
    manifest = {"version": MANIFEST_VERSION, **ds.info, "examples": examples}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_dataset(manifest_path, dtype=np.float32):
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{manifest_path}: field 'version' must be {MANIFEST_VERSION}")
    examples = manifest.get("examples")
    if not isinstance(examples, list) or not examples:
        raise FormatError(f"{manifest_path}: field 'examples' must be a non-empty list")
    X, y, ids, scen = [], [], [], []
    for i, ex in enumerate(examples):
        for key in ("id", "path", "label", "scenario"):
            if key not in ex:
                raise FormatError(f"{manifest_path}: examples[{i}] missing field {key!r}")
        X.append(read_feature_tensor(manifest_path.parent / ex["path"]).rows)
        y.append(int(ex["label"]))
        ids.append(ex["id"])
        scen.append(ex["scenario"])
    info = {k: v for k, v in manifest.items() if k not in ("examples", "version")}
    return Dataset(np.stack(X).astype(dtype), np.array(y, dtype=np.int64), ids, scen, examples, info)
