"""Declarative Mbed / ATN graphs and the network that executes them.

A :class:`ModelGraph` is plain data (serializable to JSON); :class:`MbedAtn`
allocates parameters for a graph and runs it on the engine.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine as E
from .engine import GruLayer, GruParams, Tensor
from .errors import ConfigurationError, DimensionError

LAYER_KINDS = {"conv1d", "maxpool", "dense", "prelu", "relu", "silu", "dropout", "gru", "flatten", "concat", "softmax"}
LARGE_M = 1_000_000


@dataclass
class LayerSpec:
    kind: str
    channels: int | None = None
    kernel: int | None = None
    stride: int = 1
    padding: int = 0
    window: int | None = None
    units: int | None = None
    rate: float | None = None
    hidden: int | None = None
    layers: int | None = None
    chunk: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        need = {"conv1d": ("channels", "kernel"), "maxpool": ("window",), "dense": ("units",),
                "dropout": ("rate",), "gru": ("hidden", "layers")}.get(self.kind, ())
        for name in need:
            v = getattr(self, name)
            if v is None:
                raise ConfigurationError(f"{self.kind} layer needs {name}")
            if name != "rate" and v < 1:
                raise ConfigurationError(f"{self.kind}.{name} must be positive, got {v}")
        if self.rate is not None and not 0.0 <= self.rate < 1.0:
            raise ConfigurationError(f"{self.kind}.rate must be in [0, 1), got {self.rate}")
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError(f"{self.kind}: stride must be >= 1 and padding >= 0")

    def to_dict(self):
        d = {"kind": self.kind}
        for k, v in asdict(self).items():
            if k != "kind" and v is not None and not (k == "stride" and v == 1) and not (k == "padding" and v == 0):
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def conv(ch, k, s=1, p=0):
    return LayerSpec("conv1d", channels=ch, kernel=k, stride=s, padding=p)


def scaled(width, scale):
    return max(1, int(math.floor(width * scale + 0.5)))


@dataclass
class ModelGraph:
    M: int
    scale: float
    num_classes: int
    in_rows: int = 3
    mbed: list = field(default_factory=list)
    stage1_head: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    head: list = field(default_factory=list)

    @property
    def embed_width(self):
        return [l for l in self.mbed if l.kind == "dense"][-1].units

    def to_dict(self):
        return {
            "M": self.M, "scale": self.scale, "num_classes": self.num_classes, "in_rows": self.in_rows,
            "mbed": [l.to_dict() for l in self.mbed],
            "stage1_head": [l.to_dict() for l in self.stage1_head],
            "branches": [[l.to_dict() for l in b] for b in self.branches],
            "head": [l.to_dict() for l in self.head],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d):
        ls = lambda xs: [LayerSpec.from_dict(x) for x in xs]
        return cls(d["M"], d["scale"], d["num_classes"], d.get("in_rows", 3), ls(d["mbed"]),
                   ls(d["stage1_head"]), [ls(b) for b in d["branches"]], ls(d["head"]))


# ---------------------------------------------------------------- shapes

def layer_output_shape(spec, shape):
    """Unbatched output shape of ``spec`` for input ``shape``."""
    k = spec.kind
    if k == "conv1d":
        if len(shape) != 2:
            raise ConfigurationError(f"conv1d expects (C, L), got {shape}")
        length = shape[1] + 2 * spec.padding
        if length < spec.kernel:
            raise ConfigurationError(f"conv1d(k={spec.kernel}) receives length {shape[1]}: too short")
        return (spec.channels, (length - spec.kernel) // spec.stride + 1)
    if k == "maxpool":
        if shape[-1] < spec.window:
            raise ConfigurationError(f"maxpool(window={spec.window}) receives length {shape[-1]}: too short")
        return (*shape[:-1], shape[-1] // spec.window)
    if k == "flatten":
        return (int(np.prod(shape)),)
    if k == "dense":
        return (spec.units,)
    if k == "gru":
        return (spec.hidden,)
    return tuple(shape)


def trace_shapes(layers, in_shape):
    """Input and output shapes for each layer, raising on the first layer that cannot fit."""
    out = []
    shape = tuple(in_shape)
    for i, spec in enumerate(layers):
        try:
            new = layer_output_shape(spec, shape)
        except ConfigurationError as exc:
            raise ConfigurationError(f"layer {i} ({spec.kind}): {exc}") from None
        out.append((shape, new))
        shape = new
    return out


def branch_input_shape(branch, width):
    if branch[0].kind == "gru":
        w = branch[0].chunk or 1
        if width % w:
            raise ConfigurationError(f"GRU chunk width {w} does not divide input width {width}")
        return (width // w, w)
    return (1, width)


def graph_shapes(graph):
    """Static per-layer shapes for every part of the graph."""
    mbed = trace_shapes(graph.mbed, (graph.in_rows, graph.M))
    width = mbed[-1][1][0]
    s1 = trace_shapes(graph.stage1_head, (width,))
    branches = [trace_shapes(b, branch_input_shape(b, width)) for b in graph.branches]
    concat_w = sum(int(np.prod(b[-1][1])) for b in branches)
    head = trace_shapes(graph.head, (concat_w,))
    return {"mbed": mbed, "stage1_head": s1, "branches": branches, "concat": concat_w, "head": head}


# ---------------------------------------------------------------- builders

def build_mbed(M, scale=1.0, in_rows=3):
    """Embedding stack: three strided convolutions, pooling, one dense layer.

    Strides are (10, 3, 10) below one million samples and (20, 6, 5) from
    there on, where an extra 5-wide pool is inserted.
    """
    if not 0 < scale <= 1:
        raise ConfigurationError(f"scale must be in (0, 1], got {scale}")
    big = M >= LARGE_M
    s1, s2, s3 = (20, 6, 5) if big else (10, 3, 10)
    layers = [
        conv(scaled(100, scale), 10, s1), LayerSpec("prelu"),
        conv(scaled(50, scale), 6, s2), LayerSpec("prelu"),
        LayerSpec("maxpool", window=8), LayerSpec("dropout", rate=0.5),
        conv(scaled(40, scale), 10, s3), LayerSpec("prelu"),
    ]
    if big:
        layers += [LayerSpec("maxpool", window=5), LayerSpec("dropout", rate=0.5)]
    layers += [LayerSpec("flatten"), LayerSpec("dense", units=scaled(1024, scale)), LayerSpec("relu")]
    trace_shapes(layers, (in_rows, M))
    return layers


def build_atn(in_width, scale=1.0, num_classes=10, gru_chunk=1):
    """Two convolutional branches and a stacked-GRU branch plus the dense head.

    Returns ``(branches, head)``.
    """
    if in_width < 8:
        raise ConfigurationError(f"ATN input width must be >= 8, got {in_width}")
    if num_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
    branches = []
    for k in (7, 3):
        branches.append([
            conv(scaled(15, scale), k, 1, 1), LayerSpec("prelu"), LayerSpec("dropout", rate=0.1),
            conv(scaled(32, scale), k, 1), LayerSpec("prelu"), LayerSpec("maxpool", window=2),
            LayerSpec("dropout", rate=0.5), LayerSpec("flatten"),
        ])
    branches.append([LayerSpec("gru", hidden=scaled(80, scale), layers=3, rate=0.5, chunk=gru_chunk), LayerSpec("silu")])
    head = [
        LayerSpec("dense", units=scaled(1024, scale)), LayerSpec("prelu"), LayerSpec("dropout", rate=0.2),
        LayerSpec("dense", units=scaled(64, scale)), LayerSpec("prelu"), LayerSpec("dropout", rate=0.2),
        LayerSpec("dense", units=num_classes), LayerSpec("softmax"),
    ]
    for b in branches:
        trace_shapes(b, branch_input_shape(b, in_width))
    return branches, head


def build_mbed_atn(M, scale=1.0, num_classes=10, in_rows=3, gru_chunk=1):
    mbed = build_mbed(M, scale, in_rows)
    width = mbed[-2].units
    branches, head = build_atn(width, scale, num_classes, gru_chunk)
    stage1 = [LayerSpec("dense", units=num_classes), LayerSpec("softmax")]
    graph = ModelGraph(M, scale, num_classes, in_rows, mbed, stage1, branches, head)
    graph_shapes(graph)
    return graph


# ---------------------------------------------------------------- network

def _kaiming(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class MbedAtn:
    """Parameters for a :class:`ModelGraph` plus forward passes over batches.

    Parameters live in ``self.params`` (name -> Tensor) grouped by prefix:
    ``mbed.``, ``head1.`` (temporary stage-1 classifier) and ``atn.``.
    """

    def __init__(self, graph, seed=0, dtype=np.float32):
        self.graph = graph
        self.dtype = np.dtype(dtype)
        self.shapes = graph_shapes(graph)
        self.params = {}
        self.grus = {}
        rng = np.random.default_rng(seed)
        self._alloc("mbed", graph.mbed, self.shapes["mbed"], rng)
        self._alloc("head1", graph.stage1_head, self.shapes["stage1_head"], rng)
        for i, (b, shp) in enumerate(zip(graph.branches, self.shapes["branches"])):
            self._alloc(f"atn.b{i}", b, shp, rng)
        self._alloc("atn.head", graph.head, self.shapes["head"], rng)

    def _alloc(self, prefix, layers, shapes, rng):
        dt = self.dtype
        for i, (spec, (shp_in, _)) in enumerate(zip(layers, shapes)):
            key = f"{prefix}.{i}"
            if spec.kind == "conv1d":
                fan = shp_in[0] * spec.kernel
                self._add(f"{key}.w", _kaiming(rng, (spec.channels, shp_in[0], spec.kernel), fan, dt))
                self._add(f"{key}.b", rng.uniform(-1, 1, spec.channels).astype(dt) / math.sqrt(fan))
            elif spec.kind == "dense":
                fan = shp_in[0]
                self._add(f"{key}.w", _kaiming(rng, (spec.units, fan), fan, dt))
                self._add(f"{key}.b", rng.uniform(-1, 1, spec.units).astype(dt) / math.sqrt(fan))
            elif spec.kind == "prelu":
                self._add(f"{key}.a", np.array([0.25], dtype=dt))
            elif spec.kind == "gru":
                gp = GruParams.init(shp_in[1], spec.hidden, spec.layers, rng, dt)
                for j, layer in enumerate(gp.layers):
                    self.params[f"{key}.l{j}.W"] = layer.W
                    self.params[f"{key}.l{j}.R"] = layer.R
                    self.params[f"{key}.l{j}.b"] = layer.b
                self.grus[key] = gp

    def _add(self, name, arr):
        self.params[name] = Tensor(arr, requires_grad=True, name=name)

    # ---- parameter groups

    def group(self, prefix):
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def num_params(self, prefix=None):
        ps = self.params.values() if prefix is None else self.group(prefix).values()
        return int(sum(p.size for p in ps))

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state, strict=True):
        missing = set(self.params) - set(state)
        if strict and missing:
            raise DimensionError(f"state is missing parameters: {sorted(missing)[:5]}")
        for k, arr in state.items():
            if k not in self.params:
                if strict:
                    raise DimensionError(f"unexpected parameter {k!r}")
                continue
            p = self.params[k]
            if tuple(arr.shape) != p.shape:
                raise DimensionError(f"parameter {k}: shape {tuple(arr.shape)} vs {p.shape}")
            p.data[...] = arr

    def checksum(self, prefix=None):
        h = hashlib.sha256()
        for k in sorted(self.params):
            if prefix is None or k.startswith(prefix + "."):
                h.update(k.encode())
                h.update(self.params[k].data.tobytes())
        return h.hexdigest()

    # ---- forward

    def _run(self, prefix, layers, x, training, rng, batched):
        for i, spec in enumerate(layers):
            key = f"{prefix}.{i}"
            k = spec.kind
            if k == "conv1d":
                x = E.conv1d(x, self.params[f"{key}.w"], self.params[f"{key}.b"], spec.stride, spec.padding)
            elif k == "maxpool":
                x = E.maxpool1d(x, spec.window)
            elif k == "dense":
                x = E.dense(x, self.params[f"{key}.w"], self.params[f"{key}.b"])
            elif k == "prelu":
                x = E.prelu(x, self.params[f"{key}.a"])
            elif k == "relu":
                x = E.relu(x)
            elif k == "silu":
                x = E.silu(x)
            elif k == "dropout":
                x = E.dropout(x, spec.rate, training, rng)
            elif k == "flatten":
                x = E.flatten(x, batched=batched)
            elif k == "gru":
                out = E.gru(x, self.grus[key], dropout=spec.rate or 0.0, training=training, rng=rng)
                x = E.take_last(out, axis=-2)
            elif k == "softmax":
                pass  # probabilities are formed by the loss / predict_proba
        return x

    def _check_input(self, x):
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        want = (self.graph.in_rows, self.graph.M)
        if x.shape[-2:] != want or x.data.ndim not in (2, 3):
            raise DimensionError(f"input shape {x.shape} does not match graph input {want}")
        return x

    def forward_mbed(self, x, training=False, rng=None):
        """Embedding vector f for (rows, M) or (N, rows, M) input."""
        x = self._check_input(x)
        return self._run("mbed", self.graph.mbed, x, training, rng, x.data.ndim == 3)

    def forward_stage1(self, f):
        f = f if isinstance(f, Tensor) else Tensor(np.asarray(f, dtype=self.dtype))
        return self._run("head1", self.graph.stage1_head, f, False, None, f.data.ndim == 2)

    def forward_atn(self, f, training=False, rng=None):
        """ATN logits from embedding ``f`` ((W,) or (N, W))."""
        f = f if isinstance(f, Tensor) else Tensor(np.asarray(f, dtype=self.dtype))
        batched = f.data.ndim == 2
        outs = []
        for i, (branch, shp) in enumerate(zip(self.graph.branches, self.shapes["branches"])):
            in_shape = shp[0][0]
            view = E.reshape(f, ((f.shape[0],) if batched else ()) + in_shape)
            outs.append(self._run(f"atn.b{i}", branch, view, training, rng, batched))
        a = E.concat(outs, axis=-1)
        return self._run("atn.head", self.graph.head, a, training, rng, batched)

    def forward(self, x, training=False, rng=None):
        """Full Mbed-ATN logits."""
        return self.forward_atn(self.forward_mbed(x, training, rng), training, rng)

    def predict_proba(self, x, stage="two"):
        if stage == "one":
            logits = self.forward_stage1(self.forward_mbed(x))
        else:
            logits = self.forward(x)
        return E.softmax(logits.data)
