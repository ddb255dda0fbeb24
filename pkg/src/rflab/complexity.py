"""Analytic parameter, FLOP and training-memory accounting for a ModelGraph.

One multiply-accumulate counts as two FLOPs. Only the forward pass is
counted. Activation memory counts the stored output of every layer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .models import branch_input_shape, build_mbed_atn, graph_shapes

REFERENCE_PARAMS = 256_000_000
PUBLISHED = {"params": 33.951e6, "flops": 2.181e9}

# per-element cost of cheap layers
ELEMENTWISE_FLOPS = {"relu": 1, "prelu": 2, "dropout": 1, "silu": 4, "softmax": 4, "maxpool": 1,
                     "flatten": 0, "concat": 0}


@dataclass
class LayerCost:
    section: str
    index: int
    kind: str
    out_shape: tuple
    params: int
    flops: int
    activations: int

    @property
    def name(self):
        return f"{self.section}.{self.index}.{self.kind}"


@dataclass
class ComplexityReport:
    M: int
    scale: float
    batch: int
    bytes_per_scalar: int
    layers: list = field(default_factory=list)
    stage1_head_params: int = 0

    @property
    def params(self):
        return sum(l.params for l in self.layers)

    @property
    def flops(self):
        return sum(l.flops for l in self.layers)

    @property
    def activations(self):
        return sum(l.activations for l in self.layers)

    @property
    def memory_stages(self):
        return memory_stages(self.params, self.activations, self.batch, self.bytes_per_scalar)

    @property
    def reference_ratio(self):
        return REFERENCE_PARAMS / self.params

    def to_dict(self):
        return {
            "model": "mbed-atn", "M": self.M, "scale": self.scale, "batch": self.batch,
            "params": self.params, "flops": self.flops, "activations_per_example": self.activations,
            "stage1_head_params": self.stage1_head_params,
            "reference_params": REFERENCE_PARAMS, "reference_ratio": self.reference_ratio,
            "published": PUBLISHED,
            "memory_stages": self.memory_stages,
            "layers": [{"name": l.name, "out_shape": list(l.out_shape), "params": l.params,
                        "flops": l.flops, "activations": l.activations} for l in self.layers],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    def table(self, breakdown=True):
        lines = [f"{'Model':<12}{'FLOPs':>14}{'#Parameters':>16}{'Supported Sample length':>26}",
                 f"{'Mbed-ATN':<12}{_si(self.flops):>14}{_si(self.params):>16}{self.M:>26}"]
        if breakdown:
            lines.append("")
            lines.append(f"{'layer':<24}{'output':>16}{'params':>12}{'FLOPs':>16}")
            for l in self.layers:
                if l.params or l.flops:
                    lines.append(f"{l.name:<24}{'x'.join(map(str, l.out_shape)):>16}{l.params:>12}{l.flops:>16}")
            lines.append("")
            for stage, value in self.memory_stages.items():
                lines.append(f"{stage:<24}{value / 2**20:>14.2f} MiB")
            lines.append(f"{'reference ratio':<24}{self.reference_ratio:>14.2f}x vs {REFERENCE_PARAMS / 1e6:.0f}M")
        return "\n".join(lines)


def _si(v):
    for unit, div in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if v >= div:
            return f"{v / div:.3f}{unit}"
    return str(v)


def layer_cost(spec, in_shape, out_shape):
    """(params, flops) of one layer given its unbatched input and output shapes."""
    k = spec.kind
    n_out = int(np.prod(out_shape))
    if k == "conv1d":
        c_in = in_shape[0]
        params = spec.channels * c_in * spec.kernel + spec.channels
        return params, 2 * spec.channels * c_in * spec.kernel * out_shape[1]
    if k == "dense":
        n_in = in_shape[0]
        return spec.units * n_in + spec.units, 2 * spec.units * n_in
    if k == "gru":
        steps, feat = in_shape
        h = spec.hidden
        params = flops = 0
        for layer in range(spec.layers):
            f = feat if layer == 0 else h
            params += 3 * (h * f + h * h + h)
            flops += steps * (2 * 3 * (h * f + h * h) + 9 * h)
        return params, flops
    if k == "prelu":
        return 1, ELEMENTWISE_FLOPS[k] * n_out
    per = ELEMENTWISE_FLOPS.get(k, 0)
    return 0, per * (int(np.prod(in_shape)) if k == "maxpool" else n_out)


def _section(name, layers, shapes):
    out = []
    for i, (spec, (shp_in, shp_out)) in enumerate(zip(layers, shapes)):
        params, flops = layer_cost(spec, shp_in, shp_out)
        acts = int(np.prod(shp_out))
        if spec.kind == "gru":
            acts = shp_in[0] * spec.hidden * spec.layers  # every layer's hidden sequence is kept
        out.append(LayerCost(name, i, spec.kind, tuple(shp_out), params, flops, acts))
    return out


def analyze(graph, batch=1, bytes_per_scalar=4):
    """Per-layer complexity of the deployed Mbed-ATN (temporary head reported separately)."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    shapes = graph_shapes(graph)
    rep = ComplexityReport(graph.M, graph.scale, batch, bytes_per_scalar)
    rep.layers += _section("mbed", graph.mbed, shapes["mbed"])
    for i, (b, s) in enumerate(zip(graph.branches, shapes["branches"])):
        rep.layers += _section(f"atn.b{i}", b, s)
    rep.layers.append(LayerCost("atn", 0, "concat", (shapes["concat"],), 0, 0, shapes["concat"]))
    rep.layers += _section("atn.head", graph.head, shapes["head"])
    rep.stage1_head_params = sum(l.params for l in _section("head1", graph.stage1_head, shapes["stage1_head"]))
    return rep


def count_params(graph, include_stage1_head=False):
    rep = analyze(graph)
    return rep.params + (rep.stage1_head_params if include_stage1_head else 0)


def count_flops(graph):
    return analyze(graph).flops


def memory_stages(params, activations, batch, bytes_per_scalar=4):
    """Bytes held at each of the five training stages under Adam."""
    p = params * bytes_per_scalar
    a = activations * batch * bytes_per_scalar
    return {
        "model_loading": p,
        "forward_pass": p + a,
        "backward_pass": 2 * p,
        "optimizer": 4 * p,
        "training_iteration": 4 * p + a,
    }


def mbed_atn_report(M, scale=1.0, num_classes=10, batch=1, bytes_per_scalar=4):
    return analyze(build_mbed_atn(M, scale, num_classes), batch, bytes_per_scalar)


__all__ = ["ComplexityReport", "LayerCost", "analyze", "branch_input_shape", "count_flops", "count_params",
           "layer_cost", "mbed_atn_report", "memory_stages"]
