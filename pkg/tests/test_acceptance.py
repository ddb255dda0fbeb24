"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned here.

The verdict lines are repeated in the terminal summary of any pytest run.
The desk experiment (criteria 5 to 7) runs the real CLI end to end and
takes tens of minutes on a single core.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from rflab import engine as E
from rflab.cli import main
from rflab.dsp import ComplexSeries, decimate_aa, downsample, psd
from rflab.engine import load_params
from rflab.evalkit import confusion, fpr, kpi_line, top1, tpr
from rflab.models import MbedAtn, build_mbed_atn

# pinned tolerances
ORACLE_TOL = 1e-10
ORACLE_SECONDS = 30
GRAD_TOL = 1e-4
GRAD_SECONDS = 120
PAPER_PARAMS, PARAM_TOL = 33.951e6, 0.15
PAPER_FLOPS, FLOP_TOL = 2.181e9, 0.25
PAPER_RATIO, RATIO_TOL = 7.5, 0.15
AA_MIN_DB = 40
PARSEVAL_TOL = 1e-9
TTS_MIN, CHANCE = 0.90, 0.2
DESK_SECONDS = 30 * 60

# Smallest round length the layer table admits; M=1000 cannot pass conv3.
GRAD_M = 2500

DESK = dict(emitters=5, m=10_000, scale=0.25, n=200, n_ttd=100, seed=0)
DESK_CFG = {"lr": 1e-3, "max_epochs": 200, "batch_size": 16, "patience": 25, "seed": 0}

RESULTS = {}
LINES = {}


def verdict(num, name, ok, detail):
    RESULTS[num] = ok
    LINES[num] = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {name} -- {detail}"
    print("\n" + LINES[num])
    return ok


# ---------------------------------------------------------------- 1

def _rand_instances(rng, n=100):
    for _ in range(n):
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k, s, p = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(0, 3))
        length = int(rng.integers(k, 20))
        yield c_in, c_out, k, s, p, length


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(100)
    t0 = time.perf_counter()
    worst = {}
    for c_in, c_out, k, s, p, length in _rand_instances(rng):
        x = rng.normal(size=(c_in, length))
        w, b = rng.normal(size=(c_out, c_in, k)), rng.normal(size=c_out)
        worst["conv1d"] = max(worst.get("conv1d", 0), np.max(np.abs(E.conv1d(x, w, b, s, p).data - oracles.conv1d_loop(x, w, b, s, p))))
        win = int(rng.integers(1, length + 1))
        worst["maxpool1d"] = max(worst.get("maxpool1d", 0), np.max(np.abs(E.maxpool1d(x, win).data - oracles.maxpool_loop(x, win))))
        v, wd, bd = rng.normal(size=length), rng.normal(size=(c_out, length)), rng.normal(size=c_out)
        worst["dense"] = max(worst.get("dense", 0), np.max(np.abs(E.dense(v, wd, bd).data - oracles.dense_loop(v, wd, bd))))
        worst["silu"] = max(worst.get("silu", 0), np.max(np.abs(E.silu(x).data - oracles.silu_loop(x))))
        a = float(rng.normal())
        worst["prelu"] = max(worst.get("prelu", 0), np.max(np.abs(E.prelu(x, np.array([a])).data - oracles.prelu_loop(x, a))))
        hsz, feat, steps, layers = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
        params = E.GruParams.init(feat, hsz, layers, rng)
        seq, h0 = rng.normal(size=(steps, feat)), rng.normal(size=(layers, hsz))
        out, hT = E.gru_forward(seq, params, h0)
        ref_out, ref_hT = oracles.gru_stack_loop(seq, [_split(l) for l in params.layers], h0)
        worst["gru_forward"] = max(worst.get("gru_forward", 0), np.max(np.abs(out - ref_out)), np.max(np.abs(hT - ref_hT)))
    secs = time.perf_counter() - t0
    ok = all(v <= ORACLE_TOL for v in worst.values()) and secs < ORACLE_SECONDS
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {secs:.1f}s"
    assert verdict(1, "oracle equivalence (100 instances per op)", ok, detail)


def _split(layer):
    h = layer.hidden_size
    out = {}
    for i, g in enumerate("urh"):
        sl = slice(i * h, (i + 1) * h)
        out["W" + g], out["R" + g], out["b" + g] = layer.W.data[sl], layer.R.data[sl], layer.b.data[sl]
    return out


# ---------------------------------------------------------------- 2

def _fd_check(build, tensors, rng, h=1e-6):
    """Relative error between tape gradients and central differences of sum(out * r)."""
    out = build()
    r = rng.normal(size=out.shape)
    for t in tensors:
        t.grad = None
    (E.dense(E.flatten(out, batched=False), r.reshape(1, -1), np.zeros(1))).backward(np.ones(1))
    worst = 0.0
    for t in tensors:
        num = oracles.central_diff(lambda: float(np.sum(build().data * r)), t.data, h)
        worst = max(worst, oracles.rel_err(t.grad, num))
    return worst


def test_criterion_2_gradients():
    rng = np.random.default_rng(200)
    T = lambda *s: E.Tensor(rng.normal(size=s), requires_grad=True)
    t0 = time.perf_counter()
    errs = {}
    x, w, b = T(2, 3, 11), T(4, 3, 3), T(4)
    errs["conv1d"] = _fd_check(lambda: E.conv1d(x, w, b, 2, 1), [x, w, b], rng)
    xp = E.Tensor(rng.permutation(60).reshape(2, 3, 10) / 7.0, requires_grad=True)
    errs["maxpool1d"] = _fd_check(lambda: E.maxpool1d(xp, 3), [xp], rng)
    v, wd, bd = T(3, 7), T(5, 7), T(5)
    errs["dense"] = _fd_check(lambda: E.dense(v, wd, bd), [v, wd, bd], rng)
    a = E.Tensor(np.array([0.3]), requires_grad=True)
    errs["prelu"] = _fd_check(lambda: E.prelu(x, a), [x, a], rng)
    errs["relu"] = _fd_check(lambda: E.relu(x), [x], rng)
    errs["silu"] = _fd_check(lambda: E.silu(x), [x], rng)
    errs["dropout"] = _fd_check(lambda: E.dropout(x, 0.4, True, np.random.default_rng(1)), [x], rng)
    errs["concat/take_last"] = _fd_check(lambda: E.take_last(E.concat([x, x], axis=1), axis=2), [x], rng)
    gp = E.GruParams.init(3, 4, 2, rng)
    seq = T(2, 5, 3)
    errs["gru"] = _fd_check(lambda: E.gru(seq, gp, dropout=0.3, training=True, rng=np.random.default_rng(2)), [seq, *gp.tensors()], rng)
    logits = T(4, 5)
    errs["softmax_xent"] = _fd_check(lambda: E.reshape(E.softmax_xent(logits, [0, 1, 2, 4])[0], (1,)), [logits], rng)

    net = MbedAtn(build_mbed_atn(GRAD_M, 0.05, 3), seed=4, dtype=np.float64)
    xin = rng.normal(size=(2, 3, GRAD_M))
    y = np.array([0, 2])

    def loss():
        return float(E.softmax_xent(net.forward(xin), y)[0].data)

    E.softmax_xent(net.forward(xin), y)[0].backward()
    full = 0.0
    for name, p in net.params.items():
        if name.startswith("head1."):
            continue
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(8, flat.size), replace=False)
        num = []
        for k in idx:
            old = flat[k]
            flat[k] = old + 1e-6
            fp = loss()
            flat[k] = old - 1e-6
            fm = loss()
            flat[k] = old
            num.append((fp - fm) / 2e-6)
        full = max(full, oracles.rel_err(p.grad.reshape(-1)[idx], num))
    errs[f"mbed-atn(scale .05, M={GRAD_M})"] = full
    secs = time.perf_counter() - t0
    ok = all(v <= GRAD_TOL for v in errs.values()) and secs < GRAD_SECONDS
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f"; {secs:.1f}s"
    assert verdict(2, "finite-difference gradients", ok, detail)


# ---------------------------------------------------------------- 3

def test_criterion_3_complexity(tmp_path, capsys):
    js = tmp_path / "c.json"
    code = main(["complexity", "--model", "mbed-atn", "--m", "10000", "--scale", "1", "--batch", "2",
                 "--json", str(js), "--out", str(tmp_path)])
    table = capsys.readouterr().out
    rep = json.loads(js.read_text())
    params_ok = abs(rep["params"] - PAPER_PARAMS) / PAPER_PARAMS <= PARAM_TOL
    flops_ok = abs(rep["flops"] - PAPER_FLOPS) / PAPER_FLOPS <= FLOP_TOL
    ratio_ok = abs(rep["reference_ratio"] - PAPER_RATIO) / PAPER_RATIO <= RATIO_TOL
    breakdown_ok = "atn.head.0.dense" in table and "mbed.9.dense" in table and "atn.b2.0.gru" in table
    ok = code == 0 and params_ok and flops_ok and ratio_ok and breakdown_ok
    detail = (f"params {rep['params'] / 1e6:.3f}M ({'ok' if params_ok else 'out'}), "
              f"FLOPs {rep['flops'] / 1e9:.3f}G vs 2.181G ({'ok' if flops_ok else 'out'}), "
              f"ratio {rep['reference_ratio']:.2f}x ({'ok' if ratio_ok else 'out'}), "
              f"breakdown {'ok' if breakdown_ok else 'missing'}")
    with capsys.disabled():
        verdict(3, "complexity reproduction", ok, detail)
    assert ok


# ---------------------------------------------------------------- 4

def test_criterion_4_anti_aliasing_and_parseval():
    fs, factor = 2e6, 40
    n = 400_000
    worst_db = np.inf
    for rel in (1.25, 2.0, 5.0):
        f0 = rel * fs / factor / 2
        x = ComplexSeries(np.exp(2j * np.pi * f0 * np.arange(n) / fs), fs)
        plain = np.mean(np.abs(downsample(x, factor).iq[1000:]) ** 2)
        aa = np.mean(np.abs(decimate_aa(x, factor).iq[1000:]) ** 2)
        worst_db = min(worst_db, 10 * np.log10(plain / aa))
    rng = np.random.default_rng(4)
    worst_rel = 0.0
    for _ in range(200):
        m = int(rng.integers(2, 500))
        fsr = float(rng.uniform(1, 1e6))
        z = ComplexSeries(rng.normal(size=m) + 1j * rng.normal(size=m), fsr)
        lhs = psd(z).sum() * fsr / m
        rhs = np.mean(np.abs(z.iq) ** 2)
        worst_rel = max(worst_rel, abs(lhs - rhs) / rhs)
    ok = worst_db >= AA_MIN_DB and worst_rel <= PARSEVAL_TOL
    assert verdict(4, "anti-aliasing suppression and Parseval", ok,
                   f"min suppression {worst_db:.1f} dB, Parseval rel err {worst_rel:.1e}")


# ---------------------------------------------------------------- 8

def test_criterion_8_kpis():
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(1000):
        L = int(rng.integers(2, 7))
        labels = np.concatenate([np.arange(L), rng.integers(0, L, int(rng.integers(0, 40)))])
        preds = rng.integers(0, L, len(labels))
        tp = np.zeros(L)
        fn = np.zeros(L)
        fp = np.zeros(L)
        tn = np.zeros(L)
        for p, t in zip(preds, labels):
            for c in range(L):
                tp[c] += p == c and t == c
                fn[c] += p != c and t == c
                fp[c] += p == c and t != c
                tn[c] += p != c and t != c
        cm = confusion(preds, labels, L)
        ref = (tp.sum() / (tp.sum() + fn.sum()), np.mean(fp / (fp + tn)), np.mean(tp / (tp + fn)))
        mismatches += (tpr(cm), fpr(cm), top1(cm)) != ref
    line = kpi_line(0.905, 0.011, 0.905)
    ok = mismatches == 0 and line == "0.905 / 0.011 / 0.905"
    assert verdict(8, "KPI correctness", ok, f"{mismatches} mismatches in 1000; fixture row '{line}'")


# ---------------------------------------------------------------- 9

def test_criterion_9_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["simulate", "--profiles", "desk:3", "--n", "12", "--n-ttd", "2", "--m", str(GRAD_M),
                 "--factor", "8", "--seed", "9", "--out", str(data)]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lr": 1e-3, "max_epochs": 3, "seed": 9, "dtype": "float64"}))
    csvs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", "--dataset", str(data / "manifest.json"), "--scale", "0.05", "--stage", "both",
                     "--config", str(cfg), "--out", str(out)]) == 0
        csvs.append(((out / "runrecord_stage1.csv").read_bytes(), (out / "runrecord_stage2.csv").read_bytes()))
    ok = csvs[0] == csvs[1]
    assert verdict(9, "bit-identical RunRecord CSVs in 64-bit", ok,
                   f"stage1 {'equal' if csvs[0][0] == csvs[1][0] else 'differ'}, stage2 {'equal' if csvs[0][1] == csvs[1][1] else 'differ'}")


# ---------------------------------------------------------------- desk experiment (5, 6, 7)

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """Simulate, train and evaluate the desk configurations through the CLI."""
    root = tmp_path_factory.mktemp("desk")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(DESK_CFG))
    runs = {}
    for name, mode, kind in (("aa", "aa", "tensor"), ("plain", "plain", "tensor"), ("iq", "aa", "iq")):
        t0 = time.perf_counter()
        d, ck = root / f"data_{name}", root / f"ck_{name}"
        assert main(["simulate", "--profiles", f"desk:{DESK['emitters']}", "--n", str(DESK["n"]),
                     "--n-ttd", str(DESK["n_ttd"]), "--m", str(DESK["m"]), "--mode", mode, "--kind", kind,
                     "--seed", str(DESK["seed"]), "--out", str(d)]) == 0
        assert main(["train", "--dataset", str(d / "manifest.json"), "--scale", str(DESK["scale"]),
                     "--stage", "both", "--config", str(cfg), "--out", str(ck)]) == 0
        res = {"ck": ck, "seconds": 0.0}
        for scen in ("tts", "ttd"):
            assert main(["eval", "--dataset", str(d / "manifest.json"), "--checkpoint", str(ck),
                         "--scenario", scen, "--report", str(root / f"{name}_{scen}.json")]) == 0
            res[scen] = json.loads((root / f"{name}_{scen}.json").read_text())["top1"]
        res["seconds"] = time.perf_counter() - t0
        runs[name] = res
    return runs


def test_criterion_5_freeze(desk):
    ck = desk["aa"]["ck"]
    first, final = load_params(ck / "stage1.mbat"), load_params(ck / "model.mbat")
    keys = [k for k in first if k.startswith("mbed.")]
    same = all(first[k].tobytes() == final[k].tobytes() for k in keys)
    sums = json.loads((ck / "run.json").read_text())["stage2"]["checksums"]
    ok = same and bool(keys) and sums["mbed_before"] == sums["mbed_after"]
    assert verdict(5, "Mbed frozen during stage two", ok,
                   f"{len(keys)} Mbed tensors byte-identical={same}, checksum before==after={sums['mbed_before'] == sums['mbed_after']}")


def test_criterion_6_desk_end_to_end(desk):
    aa, plain = desk["aa"], desk["plain"]
    checks = {
        "TTS>=0.90": aa["tts"] >= TTS_MIN,
        "TTD<TTS": aa["ttd"] < aa["tts"],
        "TTD>0.2": aa["ttd"] > CHANCE,
        "aa>=plain on TTD": aa["ttd"] >= plain["ttd"],
        "time<30min": aa["seconds"] < DESK_SECONDS,
    }
    detail = (f"aa TTS {aa['tts']:.3f}, aa TTD {aa['ttd']:.3f}, plain TTS {plain['tts']:.3f}, plain TTD {plain['ttd']:.3f}, "
              f"{aa['seconds'] / 60:.1f} min; " + ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert verdict(6, "desk-scale end-to-end", all(checks.values()), detail)


def test_criterion_7_ablation(desk):
    iq, aa = desk["iq"]["tts"], desk["aa"]["tts"]
    assert verdict(7, "raw IQ below feature tensor on TTS", iq < aa, f"IQ {iq:.3f} vs tensor {aa:.3f}")
