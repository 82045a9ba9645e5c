"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import csv
import time
from pathlib import Path

import numpy as np
import pytest

from builders import leaf, rbi_block, rbi_block_params, tiny_sagcn_unit
from test_sagcn import eq1_oracle
from test_skeleton import oracle_normalized, prufer_trees
from twostream_hgr import cli
from twostream_hgr.cli import synth_spec_from_mapping
from twostream_hgr.data import SplitProtocol, build_split, make_batch, sample_indices, write_manifest
from twostream_hgr.indrnn import (
    IndRnnLayerParams,
    RbiConfig,
    RbiNetwork,
    clamp_recurrent_weights,
    indrnn_forward,
    indrnn_recurrence,
    rbi_block_forward,
)
from twostream_hgr.sagcn import attention_map, sagcn_spatial, sagcn_unit_forward
from twostream_hgr.skeleton import SkeletonTopology, build_hand_topology, normalize_adjacency, partition_adjacency
from twostream_hgr.synthetic import generate_synthetic
from twostream_hgr.tensor import Tensor, finite_diff_check
from twostream_hgr.training import (
    build_model,
    evaluate,
    fuse_and_classify,
    read_key_values,
    train_config_from_mapping,
    train_stream,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_criterion_1_gradient_suite(report):
    start = time.perf_counter()
    unit, A, params = tiny_sagcn_unit(C=2, J=4, seed=0)
    rng = np.random.default_rng(100)
    x, w = leaf(0.3 * rng.normal(size=(2, 2, 4, 4))), rng.normal(size=(2, 2, 4, 4))
    err_unit = finite_diff_check(lambda: (sagcn_unit_forward(x, unit, A, "train") * w).sum(),
                                 list(params.values()) + [x], h=1e-4)

    block = rbi_block(3, seed=0)
    rng = np.random.default_rng(100)
    xb, wb = leaf(rng.normal(size=(2, 3, 6))), rng.normal(size=(2, 3, 6))
    err_block = finite_diff_check(lambda: (rbi_block_forward(xb, block, "train") * wb).sum(),
                                  rbi_block_params(block) + [xb], h=1e-4)

    rng = np.random.default_rng(0)
    W_a, f, wa = leaf(rng.normal(size=(3, 2))), leaf(0.3 * rng.normal(size=(2, 4, 4))), rng.normal(size=(4, 4))
    err_att = finite_diff_check(lambda: (attention_map(f, W_a) * wa).sum(), [W_a, f], h=1e-4)
    elapsed = time.perf_counter() - start
    worst = max(err_unit, err_block, err_att)
    report(1, worst < 1e-4 and elapsed < 60,
           f"max rel err unit {err_unit:.2e}, block {err_block:.2e}, attention {err_att:.2e}; {elapsed:.1f} s")


def test_criterion_2_exactness_suite(report):
    # hand-unrolled three steps
    W = np.array([[0.5, -0.25], [1.0, 0.75]])
    u, b = np.array([0.9, -0.5]), np.array([0.1, -0.2])
    x = np.array([[1.0, 2.0], [-1.0, 0.5], [0.25, -0.75]])
    h, expected = [0.0, 0.0], []
    for t in range(3):
        h = [max(W[n, 0] * x[t, 0] + W[n, 1] * x[t, 1] + u[n] * h[n] + b[n], 0.0) for n in range(2)]
        expected.append(h)
    got = indrnn_forward(Tensor(x), IndRnnLayerParams(Tensor(W), Tensor(u), Tensor(b))).data
    unroll_ok = np.allclose(got, expected, rtol=1e-15, atol=0)

    # graph convolution without attention, bitwise
    rng = np.random.default_rng(2024)
    bitwise = 0
    for _ in range(100):
        C, O, T, J = (int(v) for v in rng.integers(1, 7, size=4))
        f, A = rng.normal(size=(C, T, J)), rng.random((3, J, J))
        Ws = [rng.normal(size=(O, C)) for _ in range(3)]
        A_g = attention_map(Tensor(f), Tensor(rng.normal(size=(O, C))))
        out = sagcn_spatial(Tensor(f), A, A_g, [Tensor(w) for w in Ws], Tensor(np.zeros((O, C)))).data
        bitwise += np.array_equal(out, eq1_oracle(f, A, Ws))

    # attention rows over 1000 unit forward passes
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(1000):
        unit, A, _ = tiny_sagcn_unit(C=2, J=int(rng.integers(1, 8)), seed=i % 10)
        sink = []
        scale = float(rng.choice([0.01, 1.0, 10.0]))
        sagcn_unit_forward(Tensor(scale * rng.normal(size=(2, 2, 5, A.shape[-1]))), unit, A,
                           "train" if i % 2 else "infer", attention_sink=sink)
        worst = max(worst, float(np.abs(sink[0].sum(axis=-1) - 1.0).max()))
    report(2, unroll_ok and bitwise == 100 and worst <= 1e-6,
           f"3-step unroll {'exact' if unroll_ok else 'mismatch'}; bitwise {bitwise}/100; "
           f"max |row sum - 1| over 1000 passes {worst:.1e}")


def test_criterion_3_structural_invariants(report):
    checked, failures = 0, 0
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        for edges in prufer_trees(n):
            topo = SkeletonTopology(n, edges)
            part = normalize_adjacency(partition_adjacency(topo, rng.normal(size=(n, 3))))
            A = part.matrices
            ok = np.array_equal(A[0], np.eye(n)) and np.array_equal(A[1] + A[2], topo.binary_adjacency())
            ok = ok and all(np.allclose(part.normalized[k], oracle_normalized(A[k]), rtol=1e-14, atol=0) for k in range(3))
            checked += 1
            failures += not ok
    report(3, failures == 0 and checked == 1 + 1 + 3 + 16 + 125 + 1296,
           f"{checked} labeled trees on 1..6 nodes, {failures} failures")


def test_criterion_4_long_memory(report):
    N, T = 3, 100
    jac = np.zeros((N, N))
    for i in range(N):
        h0 = Tensor(np.array([0.5, 1.0, 2.0]), requires_grad=True)
        h = indrnn_recurrence(Tensor(np.zeros((1, T, N))), Tensor(np.ones(N)), h0)
        (h[0, T - 1] * Tensor(np.eye(N)[i])).sum().backward()
        jac[i] = h0.grad
    norm = np.linalg.norm(jac, 2)
    net = RbiNetwork(RbiConfig(num_classes=3, input_width=12, units=8, blocks=2))
    for u in net.recurrent_weights():
        u.data[:] = np.random.default_rng(0).uniform(-10, 10, u.shape)
    clamp_recurrent_weights(net, 20)
    top = max(np.abs(u.data).max() for u in net.recurrent_weights())
    ok = np.array_equal(jac, np.eye(N)) and norm == 1.0 and top <= 2 ** (1 / 20) + 1e-12
    report(4, ok, f"||dh_T/dh_0|| = {float(norm)!r} at T=100; max |u| after clamp {top:.6f}")


def test_criterion_5_synthetic_two_stream(report):
    start = time.perf_counter()
    spec, test_fraction, topo_name = synth_spec_from_mapping(read_key_values(CONFIGS / "synth8.cfg"))
    topology = build_hand_topology(topo_name)
    seqs = generate_synthetic(spec, topology)
    split = build_split([s.label for s in seqs], SplitProtocol("synthetic_random", spec.seed, test_fraction))
    data = {k: make_batch([seqs[i] for i in v], topology) for k, v in split.items()}
    pool = make_batch([seqs[i] for i in split["train"] + split["val"]], topology)
    counts = np.bincount(pool.labels).tolist(), np.bincount(data["test"].labels).tolist()
    assert counts == ([40] * 8, [10] * 8)

    models, lines, ok = [], [], True
    for name in ("desk_rbi.cfg", "desk_sagcn.cfg"):
        cfg = train_config_from_mapping(read_key_values(CONFIGS / name))
        assert cfg.max_epochs <= 300
        model, history = train_stream(build_model(cfg, len(spec.classes), topology.joint_count), data, cfg)
        train_acc = evaluate([model], pool).accuracy
        test_acc = evaluate([model], data["test"]).accuracy
        ok &= train_acc >= 0.99 and test_acc >= 0.85
        models.append((model, test_acc))
        lines.append(f"{cfg.stream} train {train_acc:.4f} test {test_acc:.4f} ({len(history.records)} epochs)")
    fused = evaluate([m for m, _ in models], data["test"]).accuracy
    ok &= fused >= max(a for _, a in models) - 0.01
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1800
    report(5, ok, "; ".join(lines) + f"; fused test {fused:.4f}; {elapsed / 60:.1f} min")


def test_criterion_6_determinism(report, tmp_path):
    spec = tmp_path / "spec.cfg"
    spec.write_text((CONFIGS / "synth8.cfg").read_text().replace("samples_per_class = 50", "samples_per_class = 10"))
    data = tmp_path / "data"
    assert cli.main(["synth", "--spec", str(spec), "--out", str(data)]) == 0
    histories, ckpts = {}, {}
    for stream in ("rbi", "sagcn"):
        cfg = tmp_path / f"{stream}.cfg"
        cfg.write_text((CONFIGS / f"desk_{stream}.cfg").read_text() + "max_epochs = 5\n")
        runs = []
        for run in range(2):
            out = tmp_path / f"{stream}{run}.ckpt"
            assert cli.main(["train", "--stream", stream, "--data-root", str(data), "--config", str(cfg),
                             "--seed", "7", "--out", str(out)]) == 0
            with open(out.with_suffix(".history.csv"), newline="") as fh:
                runs.append(list(csv.reader(fh))[:6])
        histories[stream] = runs[0] == runs[1] and len(runs[0]) == 6
        ckpts[stream] = str(tmp_path / f"{stream}0.ckpt")
    outputs = []
    for i in range(2):
        rep = tmp_path / f"report{i}.csv"
        scores = tmp_path / f"scores{i}.csv"
        assert cli.main(["eval", "--checkpoint", ckpts["sagcn"], ckpts["rbi"], "--fuse", "--data-root", str(data),
                         "--report", str(rep), "--scores", str(scores)]) == 0
        outputs.append(rep.read_bytes() + scores.read_bytes())
    same_eval = outputs[0] == outputs[1]
    report(6, all(histories.values()) and same_eval,
           f"history CSVs identical for 5 epochs: {histories}; eval reports identical: {same_eval}")


def test_criterion_7_pipeline_contracts(report, tmp_path):
    sampling = {T: sample_indices(T).tolist() for T in (7, 20, 21, 40, 50)}
    sampling_ok = all(
        idx == ([i * T // 20 for i in range(20)] if T >= 20 else list(range(T)) + [T - 1] * (20 - T))
        for T, idx in sampling.items()
    )
    rows = [(f"seq{i:04d}", "", i % 14, f"x/{i}.skl", 20 + i % 31) for i in range(2800)]
    write_manifest(tmp_path / "manifest.csv", rows)
    with open(tmp_path / "manifest.csv", newline="") as fh:
        labels = [int(r["class_id"]) for r in csv.DictReader(fh)]
    split = build_split(labels, SplitProtocol("dhg_fixed_count", seed=0))
    pool, test = len(split["train"]) + len(split["val"]), len(split["test"])
    fused = fuse_and_classify([0.6, 0.4], [0.3, 0.7])
    ok = sampling_ok and (pool, test) == (1960, 840) and fused == 1
    report(7, ok, f"sampling formula {'ok' if sampling_ok else 'wrong'} for T in (7, 20, 21, 40, 50); "
                  f"split {pool}/{test} (val {len(split['val'])}); fusion (0.18, 0.28) -> class {fused}")
