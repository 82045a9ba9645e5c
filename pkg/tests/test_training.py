import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from twostream_hgr import cli, training
from twostream_hgr.data import SplitProtocol, build_split, make_batch
from twostream_hgr.model import StreamModel
from twostream_hgr.skeleton import build_hand_topology
from twostream_hgr.synthetic import SyntheticSpec, generate_synthetic
from twostream_hgr.tensor import Tensor
from twostream_hgr.training import (
    DivergenceError,
    TrainConfig,
    build_model,
    evaluate,
    fuse_and_classify,
    fuse_scores,
    read_key_values,
    report_from_predictions,
    train_config_from_mapping,
    train_stream,
    write_key_values,
)

DHG = build_hand_topology("DHG22")
TINY = {
    "sagcn": dict(channels=(4, 4, 8), strides=(1, 2, 1), kernel_t=3),
    "rbi": dict(units=4, blocks=1),
}


def synthetic_splits(classes, per_class=10, noise=0.02, seed=0, test_fraction=0.2):
    seqs = generate_synthetic(SyntheticSpec(classes=classes, noise=noise, samples_per_class=per_class, seed=seed), DHG)
    split = build_split([s.label for s in seqs], SplitProtocol("synthetic_random", seed, test_fraction))
    return {k: make_batch([seqs[i] for i in v], DHG) for k, v in split.items() if v}


@pytest.fixture(scope="module")
def small_data():
    return synthetic_splits(("swipe_left", "swipe_right", "grab"), per_class=8)


def tiny_config(stream, **kw):
    return TrainConfig(stream=stream, batch_size=8, **{**TINY[stream], **kw})


# -- configuration ------------------------------------------------------------------

def test_stream_defaults():
    s, r = TrainConfig(stream="sagcn"), TrainConfig(stream="rbi")
    assert (s.lr, s.dropout, r.lr, r.dropout) == (2e-3, 0.5, 2e-4, 0.2)
    assert s.lr_decay == 0.1 and s.decay_policy == "plateau" and s.plateau_patience == 10
    assert s.max_epochs == 300 and s.early_stop == 50


@pytest.mark.parametrize("kw", [dict(lr=-1.0), dict(lr_decay=1.0), dict(lr_decay=0.0),
                                dict(decay_policy="cosine"), dict(stream="cnn"), dict(batch_size=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_key_value_round_trip(tmp_path):
    cfg = TrainConfig(stream="rbi", lr=0.01, channels=(1, 2, 3), center_wrist=True, decay_policy="literal")
    write_key_values(tmp_path / "c.cfg", cfg)
    assert train_config_from_mapping(read_key_values(tmp_path / "c.cfg")) == cfg


def test_key_value_errors(tmp_path):
    (tmp_path / "bad.cfg").write_text("stream = rbi\nnonsense\n")
    with pytest.raises(ValueError, match=":2:"):
        read_key_values(tmp_path / "bad.cfg")
    with pytest.raises(ValueError, match="unknown config key"):
        train_config_from_mapping({"learning_rate": "0.1"})


# -- training loop ----------------------------------------------------------------------

@pytest.mark.parametrize("stream", ["sagcn", "rbi"])
def test_zero_learning_rate_changes_nothing(stream, small_data):
    cfg = tiny_config(stream, lr=0.0, max_epochs=3, dropout=0.0)
    model = build_model(cfg, 3, 22)
    before = {n: p.data.copy() for n, p in model.parameters().items()}
    model, history = train_stream(model, small_data, cfg)
    for name, p in model.parameters().items():
        assert np.array_equal(p.data, before[name]), name
    assert [r.lr for r in history.records] == [0.0] * 3


@pytest.mark.parametrize("stream", ["sagcn", "rbi"])
def test_same_seed_same_losses(stream, small_data):
    runs = []
    for _ in range(2):
        cfg = tiny_config(stream, max_epochs=3, seed=11)
        _, history = train_stream(build_model(cfg, 3, 22), small_data, cfg)
        runs.append(history)
    assert runs[0].step_losses[:5] == runs[1].step_losses[:5]
    assert [r.loss for r in runs[0].records] == [r.loss for r in runs[1].records]


def test_recurrent_weights_stay_bounded(small_data):
    cfg = tiny_config("rbi", lr=0.5, max_epochs=2)
    model, _ = train_stream(build_model(cfg, 3, 22), small_data, cfg)
    assert max(np.abs(u.data).max() for u in model.recurrent_weights()) <= 2 ** (1 / 20) + 1e-12


def test_stream_mismatch_rejected(small_data):
    with pytest.raises(ValueError):
        train_stream(build_model(tiny_config("rbi"), 3, 22), small_data, tiny_config("sagcn"))


def test_divergence_reports_step(small_data):
    cfg = tiny_config("rbi", max_epochs=1)
    model = build_model(cfg, 3, 22)
    model.fc_b.data[0] = np.inf
    with pytest.raises(DivergenceError) as info:
        train_stream(model, small_data, cfg)
    assert info.value.step == 1


def test_literal_policy_decays_on_improvement(small_data):
    cfg = tiny_config("rbi", max_epochs=8, lr=0.01, decay_policy="literal")
    _, history = train_stream(build_model(cfg, 3, 22), small_data, cfg)
    lrs = [r.lr for r in history.records]
    vals = [r.val_acc for r in history.records]
    for i in range(1, len(lrs) - 1):
        if vals[i] > max(vals[:i]):
            assert lrs[i + 1] == pytest.approx(lrs[i] * 0.1)


def test_plateau_policy_and_early_stop(small_data, monkeypatch):
    monkeypatch.setattr(training, "_loss_and_accuracy", lambda model, data, batch_size: (1.0, 0.5))
    cfg = tiny_config("rbi", max_epochs=40, lr=0.01, plateau_patience=2, early_stop=5)
    _, history = train_stream(build_model(cfg, 3, 22), small_data, cfg)
    assert [r.epoch for r in history.records] == [1, 2, 3, 4, 5, 6]
    assert [r.lr for r in history.records] == pytest.approx([1e-2, 1e-2, 1e-2, 1e-3, 1e-3, 1e-4])
    assert history.best_epoch == 1


def test_history_csv(tmp_path, small_data):
    cfg = tiny_config("rbi", max_epochs=2)
    _, history = train_stream(build_model(cfg, 3, 22), small_data, cfg)
    history.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,train_acc,val_acc,lr" and len(lines) == 3


@pytest.mark.filterwarnings("ignore:split 'test' has no sequences")
@pytest.mark.parametrize("stream, extra", [
    ("rbi", dict(units=16, blocks=2)),
    ("sagcn", dict(channels=(8, 8, 16), strides=(1, 2, 1), kernel_t=5, dropout=0.0)),
])
def test_four_swipes_are_learnable(stream, extra):
    data = synthetic_splits(("swipe_left", "swipe_right", "swipe_up", "swipe_down"), per_class=40, noise=0.01,
                            test_fraction=0.0)
    cfg = TrainConfig(stream=stream, batch_size=32, max_epochs=30, **extra)
    model, _ = train_stream(build_model(cfg, 4, 22), data, cfg)
    assert evaluate([model], data["train"]).accuracy >= 0.99


# -- fusion ------------------------------------------------------------------------------

def test_fusion_hand_example():
    np.testing.assert_allclose(fuse_scores([0.6, 0.4], [0.3, 0.7]), [0.18, 0.28])
    assert fuse_and_classify([0.6, 0.4], [0.3, 0.7]) == 1


def test_fusion_degenerate_cases():
    assert fuse_and_classify([0, 0, 1, 0], [0.4, 0.3, 0.1, 0.2]) == 2
    assert fuse_and_classify([0.1, 0.5, 0.4], [1 / 3] * 3) == 1
    assert fuse_and_classify([0.5, 0.5], [0.5, 0.5]) == 0


def test_fusion_errors():
    with pytest.raises(ValueError):
        fuse_and_classify([0.5, 0.5], [0.2, 0.3, 0.5])
    with pytest.raises(ValueError):
        fuse_and_classify([1.5, 0.0], [0.5, 0.5])


scores = hnp.arrays(np.float64, st.integers(2, 10), elements=st.floats(0.01, 1.0))


@settings(max_examples=200)
@given(scores, st.data(), st.floats(0.01, 1.0))
def test_fusion_ignores_positive_scaling(v1, data, c):
    v2 = data.draw(hnp.arrays(np.float64, v1.shape, elements=st.floats(0.01, 1.0)))
    assert fuse_and_classify(v1 * c, v2) == fuse_and_classify(v1, v2)
    assert fuse_and_classify(v1, v2 * c) == fuse_and_classify(v1, v2)


@settings(max_examples=200)
@given(scores, st.data())
def test_agreeing_streams_keep_their_choice(v1, data):
    v2 = data.draw(hnp.arrays(np.float64, v1.shape, elements=st.floats(0.01, 1.0)))
    if np.argmax(v1) == np.argmax(v2):
        assert fuse_and_classify(v1, v2) == np.argmax(v1)


# -- evaluation ---------------------------------------------------------------------------

class FixedScores(StreamModel):
    """Returns stored log-scores, so predict_proba reproduces the stored distribution."""

    kind = "rbi"

    def __init__(self, probs):
        from dataclasses import make_dataclass

        cfg = make_dataclass("Cfg", [("num_classes", int), ("dtype", str)])(probs.shape[1], "float64")
        super().__init__(cfg)
        self.probs = probs
        self.cursor = 0

    def logits(self, inputs, mode="infer", rng=None):
        n = len(inputs)
        out = np.log(self.probs[self.cursor:self.cursor + n])
        self.cursor += n
        return Tensor(out)


def labeled_batch(labels):
    from twostream_hgr.data import GestureBatch

    n = len(labels)
    return GestureBatch(np.zeros((n, 3, 20, 1)), np.zeros((n, 20, 6)), np.asarray(labels), np.zeros((n, 3, 1, 1)))


def test_confusion_invariants():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 5, 200)
    preds = np.where(rng.random(200) < 0.7, labels, rng.integers(0, 5, 200))
    rep = report_from_predictions(preds, labels, 5)
    assert rep.confusion.sum() == 200
    assert rep.confusion.sum(axis=1).tolist() == np.bincount(labels, minlength=5).tolist()
    assert rep.accuracy == np.trace(rep.confusion) / 200
    assert rep.accuracy == np.mean(preds == labels)


def test_perfect_and_constant_classifiers():
    labels = np.repeat(np.arange(4), 5)
    perfect = report_from_predictions(labels, labels, 4)
    assert perfect.accuracy == 1.0 and np.array_equal(perfect.confusion, np.diag([5] * 4))
    assert report_from_predictions(np.zeros(20, int), labels, 4).accuracy == 0.25


def test_fused_accuracy_matches_recount():
    rng = np.random.default_rng(7)
    K, n = 4, 40
    labels = np.repeat(np.arange(K), n // K)
    easy = np.arange(n) % 2 == 0

    def stream(confident_on):
        p = rng.uniform(0.05, 0.2, (n, K))
        wrong = (labels + 1) % K
        for i in range(n):
            if confident_on[i]:
                p[i, labels[i]] = 0.9
            else:
                p[i, wrong[i]] = 0.4
                p[i, labels[i]] = 0.3
        return p / p.sum(axis=1, keepdims=True)

    p1, p2 = stream(easy), stream(~easy)
    batch = labeled_batch(labels)
    rep = evaluate([FixedScores(p1), FixedScores(p2)], batch, batch_size=7)
    recount = np.mean([fuse_and_classify(p1[i], p2[i]) == labels[i] for i in range(n)])
    assert rep.accuracy == recount
    single = evaluate([FixedScores(p1)], batch).accuracy
    assert single == np.mean(np.argmax(p1, axis=1) == labels)


def test_evaluate_checks_class_counts():
    with pytest.raises(ValueError):
        evaluate([FixedScores(np.full((3, 2), 0.5))], labeled_batch([0, 1, 2]))
    with pytest.raises(ValueError):
        evaluate([FixedScores(np.full((2, 2), 0.5)), FixedScores(np.full((2, 3), 1 / 3))], labeled_batch([0, 1]))


def test_report_csvs(tmp_path):
    rep = report_from_predictions([0, 1, 1], [0, 1, 0], 2, scores=[np.array([[0.9, 0.1], [0.2, 0.8], [0.4, 0.6]])])
    rep.confusion_csv(tmp_path / "c.csv", ["open", "close"])
    assert (tmp_path / "c.csv").read_text().splitlines() == ["true\\pred,open,close", "open,1,1", "close,0,1"]
    rep.scores_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "index,label,prediction,s0_c0,s0_c1"


# -- command line ----------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    spec = tmp_path / "spec.cfg"
    spec.write_text("classes = swipe_left swipe_right grab\nsamples_per_class = 6\nseed = 2\n")
    data = tmp_path / "data"
    assert cli.main(["synth", "--spec", str(spec), "--out", str(data)]) == 0
    cfg = tmp_path / "train.cfg"
    cfg.write_text("max_epochs = 2\nbatch_size = 8\nchannels = 4 4\nstrides = 1 2\nkernel_t = 3\nunits = 4\nblocks = 1\n")
    ckpts = []
    for stream in ("sagcn", "rbi"):
        out = tmp_path / f"{stream}.ckpt"
        assert cli.main(["train", "--stream", stream, "--data-root", str(data), "--config", str(cfg),
                         "--seed", "7", "--out", str(out)]) == 0
        assert out.with_suffix(".history.csv").exists()
        ckpts.append(str(out))
    reports = []
    for i in range(2):
        report = tmp_path / f"r{i}.csv"
        assert cli.main(["eval", "--checkpoint", *ckpts, "--fuse", "--data-root", str(data),
                         "--report", str(report), "--scores", str(tmp_path / f"s{i}.csv")]) == 0
        reports.append(report.read_bytes() + (tmp_path / f"s{i}.csv").read_bytes())
    assert reports[0] == reports[1]
    assert reports[0].splitlines()[0] == b"true\\pred,swipe_left,swipe_right,grab"
    seq = next((data / "test").glob("*/*.skl"))
    att = tmp_path / "att.csv"
    assert cli.main(["export-attention", "--checkpoint", ckpts[0], "--sequence", str(seq), "--out", str(att)]) == 0
    A = np.loadtxt(att, delimiter=",")
    assert A.shape == (22, 22)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-6)


def test_cli_rejects_bad_checkpoint_count(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["eval", "--checkpoint", "a", "--fuse", "--data-root", str(tmp_path)])
