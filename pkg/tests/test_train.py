import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dogpain.numerics as nx
from dogpain.data import SynthConfig, synth_clips, synth_generate
from dogpain.errors import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigurationError,
    ContractError,
)
from dogpain.model import TwoStreamConfig, TwoStreamParams, forward_batch
from dogpain.train import (
    Adam,
    Checkpoint,
    SGDMomentum,
    TrainConfig,
    bce_loss,
    classification_metrics,
    crossval,
    load_checkpoint,
    load_tensors,
    pck,
    save_checkpoint,
    save_tensors,
    summarize,
    train_fold,
    video_metrics,
)
from dogpain.train.checkpoint import FORMAT_VERSION, MAGIC
from dogpain.numerics import Tensor, grad_check, precision

TOY = TwoStreamConfig(hidden=8, lstm_layers=2, channels=(4, 6), image_size=16, attention_hidden=8)


@pytest.fixture(scope="module")
def toy_clips():
    videos = synth_generate(
        SynthConfig(n_subjects=8, frames_per_video=14, image_size=16, attenuation=0.5, noise_sigma=0.0, seed=3)
    )
    return synth_clips(videos)


def _split(clips, val_ids):
    return [c for c in clips if c.subject_id not in val_ids], [c for c in clips if c.subject_id in val_ids]


# -------------------------------------------------------------------- loss


def test_bce_at_half_is_ln2(f64):
    for y in (0, 1):
        assert abs(bce_loss(Tensor([0.5]), [y]).item() - math.log(2)) < 1e-15


def test_bce_vanishes_when_prediction_matches(f64):
    assert bce_loss(Tensor([1.0, 0.0]), [1, 0]).item() < 2e-7


def test_bce_gradient_value(f64):
    p = Tensor([0.25], requires_grad=True)
    bce_loss(p, [1]).backward()
    assert abs(p.grad[0] + 4.0) < 1e-12


def test_bce_gradient_check(f64, rng):
    y = rng.integers(0, 2, size=6)
    assert grad_check(lambda p: bce_loss(p, y), rng.uniform(0.05, 0.95, size=6)) < 1e-4


def test_bce_rejects_soft_labels(f64):
    with pytest.raises(ContractError):
        bce_loss(Tensor([0.3]), [0.5])


# ----------------------------------------------------------------- metrics


def test_confusion_example_by_hand():
    preds = [0.9] * 3 + [0.8] + [0.1] * 2 + [0.2] * 4
    labels = [1] * 3 + [0] + [1] * 2 + [0] * 4
    r = classification_metrics(preds, labels)
    assert (r.tp, r.fp, r.fn, r.tn) == (3, 1, 2, 4)
    assert r.precision == 0.75 and r.recall == 0.6
    assert r.f1 == 2 * 0.75 * 0.6 / (0.75 + 0.6)
    assert round(r.f1, 4) == 0.6667
    assert r.accuracy == 0.7


def test_all_correct_and_no_positive_predictions():
    r = classification_metrics([0.9, 0.1], [1, 0])
    assert r.f1 == r.accuracy == 1.0
    assert classification_metrics([0.1, 0.2], [1, 0]).f1 == 0.0


def test_threshold_ties_count_as_pain():
    r = classification_metrics([0.5] * 10, [1] * 5 + [0] * 5)
    assert r.accuracy == 0.5 and r.tp == 5


def test_metrics_reject_empty_and_mismatch():
    with pytest.raises(ContractError):
        classification_metrics([], [])
    with pytest.raises(ContractError):
        classification_metrics([0.1], [1, 0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40), st.randoms())
def test_metrics_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = classification_metrics(*zip(*pairs))
    b = classification_metrics(*zip(*shuffled))
    assert a == b


def test_video_majority_vote():
    probs = [0.9, 0.8, 0.1, 0.2, 0.3, 0.6, 0.4]
    labels = [1, 1, 1, 0, 0, 0, 0]
    videos = ["a", "a", "a", "b", "b", "c", "c"]  # a: 2 of 3 pain, b: none, c: split vote
    r = video_metrics(probs, labels, videos)
    assert (r.tp, r.fp, r.tn, r.fn) == (1, 1, 1, 0)


def test_summarize_matches_statistics_module():
    vals = [0.8, 0.9, 0.75, 0.95, 0.85]
    mean, std = summarize(vals)
    assert abs(mean - statistics.mean(vals)) < 1e-15
    assert abs(std - statistics.stdev(vals)) < 1e-15
    assert summarize([0.7, 0.7, 0.7]) == (0.7, 0.0)


# --------------------------------------------------------------------- PCK


def _pck_frame(offsets):
    gt = np.zeros((1, 17, 2)) + 50.0
    pred = gt.copy()
    vis = np.zeros((1, 17), dtype=bool)
    for j, d in offsets.items():
        pred[0, j, 0] += d
        vis[0, j] = True
    return pred, gt, vis


def test_pck_boundary_example_by_hand():
    # box 100×100: radius 0.1 * 100 = 10; distances 5, 10, 15
    pred, gt, vis = _pck_frame({5: 5.0, 6: 10.0, 7: 15.0})
    r = pck(pred, gt, vis, [(0, 0, 100, 100)])
    assert (r.correct["Legs"], r.scored["Legs"]) == (2, 3)
    assert r.percent("Total") == 100.0 * 2 / 3
    assert math.isnan(r.percent("Head"))


def test_pck_identity_and_alpha_zero(rng):
    gt = rng.uniform(0, 100, size=(4, 17, 2))
    vis = np.ones((4, 17), dtype=bool)
    boxes = [(0, 0, 100, 100)] * 4
    r = pck(gt, gt, vis, boxes)
    assert all(r.percent(g) == 100.0 for g in ("Head", "Spine", "Legs", "Total"))
    pred = gt.copy()
    pred[0, 0, 0] += 1e-9
    assert pck(pred, gt, vis, boxes, alpha=0.0).correct["Head"] == 4 * 3 - 1


def test_pck_missing_box_is_contract_error():
    pred, gt, vis = _pck_frame({0: 1.0})
    with pytest.raises(ContractError):
        pck(pred, gt, vis, [None])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**16), st.floats(-500, 500), st.floats(-500, 500))
def test_pck_translation_invariant(seed, dx, dy):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 100, size=(3, 17, 2))
    pred = gt + rng.normal(0, 6, size=gt.shape)
    vis = rng.random((3, 17)) < 0.8
    boxes = [(0, 0, 90, 110)] * 3
    shift = np.array([dx, dy])
    moved = [(x0 + dx, y0 + dy, x1 + dx, y1 + dy) for x0, y0, x1, y1 in boxes]
    assert pck(pred, gt, vis, boxes).correct == pck(pred + shift, gt + shift, vis, moved).correct


# -------------------------------------------------------------- optimizers


def test_adam_first_step_is_lr_times_sign(f64, rng):
    g = rng.normal(size=5)
    t = Tensor(np.zeros(5), requires_grad=True)
    t.grad = g
    Adam(lr=0.01).step({"w": t})
    np.testing.assert_allclose(t.data, -0.01 * np.sign(g), rtol=1e-6)


def test_sgd_momentum_two_steps(f64):
    t = Tensor(np.array([1.0]), requires_grad=True)
    opt = SGDMomentum(lr=0.1, momentum=0.9)
    t.grad = np.array([2.0])
    opt.step({"w": t})
    t.grad = np.array([2.0])
    opt.step({"w": t})
    # v1 = 2, v2 = 0.9*2 + 2 = 3.8 -> 1 - 0.1*2 - 0.1*3.8
    assert abs(t.data[0] - (1 - 0.2 - 0.38)) < 1e-15


def test_single_step_descends_on_each_example(f64, toy_clips):
    from dogpain.data import stack_clips

    frames, poses, labels = stack_clips(toy_clips[:20])
    for i in range(20):
        params = TwoStreamParams.init(TOY, seed=i)

        def loss():
            res = forward_batch(params, frames[i : i + 1], poses[i : i + 1], training=True)
            return bce_loss(res.prob, labels[i : i + 1])

        before = loss()
        params.zero_grad()
        before.backward()
        SGDMomentum(lr=1e-4).step(params.tensors)
        assert loss().item() < before.item()


# ----------------------------------------------------------------- training


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(patience=200, max_epochs=200)
    with pytest.raises(ConfigurationError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ConfigurationError):
        TrainConfig(lr=0)


def test_patience_zero_runs_one_epoch(toy_clips):
    train, val = _split(toy_clips, {"dog000", "dog008"})
    _, hist = train_fold(train, val, TOY, TrainConfig(patience=0, max_epochs=5))
    assert len(hist) == 1


def test_empty_or_overlapping_split_rejected(toy_clips):
    with pytest.raises(ConfigurationError):
        train_fold(toy_clips, [], TOY, TrainConfig())
    with pytest.raises(ConfigurationError):
        train_fold(toy_clips, toy_clips[:2], TOY, TrainConfig())


def test_training_history_is_bitwise_deterministic(toy_clips):
    train, val = _split(toy_clips, {"dog001", "dog009"})
    cfg = TrainConfig(patience=2, max_epochs=3, seed=5)
    a = [(h.train_loss, h.train_accuracy, h.val_f1) for h in train_fold(train, val, TOY, cfg)[1]]
    b = [(h.train_loss, h.train_accuracy, h.val_f1) for h in train_fold(train, val, TOY, cfg)[1]]
    assert a == b


def test_toy_learning_and_early_stopping_invariant(toy_clips):
    train, val = _split(toy_clips, {"dog002", "dog003", "dog010", "dog011"})
    best, hist = train_fold(train, val, TOY, TrainConfig(patience=15, max_epochs=200, seed=1))
    assert max(h.train_accuracy for h in hist) >= 0.95
    assert all(best.meta["val_f1"] >= h.val_f1 for h in hist)
    assert hist[best.epoch - 1].improved


def test_crossval_subject_disjoint_and_reported(toy_clips):
    rep = crossval(toy_clips, TOY, TrainConfig(patience=1, max_epochs=2, seed=2), folds=[0, 1])
    test = set(rep.plan.test_subjects)
    for train_ids, val_ids in rep.plan.folds:
        assert not (set(train_ids) & set(val_ids)) and not (set(train_ids) | set(val_ids)) & test
    agg = rep.aggregate()
    f1s = [f.clip.f1 for f in rep.folds]
    assert agg["clip_f1_mean"] == pytest.approx(np.mean(f1s))
    assert agg["clip_f1_std"] == pytest.approx(np.std(f1s, ddof=1))
    assert [r["record"] for r in rep.records()] == ["fold", "fold", "aggregate"]


# -------------------------------------------------------------- checkpoints


@pytest.fixture
def saved(tmp_path, rng):
    with precision("float32"):
        params = TwoStreamParams.init(TOY, 4)
        frames = rng.random((2, 8, 3, 16, 16)).astype(np.float32)
        poses = rng.normal(size=(2, 8, 34)).astype(np.float32)
        forward_batch(params, frames, poses, training=True)  # move the running statistics
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, Checkpoint(params, epoch=3, rng={"seed": 4, "epoch": 3}))
        yield path, params, frames, poses


def test_checkpoint_roundtrip_is_bitwise(saved):
    path, params, frames, poses = saved
    with precision("float32"):
        loaded = load_checkpoint(path)
        a = forward_batch(params, frames, poses).logit.data
        b = forward_batch(loaded.params, frames, poses).logit.data
    assert a.tobytes() == b.tobytes()
    assert loaded.epoch == 3 and loaded.params.config == TOY


def test_checkpoint_truncated_by_one_byte(saved):
    path = saved[0]
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)


def test_checkpoint_version_and_magic(saved):
    path = saved[0]
    blob = bytearray(path.read_bytes())
    blob[4:8] = (FORMAT_VERSION + 1).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_flipped_data_byte(saved):
    path = saved[0]
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointFormatError, match="checksum"):
        load_checkpoint(path)


def test_checkpoint_config_mismatch_names_tensor(saved):
    other = TwoStreamConfig(hidden=9, lstm_layers=2, channels=(4, 6), image_size=16, attention_hidden=8)
    with pytest.raises(CheckpointShapeError, match="pose.l0.W"):
        load_checkpoint(saved[0], expect_config=other)


@settings(max_examples=80, deadline=None)
@given(cut=st.integers(0, 10**6), pos=st.integers(0, 10**6), byte=st.integers(0, 255))
def test_corrupt_containers_raise_typed_errors(tmp_path_factory, cut, pos, byte):
    path = tmp_path_factory.mktemp("c") / "t.bin"
    save_tensors(path, {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(4)}, meta={"x": 1})
    blob = bytearray(path.read_bytes())
    blob[pos % len(blob)] = byte
    path.write_bytes(bytes(blob[: cut % (len(blob) + 1)]))
    try:
        load_tensors(path)
    except CheckpointError:
        pass


def test_container_preserves_values(tmp_path):
    a = np.arange(12, dtype=np.float32).reshape(3, 4)
    save_tensors(tmp_path / "x.bin", {"a": a, "empty": np.zeros((0, 2))}, kind="saliency", meta={"k": [1, 2]})
    t, meta = load_tensors(tmp_path / "x.bin", kind="saliency")
    assert t["a"].tobytes() == a.tobytes() and t["empty"].shape == (0, 2) and meta == {"k": [1, 2]}
    with pytest.raises(CheckpointFormatError):
        load_tensors(tmp_path / "x.bin", kind="checkpoint")
    assert MAGIC == b"DPTC"
