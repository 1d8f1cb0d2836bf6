import numpy as np
import pytest

from cocl import data as D
from cocl import engine as E
from cocl import eval as V
from cocl import model as M
from cocl.errors import ConfigError, ContractError
from cocl.tensor import Tensor

# chi-square critical value, 3 degrees of freedom, p = 0.01
CHI2_3DF_P01 = 11.345


def test_first_stage_uniform_over_classes():
    groups = {0: np.arange(100), 1: np.arange(100, 102)}
    rng = np.random.default_rng(0)
    draws = np.array([V.class_balanced_sample(groups, rng)[0] for _ in range(20000)])
    assert np.mean(draws == 1) == pytest.approx(0.5, abs=0.015)
    idx = V.class_balanced_indices(groups, 20000, rng)
    assert np.mean(idx >= 100) == pytest.approx(0.5, abs=0.015)
    assert {V.class_balanced_sample({3: [7]}, rng) for _ in range(10)} == {(3, 7)}


def test_chi_square_balanced_classes():
    groups = {c: np.arange(25 * c, 25 * (c + 1)) for c in range(4)}
    idx = V.class_balanced_indices(groups, 10000, np.random.default_rng(1))
    counts = np.bincount(idx // 25, minlength=4)
    stat = float(np.sum((counts - 2500.0) ** 2 / 2500.0))
    assert stat < CHI2_3DF_P01


def test_empty_group_warns_and_is_excluded():
    rng = np.random.default_rng(0)
    with pytest.warns(UserWarning):
        c, _ = V.class_balanced_sample({0: [], 1: [4, 5]}, rng)
    assert c == 1
    with pytest.raises(ContractError), pytest.warns(UserWarning):
        V.class_balanced_indices({0: np.array([], dtype=int)}, 3, rng)


def test_probe_on_separable_embeddings():
    rng = np.random.default_rng(0)
    centers = np.eye(4) * 5
    y = rng.integers(0, 4, size=200)
    emb = centers[y] + rng.normal(0, 0.5, size=(200, 4))
    cfg = V.ProbeConfig(epochs=20, lr=0.5, decay_epochs=(10, 15))
    clf = V.train_probe_on_embeddings(emb, y, cfg)
    assert np.mean(clf.predict(emb) == y) >= 0.99
    again = V.train_probe_on_embeddings(emb, y, cfg)
    assert again.weight.data.tobytes() == clf.weight.data.tobytes()


def test_probe_leaves_encoder_untouched():
    m = M.init(M.ModelConfig(6, (5,), 4, 4, 3), 0)
    before = m.param_hash()
    x = np.random.default_rng(0).random((30, 1, 2, 3))
    V.train_probe(m, x, np.arange(30) % 3, V.ProbeConfig(epochs=3, decay_epochs=()))
    assert m.param_hash() == before
    assert all(p.grad is None for p in m.parameters())


def test_probe_lr_schedule():
    cfg = V.ProbeConfig()
    assert cfg.lr_at(0) == 1.0 and cfg.lr_at(59) == 1.0
    assert cfg.lr_at(60) == pytest.approx(0.2)
    assert cfg.lr_at(75) == pytest.approx(0.04)
    assert cfg.lr_at(99) == pytest.approx(0.008)
    with pytest.raises(ConfigError):
        V.ProbeConfig(epochs=50)
    with pytest.raises(ConfigError):
        V.ProbeConfig(decay_epochs=(75, 60))
    with pytest.raises(ConfigError):
        V.ProbeConfig(source="everything")


def _classifier(weight, classes):
    w = np.asarray(weight, dtype=float)
    return V.LinearClassifier(Tensor(w), Tensor(np.zeros(w.shape[1])), tuple(classes))


def test_predict_perfect_and_task_masking():
    clf = _classifier(np.eye(4), range(4))
    emb = np.eye(4)
    assert np.array_equal(clf.predict(emb), np.arange(4))
    rng = np.random.default_rng(0)
    for _ in range(200):
        logits_w = rng.normal(size=(4, 4))
        clf = _classifier(logits_w, range(4))
        emb = rng.normal(size=(20, 4))
        y = rng.integers(0, 2, size=20)
        free = np.mean(clf.predict(emb) == y)
        masked = np.mean(clf.predict(emb, allowed=(0, 1)) == y)
        assert masked >= free
    with pytest.raises(ContractError):
        clf.predict(emb, allowed=(9,))


def test_random_classifier_near_chance():
    k, n = 5, 20000
    rng = np.random.default_rng(3)
    clf = _classifier(rng.normal(size=(8, k)), range(k))
    emb = rng.normal(size=(n, 8))
    y = rng.integers(0, k, size=n)
    acc = np.mean(clf.predict(emb) == y)
    bound = 4 * np.sqrt((1 / k) * (1 - 1 / k) / n)
    assert abs(acc - 1 / k) < bound


def _tiny_run(T=2):
    d = D.synth_patterns(2 * T, 20, size=8, noise=0.05, seed=0)
    tr, te = D.split_holdout(d, 0.25, 0)
    seq = D.make_class_sequence(tr, D.SplitPlan(2), te)
    cfg = E.TrainConfig(lr=0.003, batch_size=8, epochs_first=3, epochs_rest=3, warmup_epochs=1, buffer_size=8)
    mc = M.ModelConfig(64, (16,), 8, 8, 4, input_shift=0.5, input_scale=0.25)
    return seq, E.run_sequence(seq, cfg, mc)


def test_accuracy_matrix_shapes_and_chance():
    seq, run = _tiny_run(2)
    cfg = V.ProbeConfig(epochs=20, lr=0.1, decay_epochs=(15,))
    mat = V.accuracy_matrix(run.snapshots, seq, cfg, run.buffers, source="seen")
    assert mat.shape == (2, 2)
    assert np.all((0 <= mat) & (mat <= 1))
    for t, task in enumerate(seq.tasks):
        assert mat[t, t] >= 1 / len(task.classes)
    again = V.accuracy_matrix(run.snapshots, seq, cfg, run.buffers, source="seen")
    assert again.tobytes() == mat.tobytes()
    with pytest.raises(ContractError):
        V.accuracy_matrix(run.snapshots[:1], seq, cfg)
    one = D.TaskSequence(seq.tasks[:1])
    assert V.accuracy_matrix(run.snapshots[:1], one, cfg).shape == (1, 1)


def test_probe_pools():
    seq, run = _tiny_run(2)
    x, y = V.probe_pool(seq, 2, "last_task_plus_buffer", run.buffers[1])
    assert set(y.tolist()) == {0, 1, 2, 3}
    assert len(y) == len(seq.tasks[1].train) + len(run.buffers[1])
    _, y_seen = V.probe_pool(seq, 1, "seen")
    assert set(y_seen.tolist()) == {0, 1}
    _, y_all = V.probe_pool(seq, 1, "all")
    assert set(y_all.tolist()) == {0, 1, 2, 3}
    with pytest.raises(ConfigError):
        V.probe_pool(seq, 1, "bogus")


def test_task_il_needs_task():
    seq, run = _tiny_run(2)
    seq_t = D.TaskSequence(seq.tasks, D.Scenario.TASK_IL)
    clf = V.train_probe(run.snapshots[-1], *V.probe_pool(seq, 2, "all"),
                        V.ProbeConfig(epochs=5, decay_epochs=()))
    task = seq_t.tasks[0]
    with pytest.raises(ContractError):
        V.evaluate(clf, run.snapshots[-1], task.test.x, task.test.y, D.Scenario.TASK_IL)
    til = V.evaluate(clf, run.snapshots[-1], task.test.x, task.test.y, D.Scenario.TASK_IL, task)
    cil = V.evaluate(clf, run.snapshots[-1], task.test.x, task.test.y, D.Scenario.CLASS_IL)
    assert til >= cil


def test_summaries_and_csv():
    mat = np.array([[0.9, 0.1, 0.2], [0.7, 0.8, 0.3], [0.6, 0.5, 0.95]])
    assert V.off_diagonal_mean(mat) == pytest.approx((0.1 + 0.2 + 0.7 + 0.3 + 0.6 + 0.5) / 6)
    assert V.forgetting(mat) == pytest.approx(((0.6 - 0.9) + (0.5 - 0.8)) / 2)
    assert V.forgetting(mat[:1, :1]) == 0.0
    text = V.matrix_to_csv(mat)
    assert text.splitlines()[0] == "train\\eval,1,2,3"
    assert V.matrix_from_csv(text).tobytes() == mat.tobytes()
