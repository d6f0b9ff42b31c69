import numpy as np
import pytest

import ddv


def tiny_config():
    c = ddv.CorpusConfig()
    c.patients_per_cohort = 12
    c.mean_visits = 3.0
    c.max_visits = 8
    return c


@pytest.fixture(scope="module")
def models():
    corpus = ddv.generate_corpus(tiny_config(), 3)
    tc = ddv.TrainConfig(epochs=5, batch_size=16, hidden=16)
    vm = ddv.train_visit_autoencoder(corpus, 8, tc, 1)
    pm = ddv.train_patient_autoencoder(corpus, vm, 8, tc, 2)
    return corpus, vm, pm


def test_corpus_is_seeded_and_round_trips(tmp_path):
    a = ddv.generate_corpus(tiny_config(), 7)
    assert a == ddv.generate_corpus(tiny_config(), 7)
    assert len(a) == 36
    assert a.dimension == 64
    r = a.records[0]
    assert r.cohort_label in (0, 1, 2)
    assert all(0 <= code < 64 for visit in r.visits for code in visit)
    ddv.save_corpus(a, tmp_path / "c.txt")
    assert ddv.load_corpus(tmp_path / "c.txt") == a


def test_bad_config_raises_config_error():
    c = tiny_config()
    c.patients_per_cohort = 0
    with pytest.raises(ddv.ConfigError):
        ddv.generate_corpus(c, 1)
    assert issubclass(ddv.ConfigError, ddv.Error)


def test_signatures(models):
    corpus, vm, pm = models
    enc = ddv.public_encoder(vm, pm)
    r = corpus.records[0]
    clean = ddv.encode_patient(pm, vm, r)
    assert clean.shape == (8,)
    np.testing.assert_array_equal(ddv.make_signature(enc, r, 0.0, 1), clean)
    noisy = ddv.make_signature(enc, r, 0.4, 1)
    assert not np.array_equal(noisy, clean)
    np.testing.assert_array_equal(noisy, ddv.make_signature(enc, r, 0.4, 1))
    with pytest.raises(ddv.PreconditionError):
        ddv.make_signature(enc, r, -1.0, 1)


def test_model_files(models, tmp_path):
    corpus, vm, pm = models
    ddv.save_model(vm, tmp_path / "v.model")
    ddv.save_model(ddv.public_encoder(vm, pm), tmp_path / "e.model")
    assert ddv.model_file_is_secret(tmp_path / "v.model")
    assert not ddv.model_file_is_secret(tmp_path / "e.model")
    assert ddv.load_visit_model(tmp_path / "v.model").q == 8


def test_metric_and_retrieval():
    m = ddv.identity_metric("t", 2)
    assert ddv.mahalanobis_distance(m, np.zeros(2), np.array([3.0, 4.0])) == pytest.approx(5.0)
    d = ddv.TaskMetric("d", np.diag([4.0, 1.0]))
    assert ddv.mahalanobis_distance(d, np.array([1.0, 0.0]), np.zeros(2)) == pytest.approx(2.0)
    q = ddv.make_query([np.array([1.0, 3.0]), np.array([3.0, 1.0])])
    np.testing.assert_array_equal(q, [2.0, 2.0])
    cands = [(7, np.array([3.0, 0.0])), (8, np.array([0.0, 1.0])), (5, np.array([1.0, 0.0]))]
    assert ddv.retrieve_top_n(m, np.zeros(2), cands, 3) == [5, 8, 7]


def test_metric_training_keeps_psd():
    rng = np.random.default_rng(0)
    xs = [np.array([(-1.5 if c == 0 else 1.5) + 0.3 * rng.standard_normal(), 3 * rng.standard_normal()])
          for c in (0, 1) for _ in range(20)]
    labels = [0] * 20 + [1] * 20
    (m,) = ddv.train_metrics(xs, [labels], iterations=50)
    assert np.linalg.eigvalsh(m.M).min() >= -1e-8


def test_attack_sweep_reports(models):
    corpus, vm, pm = models
    cfg = ddv.AttackConfig()
    cfg.visit_stage = ddv.TrainConfig(epochs=2, batch_size=16, hidden=16)
    cfg.patient_stage = ddv.TrainConfig(epochs=2, batch_size=16, hidden=16)
    cfg.joint_stage = ddv.TrainConfig(epochs=1, batch_size=16, hidden=16)
    reports = ddv.noise_sweep(corpus, vm, pm, [0.0, 1.0], cfg, 1)
    assert [r.epsilon for r in reports] == [0.0, 1.0]
    assert all(0.0 <= r.precision <= 1.0 and 0.0 <= r.recall <= 1.0 for r in reports)
    assert ddv.parameter_distance(np.array([1.0, 2.0, 2.0]), np.zeros(3)) == (9.0, 1.0)


def test_vending_world(models):
    corpus, vm, pm = models
    w = ddv.World(5)
    w.add_provider("alice", ddv.public_encoder(vm, pm))
    w.add_consumer("bob", 100)
    cid = w.list("alice", corpus.records[0], 0.2, 10)
    assert len(cid) == 32
    s = w.start_purchase("bob", cid)
    w.run(scan=True)
    assert w.violations == []
    assert w.session_state(s) == ddv.SessionState.rekeyed
    assert w.consumer_records("bob") == [corpus.records[0]]
    assert w.consumer_budget("bob") == 90
    assert w.ledger_verifies()
    with pytest.raises(ddv.PreconditionError):
        w.start_purchase("bob", b"\x00" * 32)
