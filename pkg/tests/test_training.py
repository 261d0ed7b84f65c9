import csv
import math

import numpy as np
import pytest

from constgcn import corpus as C
from constgcn import training as TR
from constgcn.errors import ConfigError
from constgcn.graph import TransmitScores
from constgcn.model import ModelConfig, init_model
from constgcn.heads import NceConfig
from constgcn.tensor import Tensor


def small_world(seed=7, n_train=12, n_dev=4):
    cfg = C.CorpusConfig(num_docs=n_train, seed=seed, num_entities_range=(3, 5),
                         num_relations=3, vocab_size=96, num_entity_types=3,
                         max_coref=2, edge_prob=0.7, noise_signal_prob=0.0)
    return C.generate_train_dev(cfg, n_dev)


def small_train_config(**kw):
    base = dict(epochs=2, batch_size=2, seed=7, min_epochs=2,
                vocab_size=96, num_entity_types=3, max_coref=2,
                token_dim=6, feature_dim=2, negatives=4)
    base.update(kw)
    return TR.TrainConfig(**base)


class TestOptimizer:
    def test_adamw_moves_toward_minimum(self):
        p = Tensor(np.array([4.0, -3.0]), requires_grad=True)
        opt = TR.AdamW({"p": p}, learning_rate=0.1)
        for _ in range(300):
            p.zero_grad()
            ((p * p).sum()).backward()
            opt.step()
        assert np.abs(p.data).max() < 1e-2

    def test_weight_decay_shrinks_without_gradient(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = TR.AdamW({"p": p}, learning_rate=0.1, weight_decay=0.5)
        p.grad = np.array([0.0])
        for _ in range(10):
            opt.step()
        assert p.data[0] < 1.0

    def test_clip_gradients_contract(self):
        rng = np.random.default_rng(0)
        params = {f"p{i}": Tensor(rng.normal(size=4), requires_grad=True)
                  for i in range(3)}
        for p in params.values():
            p.grad = rng.normal(size=4) * 10
        norm = TR.clip_gradients(params, 1.0)
        assert norm > 1.0
        after = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params.values()))
        assert after <= 1.0 + 1e-9

    def test_lr_schedule_warmup_then_decay(self):
        total = 1000
        values = [TR.lr_schedule(s, total, 0.06, 0.1) for s in range(total)]
        warm = int(round(total * 0.06))
        assert values[0] == pytest.approx(1.0 / warm)
        assert values[warm - 1] == pytest.approx(1.0)
        assert all(b <= a for a, b in zip(values[warm:], values[warm + 1:]))
        assert values[-1] == pytest.approx(0.1, rel=1e-6)


class TestMetrics:
    def test_hand_f1(self):
        p, r, f = TR._f1(1, 2, 3)
        assert (p, r) == (0.5, 1 / 3)
        assert f == pytest.approx(0.4)

    def test_perfect_and_degenerate(self):
        assert TR._f1(3, 3, 3)[2] == 1.0
        assert TR._f1(0, 0, 3)[2] == 0.0

    def test_roc_auc_perfect_and_chance(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0])
        assert TR.roc_auc(scores, labels) == 1.0
        rng = np.random.default_rng(0)
        s = rng.random(4000)
        l = rng.random(4000) > 0.5
        assert abs(TR.roc_auc(s, l) - 0.5) < 0.05

    def test_roc_auc_label_flip_antisymmetry(self):
        rng = np.random.default_rng(1)
        s = rng.random(200)
        l = rng.random(200) > 0.3
        assert TR.roc_auc(s, l) == pytest.approx(1.0 - TR.roc_auc(-s, l), abs=1e-12)

    def test_pr_curve_auc_perfect(self):
        scored = [(0.9, True), (0.8, True), (0.1, False)]
        assert TR.pr_curve_auc(scored, n_gold=2) == pytest.approx(1.0)

    def test_transmit_auc_perfect_separation(self):
        doc = C.Document(doc_id="d", tokens=[1] * 8,
                         entities=[C.Entity([(i, i + 1)], 0) for i in range(3)],
                         facts=[(0, 0, 1), (1, 1, 2)])
        a = np.full((2, 3, 3), 0.01)
        a[0, 0, 1] = 0.99
        a[1, 1, 2] = 0.99
        scores = TransmitScores(scores=Tensor(a), layer=0)
        assert TR.transmit_score_auc(scores, doc) == 1.0

    def test_transmit_auc_excludes_degenerate_slices(self):
        doc = C.Document(doc_id="d", tokens=[1] * 8,
                         entities=[C.Entity([(i, i + 1)], 0) for i in range(2)],
                         facts=[(0, 0, 1), (1, 0, 0)])  # slice 0 all-positive
        a = np.full((2, 2, 2), 0.5)
        scores = TransmitScores(scores=Tensor(a), layer=0)
        assert TR.transmit_score_auc(scores, doc) is None

    def test_transmit_auc_chance_on_random(self):
        rng = np.random.default_rng(2)
        n = 12
        doc = C.Document(doc_id="d", tokens=[1] * 40,
                         entities=[C.Entity([(i, i + 1)], 0) for i in range(n)],
                         facts=[(i, 0, (i + 1) % n) for i in range(0, n, 2)])
        vals = []
        for _ in range(40):
            scores = TransmitScores(scores=Tensor(rng.random((1, n, n))), layer=0)
            vals.append(TR.transmit_score_auc(scores, doc))
        assert abs(np.mean(vals) - 0.5) < 0.05


class TestEvaluate:
    def test_empty_corpus_warning(self):
        model = init_model(ModelConfig(vocab_size=96, num_relations=3,
                                       num_entity_types=3, max_coref=2,
                                       token_dim=6, feature_dim=2,
                                       nce=NceConfig(num_negatives=4)),
                           np.random.default_rng(0))
        schema = C.RelationSchema(names=["a", "b", "c"])
        report = TR.evaluate(model, [], schema)
        assert report.warning == "empty corpus"
        assert report.micro_f1 == 0.0

    def test_ign_f1_equals_f1_with_empty_exclusions(self):
        train_docs, dev_docs, schema = small_world()
        res = TR.train(train_docs, dev_docs, schema, small_train_config())
        marked = [C.insert_entity_markers(d) for d in dev_docs]
        report = TR.evaluate(res.model, marked, schema, train_fact_set=set())
        assert report.ign_f1 == report.micro_f1

    def test_ign_f1_not_above_f1_with_exclusions(self):
        train_docs, dev_docs, schema = small_world()
        res = TR.train(train_docs, dev_docs, schema, small_train_config())
        marked = [C.insert_entity_markers(d) for d in dev_docs]
        excl = TR.build_fact_identity_set(train_docs)
        report = TR.evaluate(res.model, marked, schema, train_fact_set=excl)
        assert report.ign_f1 <= report.micro_f1 + 1e-12

    def test_f1_invariant_under_document_reordering(self):
        train_docs, dev_docs, schema = small_world()
        res = TR.train(train_docs, dev_docs, schema, small_train_config())
        marked = [C.insert_entity_markers(d) for d in dev_docs]
        a = TR.evaluate(res.model, marked, schema)
        b = TR.evaluate(res.model, marked[::-1], schema)
        assert a.micro_f1 == b.micro_f1
        assert a.auc == pytest.approx(b.auc, abs=1e-12)

    def test_counts_reconcile(self):
        train_docs, dev_docs, schema = small_world()
        res = TR.train(train_docs, dev_docs, schema, small_train_config())
        marked = [C.insert_entity_markers(d) for d in dev_docs]
        rep = TR.evaluate(res.model, marked, schema)
        assert rep.n_correct <= min(rep.n_predicted, rep.n_gold)
        gold_total = sum(r["gold"] for r in rep.per_relation.values())
        assert gold_total == rep.n_gold


class TestTrainLoop:
    def test_deterministic_history(self):
        train_docs, dev_docs, schema = small_world()
        a = TR.train(train_docs, dev_docs, schema, small_train_config())
        b = TR.train(train_docs, dev_docs, schema, small_train_config())
        assert a.history == b.history

    def test_overlapping_split_rejected(self):
        train_docs, dev_docs, schema = small_world()
        with pytest.raises(ConfigError):
            TR.train(train_docs, train_docs[:2], schema, small_train_config())

    def test_history_columns(self, tmp_path):
        train_docs, dev_docs, schema = small_world()
        res = TR.train(train_docs, dev_docs, schema, small_train_config())
        path = tmp_path / "history.csv"
        TR.write_history_csv(res.history, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == TR.HISTORY_COLUMNS
        assert len(rows) == len(res.history) + 1

    def test_epoch_cap_enforced(self):
        with pytest.raises(ConfigError):
            small_train_config(epochs=31)

    def test_layers_default_by_variant(self):
        assert small_train_config(variant="transe", layers=None).layers == 2
        assert small_train_config(variant="distmult", layers=None).layers == 2
        assert small_train_config(variant="complex", layers=None,
                                  token_dim=4).layers == 1


class TestCheckpoint:
    def test_save_load_roundtrip_bitexact_eval(self, tmp_path):
        train_docs, dev_docs, schema = small_world()
        res = TR.train(train_docs, dev_docs, schema, small_train_config())
        marked = [C.insert_entity_markers(d) for d in dev_docs]
        before = TR.evaluate(res.model, marked, schema)
        path = tmp_path / "model.bin"
        TR.save_checkpoint(res.model, path, meta={"best_dev_f1": res.best_dev_f1})
        loaded, meta = TR.load_checkpoint(path)
        assert meta["best_dev_f1"] == res.best_dev_f1
        for name, p in res.model.parameters().items():
            np.testing.assert_array_equal(p.data, loaded.parameters()[name].data)
        after = TR.evaluate(loaded, marked, schema)
        assert after.micro_f1 == before.micro_f1
        assert after.auc == before.auc

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        train_docs, dev_docs, schema = small_world()
        res1 = TR.train(train_docs, dev_docs, schema, small_train_config())
        res2 = TR.train(train_docs, dev_docs, schema, small_train_config())
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        TR.save_checkpoint(res1.model, p1, meta={})
        TR.save_checkpoint(res2.model, p2, meta={})
        assert p1.read_bytes() == p2.read_bytes()
