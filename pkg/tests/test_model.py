import numpy as np
import pytest

from constgcn import corpus as C
from constgcn import model as M
from constgcn import tensor as T
from constgcn.errors import ConfigError
from constgcn.heads import NceConfig


def tiny_config(**kw):
    base = dict(vocab_size=96, num_relations=3, num_entity_types=3, max_coref=2,
                token_dim=4, feature_dim=2, num_layers=2, dropout=0.0,
                nce=NceConfig(num_negatives=4))
    base.update(kw)
    return M.ModelConfig(**base)


def tiny_doc(seed=0, n=4):
    cfg = C.CorpusConfig(num_docs=1, num_entities_range=(n, n), num_relations=3,
                         vocab_size=96, seed=seed, num_entity_types=3, max_coref=2,
                         edge_prob=0.8, noise_signal_prob=0.0)
    docs, _ = C.generate_synthetic_corpus(cfg)
    return C.insert_entity_markers(docs[0])


class TestForward:
    def test_shapes_and_ranges(self):
        model = M.init_model(tiny_config(), np.random.default_rng(0))
        doc = tiny_doc()
        fw = model.forward(doc)
        n = doc.num_entities
        assert fw.logits.shape == (n * (n - 1), 4)
        assert len(fw.layer_scores) == 2
        for s in fw.layer_scores:
            assert s.scores.shape == (3, n, n)
            assert np.all((s.scores.data > 0) & (s.scores.data < 1))
        assert np.all(np.isfinite(fw.final_state.entities.data))

    def test_zero_layers_keeps_initial_states(self):
        model = M.init_model(tiny_config(num_layers=0), np.random.default_rng(0))
        doc = tiny_doc()
        fw = model.forward(doc)
        assert fw.layer_scores == []
        assert fw.report_scores.scores.shape[1] == doc.num_entities

    def test_deterministic_predict(self):
        model = M.init_model(tiny_config(), np.random.default_rng(0))
        doc = tiny_doc()
        a = model.predict(doc).logits.data
        b = model.predict(doc).logits.data
        np.testing.assert_array_equal(a, b)

    def test_dropout_only_in_training_mode(self):
        model = M.init_model(tiny_config(dropout=0.5), np.random.default_rng(0))
        doc = tiny_doc()
        eval_a = model.forward(doc, rng=np.random.default_rng(1), train=False)
        eval_b = model.forward(doc, rng=np.random.default_rng(2), train=False)
        np.testing.assert_array_equal(eval_a.logits.data, eval_b.logits.data)
        train_a = model.forward(doc, rng=np.random.default_rng(1), train=True)
        train_b = model.forward(doc, rng=np.random.default_rng(2), train=True)
        assert not np.array_equal(train_a.logits.data, train_b.logits.data)

    def test_rotate_variant_requires_flag(self):
        with pytest.raises(ConfigError):
            M.init_model(tiny_config(variant_kind="rotate"), np.random.default_rng(0))
        model = M.init_model(tiny_config(variant_kind="rotate", rotate_transmit=True),
                             np.random.default_rng(0))
        fw = model.forward(tiny_doc())
        assert np.all(np.isfinite(fw.logits.data))

    def test_odd_hidden_dim_rejected_for_complex(self):
        with pytest.raises(ConfigError):
            M.init_model(tiny_config(variant_kind="complex", token_dim=5),
                         np.random.default_rng(0))


class TestLosses:
    def test_document_loss_finite_and_nonnegative(self):
        model = M.init_model(tiny_config(), np.random.default_rng(0))
        doc = tiny_doc()
        l_cls, l_nce = model.document_loss(doc, np.random.default_rng(1))
        assert np.isfinite(l_cls.item()) and l_cls.item() >= 0
        assert np.isfinite(l_nce.item())

    def test_combined_loss_mu_zero_equals_cls(self):
        cfg = tiny_config(nce=NceConfig(num_negatives=4, weight=0.0))
        model = M.init_model(cfg, np.random.default_rng(0))
        docs = [tiny_doc(seed=s) for s in (0, 1)]
        total, cls_sum, nce_sum = model.combined_loss(docs, np.random.default_rng(2))
        assert total.item() == pytest.approx(cls_sum, abs=1e-9)

    def test_gradients_reach_every_group(self):
        model = M.init_model(tiny_config(), np.random.default_rng(0))
        doc = tiny_doc()
        model.zero_grad()
        total, _, _ = model.combined_loss([doc], np.random.default_rng(1))
        total.backward()
        for name, p in model.parameters().items():
            assert p.grad is not None, name
            assert np.any(p.grad != 0.0), name

    def test_combined_loss_grad_check(self):
        model = M.init_model(tiny_config(), np.random.default_rng(0))
        doc = tiny_doc()

        def loss():
            rng = np.random.default_rng(5)
            l_cls, l_nce = model.document_loss(doc, rng, train=False)
            return l_cls + model.config.nce.weight * l_nce

        err = T.grad_check(loss, list(model.parameters().values()))
        assert err <= 1e-4


class TestGateStructure:
    def test_self_gates_open_cross_gates_restrained_at_init(self):
        # translation variant at full hidden width: the diagonal of every
        # score slice starts near 1 (self-transmission stays open) while
        # off-diagonal gates start clearly lower on average
        cfg = tiny_config(variant_kind="transe", token_dim=24, feature_dim=20,
                          token_scale=1.2, type_scale=1.5, coref_scale=0.5,
                          proj_identity=1.0, proj_noise=0.3)
        model = M.init_model(cfg, np.random.default_rng(0))
        doc = tiny_doc(n=4)
        fw = model.predict(doc)
        a = fw.layer_scores[0].scores.data
        n = a.shape[1]
        diag = a[:, np.arange(n), np.arange(n)]
        off = a[~np.broadcast_to(np.eye(n, dtype=bool), a.shape)]
        assert diag.mean() > 0.9
        assert off.mean() < 0.5
