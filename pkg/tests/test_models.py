import math

import numpy as np
import pytest

from crosstransfer import autodiff as ad
from crosstransfer import models as md
from crosstransfer.datagen import PAD, SOURCE, TARGET, PhiFeatures, SampleRecord
from crosstransfer.rng import stream


def dims(**kw):
    base = dict(n_users=12, n_items=9, embed_dim=4, seq_len=3, numeric_dim=4,
                tower=(6, 5), adapter_hidden=5, disc_hidden=4, phi_dim=6)
    base.update(kw)
    return md.ModelDims(**base)


def record(user=1, item=2, seq=(3, 4, PAD), domain=TARGET, label=1, window=0,
           numeric=(0.1, -0.2, 0.3, 0.05)):
    return SampleRecord(user, item, seq, numeric, label, domain, window)


def batch_of(*records):
    return md.Batch(list(records))


def zero_model(d):
    m = md.CvrModel(d, stream(0, "m"))
    for _, node in m.param_items():
        node.value = np.zeros_like(node.value)
    return m


def oracle_forward(model, batch):
    """Straight-line re-implementation of the forward pass, no shared code."""
    dm = model.dims
    item_tab = model.item_emb.value
    user_tab = model.user_emb.value
    cand = item_tab[batch.item_ids]
    seq = item_tab[batch.seq_ids]
    logits = (seq * cand[:, None, :]).sum(axis=2) / math.sqrt(dm.embed_dim)
    weights = np.zeros_like(logits)
    for b in range(len(batch)):
        valid = batch.seq_mask[b]
        if valid.any():
            z = logits[b][valid]
            e = np.exp(z - z.max())
            weights[b][valid] = e / e.sum()
    pooled = (weights[:, :, None] * seq).sum(axis=1)
    pooled = pooled + batch.all_pad[:, None] * model.seq_pad_bias.value
    x = np.hstack([user_tab[batch.user_ids], cand, pooled, batch.numeric])
    for w, b in model.tower:
        x = np.maximum(x @ w.value + b.value, 0.0)
    logit = x @ model.logit_w.value + model.logit_b.value
    return 1.0 / (1.0 + np.exp(-logit))


class TestSequenceEncoding:
    def test_single_nonpad_element_returns_its_embedding(self):
        m = md.CvrModel(dims(), stream(1, "m"))
        b = batch_of(record(seq=(5, PAD, PAD)))
        e_seq = m.encode_sequence(b)
        assert np.allclose(e_seq.value[0], m.item_emb.value[5], atol=1e-15)

    def test_two_identical_embeddings_split_attention(self):
        m = md.CvrModel(dims(), stream(2, "m"))
        b = batch_of(record(seq=(5, 5, PAD)))
        _, w = m.encode_sequence(b, return_weights=True)
        assert np.allclose(w.value[0], [0.5, 0.5, 0.0])

    def test_hand_computed_attention(self):
        m = zero_model(dims(embed_dim=2))
        m.item_emb.value = np.array(
            [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0], [0.5, 0.5],
             [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
        )
        # candidate item 3 = [2, 0]; sequence items 0, 1, 2
        b = batch_of(record(item=3, seq=(0, 1, 2)))
        e_seq, w = m.encode_sequence(b, return_weights=True)
        logits = np.array([2.0, 0.0, 2.0]) / math.sqrt(2)
        expect_w = np.exp(logits - logits.max())
        expect_w /= expect_w.sum()
        assert np.allclose(w.value[0], expect_w, atol=1e-14)
        seq_embs = m.item_emb.value[[0, 1, 2]]
        assert np.allclose(e_seq.value[0], expect_w @ seq_embs, atol=1e-14)

    def test_all_pad_sequence_uses_learned_fallback(self):
        m = md.CvrModel(dims(), stream(3, "m"))
        b = batch_of(record(seq=(PAD, PAD, PAD)))
        e_seq = m.encode_sequence(b)
        assert np.allclose(e_seq.value[0], m.seq_pad_bias.value[0])


class TestForward:
    def test_zero_parameters_give_half(self):
        m = zero_model(dims())
        probs, _ = m.forward(batch_of(record(), record(user=2, item=3)))
        assert np.allclose(probs.value, 0.5)

    def test_self_override_is_identity(self):
        m = md.CvrModel(dims(), stream(4, "m"))
        b = batch_of(record(), record(user=5, item=7, seq=(1, 2, 3)))
        p_plain, _ = m.forward(b)
        p_override, _ = m.forward(b, seq_override=m.encode_sequence(b))
        assert np.array_equal(p_plain.value, p_override.value)

    def test_matches_independent_oracle(self):
        m = md.CvrModel(dims(), stream(5, "m"))
        b = batch_of(record(), record(user=9, item=8, seq=(PAD, PAD, PAD)),
                     record(user=3, item=1, seq=(2, 2, 4), domain=SOURCE))
        probs, _ = m.forward(b)
        assert np.allclose(probs.value, oracle_forward(m, b), atol=1e-12)

    def test_value_path_equals_graph_path(self):
        m = md.CvrModel(dims(), stream(6, "m"))
        b = batch_of(record(), record(user=2, item=5, seq=(0, 1, PAD)))
        graph_probs, graph_e = m.forward(b)
        val_probs, val_e = m.forward_values(b)
        assert np.array_equal(graph_probs.value, val_probs)
        assert np.array_equal(graph_e.value, val_e)

    def test_regression_pinned_probability(self):
        m = md.CvrModel(dims(), stream(7, "m"))
        probs, _ = m.forward(batch_of(record()))
        pinned = PINNED_FORWARD_PROB
        assert float(probs.value[0, 0]) == pytest.approx(pinned, abs=1e-15)

    def test_out_of_vocabulary_rejected(self):
        m = md.CvrModel(dims(), stream(8, "m"))
        with pytest.raises(IndexError):
            m.forward(batch_of(record(item=99)))
        with pytest.raises(IndexError):
            m.forward_values(batch_of(record(user=99)))


# frozen once from the seeded forward pass; the oracle test guards correctness,
# this guards drift
PINNED_FORWARD_PROB = 0.5031725494689202


class TestAdapter:
    def test_zero_input_zero_params_gives_zero(self):
        d = dims()
        a = md.Adapter(d, stream(9, "a"))
        for p in a.parameters():
            p.value = np.zeros_like(p.value)
        out = a.forward(ad.Node(np.zeros((2, d.embed_dim))))
        assert np.array_equal(out.value, np.zeros((2, d.embed_dim)))

    def test_hand_computed_two_unit_transform(self):
        d = dims(embed_dim=2, adapter_hidden=2)
        a = md.Adapter(d, stream(10, "a"))
        a.w1.value = np.array([[1.0, 0.0], [0.0, -1.0]])
        a.b1.value = np.array([0.5, 0.25])
        a.w2.value = np.array([[2.0, 1.0], [0.0, 3.0]])
        a.b2.value = np.array([-1.0, 2.0])
        x = np.array([[0.3, -0.4]])
        hidden = np.tanh(np.array([0.3 + 0.5, 0.4 + 0.25]))
        expect = np.array([
            2.0 * hidden[0] - 1.0,
            hidden[0] + 3.0 * hidden[1] + 2.0,
        ])
        assert np.allclose(a.forward(ad.Node(x)).value[0], expect, atol=1e-14)

    def test_input_is_gradient_stopped(self):
        d = dims()
        m = md.CvrModel(d, stream(11, "m"))
        a = md.Adapter(d, stream(12, "a"))
        b = batch_of(record(), record(user=4, item=6))
        e_seq = m.encode_sequence(b)
        adapted = a.forward(e_seq)
        ad.backward(ad.sum_all(adapted))
        for p in m.parameters():
            assert p.grad is None, p.name
        assert any(np.any(p.gradient() != 0) for p in a.parameters())


class TestEntropy:
    def test_half_probability_gives_ln2(self):
        m = zero_model(dims())
        h = md.entropy_of_model(m, batch_of(record()))
        assert float(h[0, 0]) == pytest.approx(math.log(2))

    def test_confident_prediction_near_zero(self):
        m = zero_model(dims())
        m.logit_b.value = np.array([30.0])
        h = md.entropy_of_model(m, batch_of(record()))
        assert float(h[0, 0]) < 1e-9

    def test_hand_value(self):
        assert float(ad.binary_entropy(0.9)) == pytest.approx(0.325083, abs=1e-6)


class TestGateAndFusion:
    def _setup(self, bias):
        d = dims()
        g = md.FusionGate(d, stream(13, "g"))
        g.b.value = np.array([bias])
        rng = np.random.default_rng(0)
        e_p = ad.Node(rng.normal(size=(3, d.embed_dim)))
        e_t = ad.Node(rng.normal(size=(3, d.embed_dim)))
        h = rng.uniform(0, math.log(2), size=(3, 1))
        return g, e_p, e_t, h

    def test_closed_gate_keeps_native(self):
        g, e_p, e_t, h = self._setup(-50.0)
        gate = g.forward(e_p, e_t, h)
        fused = md.fuse(gate, e_p, e_t)
        assert np.allclose(fused.value, e_t.value, atol=1e-12)

    def test_open_gate_takes_adapted(self):
        g, e_p, e_t, h = self._setup(50.0)
        fused = md.fuse(g.forward(e_p, e_t, h), e_p, e_t)
        assert np.allclose(fused.value, e_p.value, atol=1e-12)

    def test_equal_inputs_fused_unchanged(self):
        g, e_p, _, h = self._setup(0.0)
        fused = md.fuse(g.forward(e_p, e_p, h), e_p, e_p)
        assert np.allclose(fused.value, e_p.value, atol=1e-14)

    def test_gate_strictly_inside_unit_interval(self):
        g, e_p, e_t, h = self._setup(0.0)
        rng = np.random.default_rng(5)
        for _ in range(20):
            big = ad.Node(rng.normal(scale=50, size=e_p.value.shape))
            out = g.forward(big, e_t, h).value
            assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_fusion_is_coordinatewise_convex(self):
        g, e_p, e_t, h = self._setup(0.3)
        fused = md.fuse(g.forward(e_p, e_t, h), e_p, e_t).value
        lo = np.minimum(e_p.value, e_t.value) - 1e-12
        hi = np.maximum(e_p.value, e_t.value) + 1e-12
        assert np.all(fused >= lo) and np.all(fused <= hi)

    def test_default_bias_starts_nearly_closed(self):
        d = dims()
        g = md.FusionGate(d, stream(14, "g"))
        e = ad.Node(np.zeros((2, d.embed_dim)))
        out = g.forward(e, e, np.zeros((2, 1))).value
        assert np.all(out < 0.05)


class TestDistillIntensity:
    def test_extremes(self):
        e = np.array([[1.0, 2.0, 0.5]])
        assert md.distill_intensity(e, e)[0] == pytest.approx(0.0)
        assert md.distill_intensity(e, -e)[0] == pytest.approx(1.0)

    def test_orthogonal_half(self):
        a = np.array([[1.0, 0.0]])
        b = np.array([[0.0, 2.0]])
        assert md.distill_intensity(a, b)[0] == pytest.approx(0.5)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            md.distill_intensity(np.zeros((1, 3)), np.ones((1, 3)))

    def test_range_on_random_inputs(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
        w = md.distill_intensity(a, b)
        assert np.all(w >= 0.0) and np.all(w <= 1.0)


class TestDiscriminator:
    def test_zero_params_give_half(self):
        d = dims()
        disc = md.DomainDiscriminator(d, stream(15, "d"))
        for p in disc.parameters():
            p.value = np.zeros_like(p.value)
        phi = PhiFeatures(np.random.default_rng(0).normal(size=(4, d.phi_dim)))
        assert np.allclose(disc.forward(phi).value, 0.5)
        assert np.allclose(disc.forward_values(phi), 0.5)

    def test_input_type_enforced(self):
        disc = md.DomainDiscriminator(dims(), stream(16, "d"))
        with pytest.raises(TypeError, match="PhiFeatures"):
            disc.forward(np.zeros((2, 6)))

    def test_matches_independent_mlp(self):
        d = dims()
        disc = md.DomainDiscriminator(d, stream(17, "d"))
        phi = PhiFeatures(np.random.default_rng(1).normal(size=(5, d.phi_dim)))
        got = disc.forward(phi).value
        hidden = np.maximum(phi.array @ disc.w1.value + disc.b1.value, 0.0)
        want = 1.0 / (1.0 + np.exp(-(hidden @ disc.w2.value + disc.b2.value)))
        assert np.allclose(got, want, atol=1e-12)


class TestArchitectureIdentity:
    def test_shape_signatures_match(self):
        d = dims()
        t = md.CvrModel(d, stream(18, "t"))
        s = md.CvrModel(d, stream(19, "s"))
        assert t.shape_signature() == s.shape_signature()

    def test_identical_params_identical_forward(self):
        d = dims()
        t = md.CvrModel(d, stream(20, "t"))
        s = md.CvrModel(d, stream(21, "s"))
        t.copy_values_from(s)
        b = batch_of(record(), record(user=3, item=4, seq=(1, PAD, PAD)))
        pt, et = t.forward_values(b)
        ps, es = s.forward_values(b)
        assert np.array_equal(pt, ps) and np.array_equal(et, es)

    def test_value_forward_builds_no_gradients(self):
        d = dims()
        s = md.CvrModel(d, stream(22, "s"))
        s.forward_values(batch_of(record()))
        assert all(p.grad is None for p in s.parameters())


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path):
        d = dims()
        m = md.CvrModel(d, stream(23, "m"))
        path = tmp_path / "model.ckpt"
        md.save_checkpoint(path, m.param_items(), seed=23, window=4)
        m2 = md.CvrModel(d, stream(24, "m"))
        header = md.restore_checkpoint(path, m2.param_items())
        assert header["seed"] == 23 and header["window"] == 4
        for (_, a), (_, b) in zip(m.param_items(), m2.param_items()):
            assert np.array_equal(a.value, b.value)

    def test_signature_mismatch_rejected(self, tmp_path):
        m = md.CvrModel(dims(), stream(25, "m"))
        path = tmp_path / "model.ckpt"
        md.save_checkpoint(path, m.param_items(), seed=0, window=0)
        other = md.CvrModel(dims(embed_dim=6), stream(26, "m"))
        with pytest.raises(ValueError, match="signature"):
            md.restore_checkpoint(path, other.param_items())

    def test_version_guard(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b'{"version": "nope", "blocks": []}\n')
        with pytest.raises(ValueError, match="version"):
            md.load_checkpoint(path)


class TestBatch:
    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            md.Batch([])

    def test_fields(self):
        b = batch_of(record(seq=(3, PAD, PAD), domain=SOURCE), record(domain=TARGET))
        assert b.seq_mask.tolist() == [[True, False, False], [True, True, False]]
        assert b.is_target.tolist() == [False, True]
        assert b.labels.shape == (2, 1)
