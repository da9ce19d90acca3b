import numpy as np
import pytest

from seaco.backbone import AlignmentError, BackboneConfig, init_backbone, make_batch
from seaco.bias import (
    BiasConfig,
    BiasSchedule,
    FreezingError,
    backbone_states,
    bias_decode,
    bias_targets,
    encode_hotwords,
    init_bias,
    train_bias,
)
from seaco.corpus import NO_BIAS
from seaco.hotwords import HotwordList, SamplingConfig
from seaco.numerics import ConfigurationError, ModelParams, Tensor, cross_entropy, no_grad

SMALL = dict(vocab_size=9, feature_dim=4, d_model=8, n_heads=2, ffn_dim=16,
             encoder_layers=1, decoder_layers=1)


def _model(variant="default", seed=0):
    bcfg = BackboneConfig(**SMALL)
    cfg = BiasConfig.for_backbone(bcfg, variant=variant)
    return bcfg, cfg, init_backbone(bcfg, seed).merged(init_bias(cfg, seed))


def _states(L=5, seed=1):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((L, 8))), Tensor(rng.standard_normal((L, 8)))


HW = HotwordList([(3, 4), (5, 6, 7), (8, 3)])


class TestEncoder:
    def test_shape_and_identical_rows(self):
        _, cfg, p = _model()
        Z = encode_hotwords([(3, 4), (5,), (3, 4)], p, cfg)
        assert Z.shape == (3, 8)
        np.testing.assert_array_equal(Z.data[0], Z.data[2])

    def test_permutation_permutes_rows(self):
        _, cfg, p = _model()
        order = [2, 0, 3, 1]
        Z = encode_hotwords(HW, p, cfg).data
        Zp = encode_hotwords([HW[i] for i in order], p, cfg).data
        np.testing.assert_allclose(Zp, Z[order], atol=1e-12)

    def test_empty_list(self):
        _, cfg, p = _model()
        with pytest.raises(ValueError):
            encode_hotwords([], p, cfg)


class TestDecoder:
    @pytest.mark.parametrize("variant", ["default", "a1", "a2", "a3"])
    def test_rows_are_distributions(self, variant):
        _, cfg, p = _model(variant)
        D, E = _states()
        out = bias_decode(D, E, encode_hotwords(HW, p, cfg), p, cfg)
        np.testing.assert_allclose(out.p_b.sum(-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(out.attn.sum(-1), 1.0, atol=1e-12)
        assert out.attn.shape == (5, len(HW))

    def test_single_hotword_attends_fully(self):
        _, cfg, p = _model()
        D, E = _states(L=6)
        out = bias_decode(D, E, encode_hotwords(HotwordList(), p, cfg), p, cfg)
        np.testing.assert_array_equal(out.attn, np.ones((6, 1)))
        assert out.attn.sum(axis=0)[0] == 6

    def test_length_mismatch(self):
        _, cfg, p = _model()
        D, _ = _states(L=5)
        _, E = _states(L=4)
        with pytest.raises(AlignmentError):
            bias_decode(D, E, encode_hotwords(HW, p, cfg), p, cfg)

    def test_permuting_hotwords(self):
        _, cfg, p = _model()
        D, E = _states()
        base = bias_decode(D, E, encode_hotwords(HW, p, cfg), p, cfg)
        order = [0, 3, 1, 2]
        perm = bias_decode(D, E, encode_hotwords([HW[i] for i in order], p, cfg), p, cfg)
        np.testing.assert_allclose(perm.p_b, base.p_b, atol=1e-12)
        np.testing.assert_allclose(perm.attn, base.attn[:, order], atol=1e-12)

    def test_batched_matches_single(self):
        _, cfg, p = _model()
        D, E = _states()
        Z = encode_hotwords(HW, p, cfg)
        one = bias_decode(D, E, Z, p, cfg)
        two = bias_decode(Tensor(np.stack([D.data, D.data])), Tensor(np.stack([E.data, E.data])),
                          Z, p, cfg)
        np.testing.assert_allclose(two.p_b[1], one.p_b, atol=1e-12)

    def test_zeroed_cif_branch_equals_dec_only(self):
        _, cfg, p = _model()
        for q in p.group("bias.cif"):
            q.data[...] = 0.0
        D, _ = _states()
        zeros = Tensor(np.zeros(D.shape))
        a2 = BiasConfig(**{**cfg.__dict__, "variant": "A2_no_cif_attn"})
        p2 = ModelParams([q for q in p if not q.name.startswith("bias.cif")])
        Z = encode_hotwords(HW, p, cfg)
        full = bias_decode(D, zeros, Z, p, cfg)
        dec_only = bias_decode(D, zeros, Z, p2, a2)
        np.testing.assert_allclose(full.p_b, dec_only.p_b, atol=1e-12)

    def test_a3_reports_cif_attention(self):
        _, cfg, p = _model("a3")
        out = bias_decode(*_states(), encode_hotwords(HW, p, cfg), p, cfg)
        assert set(out.branch_attn) == {"cif"}

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            BiasConfig(vocab_size=9, variant="a4")


def _toy(n=3, seed=0):
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((9, 4))
    feats, targets = [], []
    for _ in range(n):
        y = rng.integers(3, 9, rng.integers(3, 6)).tolist()
        feats.append(np.repeat(protos[y], 3, axis=0) + 0.05 * rng.standard_normal((3 * len(y), 4)))
        targets.append(y)
    return feats, targets


class TestTraining:
    def test_overfits_single_utterance(self):
        bcfg = BackboneConfig(**SMALL)
        backbone = init_backbone(bcfg, 1)
        cfg = BiasConfig.for_backbone(bcfg)
        feats, targets = _toy(1, seed=3)
        span = HotwordList([tuple(targets[0][1:3])])
        sched = BiasSchedule(epochs=500, batch_size=1, max_steps=500, log_every=0)
        res = train_bias(feats, targets, backbone, bcfg, cfg, SamplingConfig(), sched,
                         hotword_fn=lambda b, r: span)
        assert res.losses[-1] < 0.01
        batch = make_batch(feats, targets)
        D, E = backbone_states(batch, res.params, bcfg, "char")
        with no_grad():
            out = bias_decode(D, E, encode_hotwords(span, res.params, cfg), res.params, cfg)
            ce = float(cross_entropy(out.logits, bias_targets(batch, span)).data)
        assert ce < 0.01
        assert out.p_b.argmax(-1)[0].tolist() == [NO_BIAS, *targets[0][1:3]] + \
            [NO_BIAS] * (len(targets[0]) - 3)

    def test_backbone_is_untouched(self):
        bcfg = BackboneConfig(**SMALL)
        backbone = init_backbone(bcfg, 2)
        before = backbone.snapshot()
        feats, targets = _toy(4)
        cfg = BiasConfig.for_backbone(bcfg)
        res = train_bias(feats, targets, backbone, bcfg, cfg, SamplingConfig(r_b=1.0),
                         BiasSchedule(epochs=2, batch_size=2, log_every=0))
        for name, value in before.items():
            np.testing.assert_array_equal(res.params[name].data, value)
        assert all(not q.trainable for q in res.params.group("backbone"))
        assert all(q.trainable for q in res.params.group("bias"))

    def test_mutated_backbone_is_detected(self):
        bcfg = BackboneConfig(**SMALL)
        backbone = init_backbone(bcfg, 2)
        feats, targets = _toy(2)

        def tamper(epoch, params):
            params["backbone.out.b"].data[0] += 1.0

        with pytest.raises(FreezingError):
            train_bias(feats, targets, backbone, bcfg, BiasConfig.for_backbone(bcfg),
                       SamplingConfig(), BiasSchedule(epochs=1, log_every=0), on_epoch=tamper)

    def test_training_is_deterministic(self):
        bcfg = BackboneConfig(**SMALL)
        feats, targets = _toy(4, seed=5)
        cfg = BiasConfig.for_backbone(bcfg)
        runs = [train_bias(feats, targets, init_backbone(bcfg, 0), bcfg, cfg,
                           SamplingConfig(r_b=1.0), BiasSchedule(epochs=2, batch_size=2,
                                                                  log_every=0))
                for _ in range(2)]
        assert runs[0].losses == runs[1].losses

    def test_targets_mark_only_spans(self):
        feats, targets = _toy(2, seed=6)
        batch = make_batch(feats, targets)
        span = tuple(targets[0][:2])
        tgt = bias_targets(batch, HotwordList([span]))
        assert tgt[0, :2].tolist() == list(span)
        assert tgt[1, len(targets[1]):].tolist() == [0] * (tgt.shape[1] - len(targets[1]))
