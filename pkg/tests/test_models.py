"""Architecture contracts: shapes, parameter and MAC accounting, serialization.

Expected numbers below are frozen from hand arithmetic over the layer
definitions (kernel sizes, channel widths, ceil-mode halving), kept as
literals so any drift in the builders is caught against an independent
derivation rather than against the code itself.
"""

import numpy as np
import pytest

from voicedat import models
from voicedat.models import (
    Model, build_sepconv, build_stdconv, count_macs, count_params,
    feature_dim, macs_conv_depthwise, macs_conv_pointwise, macs_conv_standard,
    macs_dense, parse_spec, reduction_ratio, resource_table,
    separable_reduction_law, serialize_spec, shape_trace, spec_hash,
)
from voicedat.nn.layers import NotReadyError

# spatial dims entering each of the five blocks, after the 251 -> 126
# frequency pooling and successive ceil-mode 2x2 halvings
BLOCK_DIMS = [(127, 126), (64, 63), (32, 32), (16, 16), (8, 8)]
BLOCK_CIN = [1, 16, 16, 16, 16]

SEPCONV_MACS = {
    "block1_dw": 144018, "block1_pw": 256032,
    "block2_dw": 580608, "block2_pw": 1032192,
    "block3_dw": 147456, "block3_pw": 262144,
    "block4_dw": 36864, "block4_pw": 65536,
    "block5_dw": 9216, "block5_pw": 16384,
    "predictor": 768,
}

STDCONV_MACS = {
    "block1_conv": 2304288,
    "block2_conv": 9289728,
    "block3_conv": 2359296,
    "block4_conv": 589824,
    "block5_conv": 147456,
    "predictor": 768,
}


class TestShapeTrace:
    def test_spatial_chain(self):
        rows = shape_trace(build_sepconv())
        pools = [r.out_shape for r in rows if r.kind in ("freq_pool", "avgpool2d")]
        assert pools == [(127, 126, 1), (64, 63, 16), (32, 32, 16),
                         (16, 16, 16), (8, 8, 16), (4, 4, 16)]

    def test_flatten_is_256(self):
        assert feature_dim(build_sepconv()) == 256
        assert feature_dim(build_stdconv()) == 256
        rows = shape_trace(build_sepconv())
        flat = next(r for r in rows if r.kind == "flatten")
        assert flat.out_shape == (256,)

    def test_heads(self):
        rows = shape_trace(build_sepconv())
        assert rows[-2].name == "predictor" and rows[-2].out_shape == (3,)
        assert rows[-1].name == "domain" and rows[-1].out_shape == (3,)
        rows = shape_trace(build_sepconv(domain_head=False))
        assert rows[-1].name == "predictor"

    def test_stdconv_same_spatial_chain(self):
        rows = shape_trace(build_stdconv())
        pools = [r.out_shape[:2] for r in rows if r.kind in ("freq_pool", "avgpool2d")]
        assert pools == [(127, 126), (64, 63), (32, 32), (16, 16), (8, 8), (4, 4)]


class TestParamCounts:
    def test_sepconv_inference(self):
        # per block: 9*cin (dw) + 2*cin (bn) + 16*cin (pw) + 32 (bn), plus 771 fc
        blocks = [9 * c + 2 * c + 16 * c + 32 for c in BLOCK_CIN]
        assert blocks == [59, 464, 464, 464, 464]
        assert count_params(build_sepconv()) == sum(blocks) + 771 == 2686

    def test_stdconv_inference(self):
        blocks = [9 * c * 16 + 32 for c in BLOCK_CIN]
        assert blocks == [176, 2336, 2336, 2336, 2336]
        assert count_params(build_stdconv()) == sum(blocks) + 771 == 10291

    def test_training_scope_adds_domain_head(self):
        assert count_params(build_sepconv(), "training") == 2686 + 771
        assert count_params(build_stdconv(), "training") == 10291 + 771
        assert count_params(build_sepconv(domain_head=False), "training") == 2686

    def test_param_reduction(self):
        r = reduction_ratio(count_params(build_sepconv()), count_params(build_stdconv()))
        assert abs(r - 0.739) < 0.0005
        assert r == pytest.approx(1.0 - 2686 / 10291, abs=1e-15)

    def test_runtime_arrays_match_count(self):
        for build, scope_count in ((build_sepconv, 2686), (build_stdconv, 10291)):
            m = Model(build(), seed=0)
            trainable = sum(a.size for g in ("trunk", "predictor")
                            for a in m.group_params(g).values())
            assert trainable == scope_count
            total = sum(a.size for _, a in m.parameter_entries())
            assert total == scope_count + 771

    def test_bad_scope_rejected(self):
        with pytest.raises(ValueError):
            count_params(build_sepconv(), "deploy")


class TestMacCounts:
    def test_closed_form_helpers(self):
        assert macs_conv_standard(3, 3, 4, 8, 10, 12) == 9 * 4 * 8 * 120
        assert macs_conv_depthwise(3, 3, 4, 10, 12) == 9 * 4 * 120
        assert macs_conv_pointwise(4, 8, 10, 12) == 4 * 8 * 120
        assert macs_dense(256, 3) == 768

    def test_sepconv_per_layer(self):
        rows = {r.name: r.macs for r in shape_trace(build_sepconv())}
        for name, macs in SEPCONV_MACS.items():
            assert rows[name] == macs, name

    def test_stdconv_per_layer(self):
        rows = {r.name: r.macs for r in shape_trace(build_stdconv())}
        for name, macs in STDCONV_MACS.items():
            assert rows[name] == macs, name

    def test_totals(self):
        assert count_macs(build_sepconv()) == sum(SEPCONV_MACS.values()) == 2551218
        assert count_macs(build_stdconv()) == sum(STDCONV_MACS.values()) == 14691360

    def test_block_ratio_is_25_over_144(self):
        # dw+pw over standard at equal dims: 1/cout + 1/(kh*kw), any cin
        law = separable_reduction_law(3, 3, 16)
        assert law == pytest.approx(25 / 144, abs=1e-15)
        sep = {r.name: r.macs for r in shape_trace(build_sepconv())}
        std = {r.name: r.macs for r in shape_trace(build_stdconv())}
        for i in range(1, 6):
            pair = sep[f"block{i}_dw"] + sep[f"block{i}_pw"]
            ratio = pair / std[f"block{i}_conv"]
            assert abs(ratio - 25 / 144) < 1e-12, i

    def test_conv_only_reduction_exceeds_75_percent(self):
        r = reduction_ratio(count_macs(build_sepconv()), count_macs(build_stdconv()))
        assert r >= 0.75

    def test_elementwise_inclusive_is_larger(self):
        for build in (build_sepconv, build_stdconv):
            spec = build()
            assert count_macs(spec, include_elementwise=True) > count_macs(spec)

    def test_domain_head_excluded_from_inference_macs(self):
        assert count_macs(build_sepconv()) == count_macs(build_sepconv(domain_head=False))


class TestResourceTable:
    def test_scopes(self):
        spec = build_sepconv()
        inf = resource_table(spec, "inference")
        trn = resource_table(spec, "training")
        assert len(trn) == len(inf) + 1
        assert trn[-1].name == "domain"
        assert all(r.name != "domain" for r in inf)

    def test_text_render(self):
        text = models.format_resource_table(resource_table(build_sepconv()))
        assert "2686" in text and "2551218" in text

    def test_csv(self, tmp_path):
        path = tmp_path / "resources.csv"
        models.write_resource_csv(path, resource_table(build_sepconv()))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "layer,kind,params,macs"
        total = sum(int(ln.split(",")[2]) for ln in lines[1:])
        assert total == 2686


class TestSerialization:
    def test_round_trip(self):
        for spec in (build_sepconv(), build_stdconv(),
                     build_sepconv(grl_lambda=2.0), build_sepconv(domain_head=False)):
            assert parse_spec(serialize_spec(spec)) == spec

    def test_versioned_header(self):
        assert serialize_spec(build_sepconv()).startswith("voicedat-modelspec 1\n")

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError):
            parse_spec("something-else 1\nname x\n")

    def test_unknown_line_rejected(self):
        text = serialize_spec(build_sepconv()) + "wings 2\n"
        with pytest.raises(ValueError):
            parse_spec(text)

    def test_hash_covers_lambda(self):
        a = spec_hash(build_sepconv(grl_lambda=0.5))
        b = spec_hash(build_sepconv(grl_lambda=1.0))
        assert len(a) == 32 and a != b
        assert spec_hash(build_sepconv()) == spec_hash(build_sepconv())

    def test_hash_covers_architecture(self):
        assert spec_hash(build_sepconv()) != spec_hash(build_stdconv())

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            build_sepconv(grl_lambda=-0.1)


class TestModelRuntime:
    def _batch(self, rng, n=2):
        return rng.normal(size=(n, 127, 251))

    def test_feature_shape(self):
        m = Model(build_sepconv(), seed=7)
        x = self._batch(np.random.default_rng(0))
        f = m.features(x, train=True)
        assert f.shape == (2, 256)

    def test_predict_shapes_and_probs(self):
        m = Model(build_sepconv(), seed=7)
        x = self._batch(np.random.default_rng(0), n=3)
        m.features(x, train=True)  # populate BN statistics
        p = m.predict_proba(x)
        assert p.shape == (3, 3)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)
        y = m.predict(x)
        assert y.shape == (3,) and set(y) <= {0, 1, 2}

    def test_inference_never_touches_domain_head(self):
        m = Model(build_sepconv(), seed=7)
        x = self._batch(np.random.default_rng(0))
        m.features(x, train=True)
        m.predict(x)
        m.predict_proba(x)
        assert m.domain.forward_calls == 0
        assert m.grl.forward_calls == 0

    def test_eval_before_train_raises(self):
        m = Model(build_sepconv(), seed=7)
        x = self._batch(np.random.default_rng(0))
        with pytest.raises(NotReadyError):
            m.features(x, train=False)

    def test_same_seed_same_model(self):
        x = self._batch(np.random.default_rng(0))
        fa = Model(build_sepconv(), seed=11).features(x, train=True)
        fb = Model(build_sepconv(), seed=11).features(x, train=True)
        np.testing.assert_array_equal(fa, fb)

    def test_different_seed_different_model(self):
        x = self._batch(np.random.default_rng(0))
        fa = Model(build_sepconv(), seed=11).features(x, train=True)
        fb = Model(build_sepconv(), seed=12).features(x, train=True)
        assert np.abs(fa - fb).max() > 0

    def test_stdconv_runs(self):
        m = Model(build_stdconv(), seed=3)
        x = self._batch(np.random.default_rng(1))
        assert m.features(x, train=True).shape == (2, 256)

    def test_domain_logits(self):
        m = Model(build_sepconv(), seed=7)
        x = self._batch(np.random.default_rng(0))
        f = m.features(x, train=True)
        d = m.domain_logits(f, train=True)
        assert d.shape == (2, 3)
        assert m.grl.forward_calls == 1

    def test_headless_model_rejects_domain_logits(self):
        m = Model(build_sepconv(domain_head=False), seed=7)
        x = self._batch(np.random.default_rng(0))
        f = m.features(x, train=True)
        assert m.domain is None
        with pytest.raises(ValueError):
            m.domain_logits(f, train=True)

    def test_copy_matches_and_detaches(self):
        m = Model(build_sepconv(), seed=7)
        x = self._batch(np.random.default_rng(0))
        m.features(x, train=True)
        c = m.copy()
        fa = m.features(x, train=False)
        fb = c.features(x, train=False)
        np.testing.assert_array_equal(fa, fb)
        c.predictor.weight += 1.0
        assert np.abs(m.predictor.weight - c.predictor.weight).max() > 0

    def test_backward_accumulates_into_trunk(self):
        m = Model(build_sepconv(), seed=7)
        x = self._batch(np.random.default_rng(0))
        f = m.features(x, train=True)
        m.backward_features(np.ones_like(f))
        g1 = {k: v.copy() for k, v in m.group_grads("trunk").items()}
        m.features(x, train=True)
        m.backward_features(np.ones_like(f))
        g2 = m.group_grads("trunk")
        for k in g1:
            np.testing.assert_allclose(g2[k], 2.0 * g1[k], rtol=1e-12)
        m.zero_grad()
        assert all(np.all(v == 0) for v in m.group_grads("trunk").values())


class TestFusedTrunk:
    """fused=True and fused=False build the same network, layout included."""

    def test_parameter_layout_identical(self):
        a = Model(build_sepconv(), seed=11, fused=True)
        b = Model(build_sepconv(), seed=11, fused=False)
        ea, eb = a.parameter_entries(), b.parameter_entries()
        assert [name for name, _ in ea] == [name for name, _ in eb]
        for (_, pa), (_, pb) in zip(ea, eb):
            np.testing.assert_array_equal(pa, pb)

    def test_forward_backward_agree(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(3, 127, 251))
        a = Model(build_sepconv(), seed=11, dtype=np.float64, fused=True)
        b = Model(build_sepconv(), seed=11, dtype=np.float64, fused=False)
        fa = a.features(x, train=True)
        fb = b.features(x, train=True)
        np.testing.assert_allclose(fa, fb, rtol=1e-10, atol=1e-12)

        gy = rng.normal(size=fa.shape)
        a.backward_features(gy)
        b.backward_features(gy)
        ga, gb = a.group_grads("trunk"), b.group_grads("trunk")
        assert ga.keys() == gb.keys()
        for key in ga:
            np.testing.assert_allclose(ga[key], gb[key], rtol=1e-9, atol=1e-11)

    def test_copy_preserves_fusion_flag(self):
        m = Model(build_sepconv(), seed=3, fused=False)
        assert m.copy().fused is False
