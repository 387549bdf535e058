import numpy as np
import pytest
from scipy.spatial.distance import pdist

from identlab.errors import ConfigError, ShapeError
from identlab.genmodel import (
    Geometry,
    LatentSpaceSpec,
    MixerMlp,
    PairedDataset,
    Prior,
    build_mixer,
    generate_pairs,
    mixer_forward,
)
from identlab.linalg import condition_number
from identlab.rand import ConditionalFamily, RngState
from test_rand import truncated_laplace_mad


def sphere_spec(kappa=1.0):
    return LatentSpaceSpec(Geometry.SPHERE, 10, Prior(), ConditionalFamily.vmf(kappa))


def box_spec(scale=0.05):
    return LatentSpaceSpec(Geometry.BOX, 10, Prior(), ConditionalFamily.laplace(scale))


def _dataset(spec, n, seed=0, specific=5):
    r = RngState(seed)
    mx = build_mixer(r.derive_child("mx"), spec.dim, specific)
    mt = build_mixer(r.derive_child("mt"), spec.dim, specific)
    return generate_pairs(r.derive_child("data"), spec, mx, mt, n)


class TestSpecRules:
    @pytest.mark.parametrize(
        "geometry,prior,cond,rule",
        [
            ("box", Prior("normal", 1.0), ConditionalFamily.laplace(0.1), "BOX prior"),
            ("box", Prior(), ConditionalFamily.vmf(1.0), "BOX conditional"),
            ("unbounded", Prior(), ConditionalFamily.normal(1.0), "UNBOUNDED prior"),
            ("unbounded", Prior("laplace", 1.0), ConditionalFamily.vmf(1.0), "UNBOUNDED conditional"),
            ("sphere", Prior("laplace", 1.0), ConditionalFamily.vmf(1.0), "SPHERE prior"),
        ],
    )
    def test_invalid_combinations_name_rule(self, geometry, prior, cond, rule):
        with pytest.raises(ConfigError, match=rule):
            LatentSpaceSpec(geometry, 4, prior, cond)

    def test_dict_roundtrip(self):
        s = LatentSpaceSpec("unbounded", 3, Prior("normal", 1.0), ConditionalFamily.gennorm(3.0, 0.2))
        assert LatentSpaceSpec.from_dict(s.to_dict()) == s


class TestMixer:
    def test_condition_numbers(self):
        m = build_mixer(RngState(0), 10, 5, layers=3, cond_max=10.0)
        assert m.layers == 3 and m.dim == 15
        assert all(condition_number(w) <= 10 + 1e-6 for w in m.weights)

    def test_injective_probe(self):
        m = build_mixer(RngState(1), 10, 5)
        u = RngState(2).generator.standard_normal((1000, 15))
        assert pdist(u).min() > 0
        assert pdist(m(u)).min() > 0

    def test_leak_one_is_affine(self):
        m = build_mixer(RngState(3), 3, 2, layers=3, leak=1.0)
        u = RngState(4).generator.standard_normal((20, 5))
        (w1, w2, w3), (b1, b2, b3) = m.weights, m.biases
        oracle = ((u @ w1.T + b1) @ w2.T + b2) @ w3.T + b3
        np.testing.assert_allclose(m(u), oracle, atol=1e-12)

    def test_zero_weights(self):
        m = MixerMlp([np.zeros((3, 3))] * 2, [np.zeros(3)] * 2, 0.2)
        np.testing.assert_array_equal(mixer_forward(m, np.ones(3)), np.zeros(3))

    def test_identity_positive_passthrough(self):
        m = MixerMlp([np.eye(4)] * 3, [np.zeros(4)] * 3, 0.2)
        u = np.array([0.5, 1.0, 2.0, 3.0])
        np.testing.assert_array_equal(mixer_forward(m, u), u)

    def test_identity_negative_scalar_recurrence(self):
        m = MixerMlp([np.eye(2)] * 3, [np.zeros(2)] * 3, 0.2)
        u = np.array([-1.0, -3.0])
        # two hidden activations, final layer affine only
        np.testing.assert_allclose(mixer_forward(m, u), 0.2 * 0.2 * u, rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mixer_forward(build_mixer(RngState(5), 2, 1), np.ones(4))


class TestGeneratePairs:
    def test_sphere_rows_unit_norm(self):
        d = _dataset(sphere_spec(), 100)
        for z in (d.Zx, d.Zt):
            assert np.max(np.abs(np.linalg.norm(z, axis=1) - 1)) <= 1e-12
        assert d.X.shape == (100, 15) and d.Mx.shape == (100, 5)

    def test_observations_are_mixed_latents(self):
        r = RngState(6)
        mx, mt = build_mixer(r.derive_child("a"), 10, 5), build_mixer(r.derive_child("b"), 10, 5)
        d = generate_pairs(r, box_spec(), mx, mt, 50)
        np.testing.assert_array_equal(d.X, mx(np.hstack([d.Zx, d.Mx])))
        np.testing.assert_array_equal(d.T, mt(np.hstack([d.Zt, d.Mt])))

    def test_box_l1_gap_matches_quadrature(self):
        d = _dataset(box_spec(0.05), 4000)
        assert np.all(box_spec().contains(d.Zx)) and np.all(box_spec().contains(d.Zt))
        # centers near a face truncate; average the oracle over the actual centers
        rows = d.Zx[:300].ravel()
        oracle = 10 * np.mean([truncated_laplace_mad(0.05, c, -1.0, 1.0) for c in rows])
        gap = np.mean(np.sum(np.abs(d.Zt - d.Zx), axis=1))
        assert abs(gap - oracle) <= 0.1 * oracle

    def test_specific_latents_standard_normal(self):
        d = _dataset(box_spec(), 20000)
        assert abs(d.Mx.mean()) < 0.02 and abs(d.Mt.var() - 1) < 0.03

    def test_pooled_sphere_marginal_uniform(self):
        d = _dataset(sphere_spec(), 50000, seed=7)
        assert np.max(np.abs(d.Zt.mean(axis=0))) < 0.02
        assert abs(np.mean(d.Zt[:, 0] ** 2) - 0.1) < 0.01

    @pytest.mark.parametrize(
        "spec",
        [
            LatentSpaceSpec("sphere", 4, Prior("normal", 1.0), ConditionalFamily.laplace(0.05)),
            LatentSpaceSpec("sphere", 4, Prior(), ConditionalFamily.normal(0.05)),
            LatentSpaceSpec("box", 4, Prior(), ConditionalFamily.gennorm(3.0, 0.05)),
            LatentSpaceSpec("unbounded", 4, Prior("laplace", 1.0), ConditionalFamily.normal(1.0)),
        ],
    )
    def test_geometry_preserved(self, spec):
        d = _dataset(spec, 500, specific=2)
        assert np.all(spec.contains(d.Zx)) and np.all(spec.contains(d.Zt))

    def test_same_seed_bit_identical(self):
        a, b = _dataset(box_spec(), 200, seed=3), _dataset(box_spec(), 200, seed=3)
        for name in ("Zx", "Zt", "Mx", "Mt", "X", "T"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()

    def test_dim_mismatch(self):
        r = RngState(0)
        with pytest.raises(ShapeError):
            generate_pairs(r, box_spec(), build_mixer(r, 10, 5), build_mixer(r, 9, 5), 10, specific_dim=5)

    def test_save_load_roundtrip(self, tmp_path):
        d = _dataset(sphere_spec(), 64)
        d.save(tmp_path / "ds")
        assert sorted(p.name for p in (tmp_path / "ds").iterdir()) == sorted(
            ["Zx.midl", "Zt.midl", "Mx.midl", "Mt.midl", "X.midl", "T.midl", "manifest.json"]
        )
        e = PairedDataset.load(tmp_path / "ds")
        for name in ("Zx", "Zt", "Mx", "Mt", "X", "T"):
            assert getattr(e, name).tobytes() == getattr(d, name).tobytes()
        assert e.spec == d.spec and e.mixer_hashes == d.mixer_hashes
