import numpy as np
import pytest

from helpers import model_grad_errors
from kanae.errors import ConfigurationError, ModelFileError, NumericError
from kanae.model import (
    MAGIC,
    VARIANTS,
    AeArchitecture,
    build_model,
    count_parameters,
    default_architecture,
    load_container,
    load_model,
    loss,
    normalize_variant,
    reconstruct,
    save_model,
)

DEFAULT_COUNTS = {"oae": 10088, "efficientkan": 11550, "fastkan": 10074, "fourierkan": 9958, "wavkan": 6716}


def _warm(model, X, steps=3):
    # give normalisation layers non-trivial running statistics
    for _ in range(steps):
        _, _, caches = model.loss_and_grads(X, training=True)
        for layer, cache in zip(model.layers, caches):
            if hasattr(layer, "update_running_stats"):
                layer.update_running_stats(cache)
    return model


class TestArchitecture:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_default_counts(self, variant):
        assert count_parameters(build_model(default_architecture(variant), seed=0)) == DEFAULT_COUNTS[variant]

    def test_default_shapes(self):
        assert default_architecture("oae").layer_sizes == (33, 85, 25, 85, 33)
        for v in VARIANTS[1:]:
            arch = default_architecture(v)
            assert arch.layer_sizes == (33, 25, 33)
            assert arch.latent_dim == 25

    def test_default_lambdas(self):
        oae = default_architecture("oae")
        assert (oae.lambda_orth, oae.lambda_l1, oae.lambda_entropy) == (1.0, 0.0, 0.0)
        ek = default_architecture("efficientkan")
        assert (ek.lambda_orth, ek.lambda_l1, ek.lambda_entropy) == (0.0, 1.93e-4, 7.73e-4)
        for v in ("fastkan", "fourierkan", "wavkan"):
            a = default_architecture(v)
            assert a.lambda_orth == a.lambda_l1 == a.lambda_entropy == 0.0

    def test_empty_model(self):
        assert count_parameters(None) == 0

    def test_doubling_latent_doubles_weights(self):
        a = build_model(AeArchitecture("oae", (10, 4, 10)), 0).layers[0]
        b = build_model(AeArchitecture("oae", (10, 8, 10)), 0).layers[0]
        assert b.params["weight"].size == 2 * a.params["weight"].size

    @pytest.mark.parametrize("sizes", [(33, 25, 32), (33,), (33, 0, 33)])
    def test_bad_sizes(self, sizes):
        with pytest.raises(ConfigurationError):
            AeArchitecture("oae", sizes)

    def test_aliases(self):
        assert normalize_variant("WavKAN-AE") == "wavkan"
        with pytest.raises(ConfigurationError):
            normalize_variant("transformer")

    def test_dict_round_trip(self):
        for v in VARIANTS:
            arch = default_architecture(v)
            assert AeArchitecture.from_dict(arch.to_dict()) == arch


class TestBuildAndReconstruct:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_seed_determinism(self, variant):
        a = build_model(default_architecture(variant), seed=7)
        b = build_model(default_architecture(variant), seed=7)
        c = build_model(default_architecture(variant), seed=8)
        for (_, _, p), (_, _, q), (_, _, r) in zip(a.parameters(), b.parameters(), c.parameters()):
            np.testing.assert_array_equal(p, q)
        assert any(not np.array_equal(p, r) for (_, _, p), (_, _, r) in zip(a.parameters(), c.parameters()))

    def test_zero_efficientkan(self):
        m = build_model(default_architecture("efficientkan"), 0)
        for _, _, p in m.parameters():
            p[...] = 0
        Xhat, Z = reconstruct(m, np.random.default_rng(0).normal(size=(5, 33)))
        np.testing.assert_array_equal(Xhat, 0)
        np.testing.assert_array_equal(Z, 0)
        assert Z.shape == (5, 25)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_batch_independence(self, variant):
        X = np.random.default_rng(1).normal(size=(256, 33))
        m = _warm(build_model(default_architecture(variant), 3), X[:64])
        full, zf = m.reconstruct(X)
        for i in (0, 17, 255):
            one, z1 = m.reconstruct(X[i : i + 1])
            np.testing.assert_array_equal(one[0], full[i])
            np.testing.assert_array_equal(z1[0], zf[i])

    def test_chunked_inference_matches(self):
        m = build_model(default_architecture("fastkan"), 0)
        X = np.random.default_rng(2).normal(size=(5000, 33))
        big, _ = m.reconstruct(X)
        np.testing.assert_array_equal(big[4500:], m.reconstruct(X[4500:])[0])

    def test_non_finite_names_layer(self):
        m = build_model(default_architecture("oae"), 0)
        m.layers[1].params["weight"][0, 0] = np.inf
        with pytest.raises(NumericError, match="layer 1"):
            m.reconstruct(np.ones((2, 33)))


class TestLoss:
    def test_unit_error(self):
        m = build_model(AeArchitecture("efficientkan", (2, 2, 2)), 0)
        for _, _, p in m.parameters():
            p[...] = 0
        br = loss(m, np.array([[1.0, 0.0]]))
        assert br.mse == 1.0 and br.total == 1.0

    def _identity_oae(self, n=3):
        m = build_model(AeArchitecture("oae", (n, n, n), hidden_activation="identity", lambda_orth=1.0), 0)
        for layer in m.layers:
            layer.params["weight"][...] = np.eye(n)
            layer.params["bias"][...] = 0
        return m

    def test_perfect_reconstruction(self):
        m = self._identity_oae()
        X = np.random.default_rng(0).normal(size=(10, 3))
        assert loss(m, X).mse == 0.0

    def test_orthonormal_latent(self):
        m = self._identity_oae()
        Q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(8, 3)))
        br = loss(m, Q)
        assert br.orthogonality == pytest.approx(0.0, abs=1e-24)

    def test_penalties_by_variant(self):
        X = np.random.default_rng(3).normal(size=(16, 33))
        for v in VARIANTS:
            br = loss(build_model(default_architecture(v), 0), X)
            a = default_architecture(v)
            assert br.total == pytest.approx(
                br.mse + a.lambda_orth * br.orthogonality + a.lambda_l1 * br.l1 + a.lambda_entropy * br.entropy
            )
            if v == "oae":
                assert br.orthogonality > 0
            if v == "efficientkan":
                assert br.l1 > 0 and br.entropy > 0
            if v in ("fastkan", "fourierkan", "wavkan"):
                assert br.total == br.mse


class TestGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("training", [True, False])
    def test_full_model(self, variant, training):
        arch = default_architecture(variant, n_features=6, latent=4, hidden=5)
        rng = np.random.default_rng(11)
        m = build_model(arch, 3)
        for _, _, p in m.parameters():
            p += rng.normal(scale=0.1, size=p.shape)
        X = rng.normal(size=(8, 6))
        if not training:
            _warm(m, X)
        errs = model_grad_errors(m, X, training=training)
        assert max(errs.values()) < 1e-5, errs


class TestContainer:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_round_trip(self, tmp_path, variant):
        X = np.random.default_rng(4).normal(size=(32, 33))
        m = _warm(build_model(default_architecture(variant), 5), X)
        path = save_model(m, tmp_path / "m.kae", extras={"q": np.arange(3.0)}, metadata={"alpha": 0.05})
        back, extras, meta = load_container(path)
        np.testing.assert_array_equal(back.reconstruct(X)[0], m.reconstruct(X)[0])
        assert count_parameters(back) == count_parameters(m)
        assert back.arch == m.arch
        np.testing.assert_array_equal(extras["q"], [0, 1, 2])
        assert meta == {"alpha": 0.05}

    def test_layout(self, tmp_path):
        path = save_model(build_model(default_architecture("wavkan"), 0), tmp_path / "m.kae")
        raw = path.read_bytes()
        assert raw[:8] == MAGIC
        assert int.from_bytes(raw[8:10], "little") == 1

    def test_truncated(self, tmp_path):
        path = save_model(build_model(default_architecture("oae"), 0), tmp_path / "m.kae")
        raw = path.read_bytes()
        for cut in (5, len(raw) // 2, len(raw) - 1):
            bad = tmp_path / f"cut{cut}.kae"
            bad.write_bytes(raw[:cut])
            with pytest.raises(ModelFileError):
                load_model(bad)

    def test_bit_flip(self, tmp_path):
        path = save_model(build_model(default_architecture("oae"), 0), tmp_path / "m.kae")
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(ModelFileError):
            load_model(path)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "x.kae"
        p.write_bytes(b"NOTAMODEL" * 10)
        with pytest.raises(ModelFileError):
            load_model(p)
