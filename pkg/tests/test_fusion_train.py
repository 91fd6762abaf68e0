import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypernie.fusion import (LossParts, ModelConfig, contrastive_loss, fuse,
                             regression_losses, total_loss)
from hypernie.hhkg import DataError
from hypernie.numsub import Tensor
from hypernie.train import (TrainConfig, TrainingDiverged, build_model, checkpoint_echo,
                            config_from_echo, load_checkpoint, model_from_checkpoint,
                            save_checkpoint, train, train_folds)


def contrastive_oracle(a, b, tau):
    """Explicit double loop over the in-batch similarity matrix."""
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    n = len(a)
    S = [[float(a[i] @ b[j]) / tau for j in range(n)] for i in range(n)]
    rows = cols = 0.0
    for i in range(n):
        rows += -S[i][i] + np.log(sum(np.exp(S[i][j]) for j in range(n)))
        cols += -S[i][i] + np.log(sum(np.exp(S[j][i]) for j in range(n)))
    return 0.5 * (rows / n + cols / n)


class TestFuse:
    def test_eta_one(self):
        a, b = np.array([1.0, 2.0]), np.array([5.0, 7.0])
        np.testing.assert_array_equal(fuse(a, b, 1.0), a)

    def test_equal_inputs(self):
        a = np.array([0.3, -1.0])
        np.testing.assert_array_equal(fuse(a, a, 0.5), a)

    def test_defaults(self):
        np.testing.assert_allclose(fuse(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.3),
                                   [0.3, 0.7])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.floats(0, 1), st.integers(0, 1000))
    def test_linear(self, c, eta, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        np.testing.assert_allclose(fuse(c * x, c * y, eta), c * fuse(x, y, eta), atol=1e-12)


class TestContrastive:
    def test_batch_of_one(self):
        z = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
        assert float(contrastive_loss(z, z, 0.5, [1]).data) == pytest.approx(0.0, abs=1e-12)

    def test_orthonormal_low_temperature(self):
        z = Tensor(np.eye(4))
        assert float(contrastive_loss(z, z, 1e-3, np.arange(4)).data) < 1e-10

    def test_matches_double_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
        got = float(contrastive_loss(Tensor(a), Tensor(b), 1.0, np.arange(8)).data)
        assert abs(got - contrastive_oracle(a, b, 1.0)) <= 1e-10

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(0.05, 5.0))
    def test_symmetric(self, seed, tau):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
        idx = rng.choice(6, 4, replace=False)
        ab = float(contrastive_loss(Tensor(a), Tensor(b), tau, idx).data)
        ba = float(contrastive_loss(Tensor(b), Tensor(a), tau, idx).data)
        assert ab == pytest.approx(ba, abs=1e-12)

    def test_empty_batch(self):
        z = Tensor(np.ones((2, 2)))
        with pytest.raises(ValueError):
            contrastive_loss(z, z, 1.0, [])

    def test_raw_dot_toggle(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 3))
        scaled = float(contrastive_loss(Tensor(a * 3), Tensor(a), 1.0, np.arange(5),
                                        normalize=False).data)
        normed = float(contrastive_loss(Tensor(a * 3), Tensor(a), 1.0, np.arange(5)).data)
        assert scaled != pytest.approx(normed)


class TestRegression:
    def test_exact_predictions(self):
        t = np.array([1.0, 2.0])
        p = Tensor(np.array([1.0, 2.0, 9.0]))
        assert all(float(l.data) == 0.0 for l in regression_losses(p, p, p, t, [0, 1]))

    def test_single_node(self):
        p = Tensor(np.array([5.0]))
        assert float(regression_losses(p, p, p, np.array([3.0]), [0])[2].data) == 4.0

    def test_brute_force(self):
        rng = np.random.default_rng(3)
        p, t = rng.standard_normal(20), rng.standard_normal(7)
        idx = rng.choice(20, 7, replace=False)
        got = float(regression_losses(None, None, Tensor(p), t, idx)[2].data)
        assert got == pytest.approx(sum((p[i] - y) ** 2 for i, y in zip(idx, t)) / 7, abs=1e-14)

    def test_empty_mask(self):
        p = Tensor(np.ones(3))
        with pytest.raises(ValueError):
            regression_losses(p, p, p, np.array([]), [])


def _parts(f, c, s, m):
    return LossParts(*(Tensor(np.array(v, dtype=np.float64)) for v in (f, c, s, m)))


class TestTotalLoss:
    def test_weights_zero(self):
        assert float(total_loss(_parts(1.5, 9, 9, 9), 0, 0).data) == 1.5

    def test_formula(self):
        assert float(total_loss(_parts(1, 2, 3, 5), 0.1, 0.2).data) == pytest.approx(
            1 + 0.1 * 2 + 0.2 * 4)

    def test_ablation_switches(self):
        p = _parts(1, 2, 3, 5)
        assert float(total_loss(p, 0.1, 0.2, use_contrastive=False).data) == pytest.approx(1.8)
        assert float(total_loss(p, 0.1, 0.2, use_unimodal=False).data) == pytest.approx(1.2)
        assert float(total_loss(p, 0.1, 0.2, False, False).data) == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=4, max_size=4), st.integers(0, 3),
           st.floats(0, 5), st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, vals, which, bump, alpha, beta):
        up = list(vals)
        up[which] += bump
        assert float(total_loss(_parts(*up), alpha, beta).data) >= \
            float(total_loss(_parts(*vals), alpha, beta).data) - 1e-12

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            total_loss(_parts(1, 1, 1, 1), -0.1, 0)


def _cfg(mode="full", **kw):
    model = ModelConfig(mode=mode, hidden=8, struct_heads=2, sem_heads=2, type_dim=4,
                        dropout=0.0, dtype="float64", chunk_size=7)
    kw.setdefault("max_epochs", 30)
    kw.setdefault("patience", 30)
    return TrainConfig(model=model, **kw)


def _grads(model, loss):
    model.zero_grad()
    loss.backward()
    return {k: p.grad.copy() for k, p in model.named_parameters()}


class TestLossPlumbing:
    def _setup(self, small_synth, alpha, beta):
        kg, features, labels = small_synth
        from hypernie.hhkg import build_hypergraph
        hg = build_hypergraph(kg)
        cfg = _cfg(alpha=alpha, beta=beta)
        model = build_model(features, cfg)
        out = model(hg, features)
        idx = labels.node_ids[:6]
        parts = model.loss_parts(out, np.zeros(6), idx, np.arange(hg.n_nodes))
        return model, parts, cfg

    def test_alpha_zero_no_temperature_gradient(self, small_synth):
        model, parts, cfg = self._setup(small_synth, 0.0, 0.2)
        g = _grads(model, total_loss(parts, cfg.alpha, cfg.beta))
        assert np.all(g["log_tau"] == 0)
        model, parts, cfg = self._setup(small_synth, 0.1, 0.2)
        g = _grads(model, total_loss(parts, cfg.alpha, cfg.beta))
        assert np.any(g["log_tau"] != 0)

    def test_beta_zero_drops_unimodal_gradients(self, small_synth):
        model, parts, cfg = self._setup(small_synth, 0.1, 0.0)
        with_beta0 = _grads(model, total_loss(parts, 0.1, 0.0))
        without = _grads(model, parts.fusion + parts.contrastive * 0.1)
        for k in with_beta0:
            np.testing.assert_array_equal(with_beta0[k], without[k], err_msg=k)


class TestModelModes:
    def test_structural_has_no_semantic_parameters(self, small_synth):
        model = build_model(small_synth[1], _cfg("structural"))
        names = [k for k, _ in model.named_parameters()]
        assert names and not any(k.startswith("sem.") for k in names)
        assert model.sem is None and model.eta_logit is None and model.log_tau is None

    def test_semantic_has_no_structural_parameters(self, small_synth):
        model = build_model(small_synth[1], _cfg("semantic"))
        assert not any(k.startswith("struct.") for k, _ in model.named_parameters())

    def test_concat_head(self, small_synth):
        model = build_model(small_synth[1], _cfg("concat"))
        assert model.concat_head.weight.shape == (16, 1)

    def test_eta_parameterization(self, small_synth):
        model = build_model(small_synth[1], _cfg())
        assert float(model.eta1().data) == pytest.approx(0.3)
        assert float(model.tau().data) == pytest.approx(0.5)

    def test_fixed_eta(self, small_synth):
        cfg = _cfg()
        cfg.model.learn_eta = False
        model = build_model(small_synth[1], cfg)
        assert model.eta_logit is None and model.eta1() == 0.3


class TestTrain:
    def test_fusion_loss_drops(self, small_synth):
        kg, features, labels = small_synth
        from hypernie.hhkg import build_hypergraph
        hg = build_hypergraph(kg)
        _, log = train(hg, features, labels, _cfg(max_epochs=100, patience=100))
        loss = log.column("loss_fusion")
        assert loss[-1] < loss[0]
        assert len(log.rows) == 100

    def test_early_stop_with_frozen_validation(self, small_synth):
        kg, features, labels = small_synth
        from hypernie.hhkg import build_hypergraph
        hg = build_hypergraph(kg)
        cfg = _cfg("structural", lr=0.0, weight_decay=0.0, max_epochs=50, patience=5)
        _, log = train(hg, features, labels, cfg)
        assert np.ptp(log.column("val_loss_fusion")) == 0
        assert log.best_epoch == 0 and log.stopped_epoch <= 5

    def test_same_seed_same_parameters(self, small_synth):
        kg, features, labels = small_synth
        from hypernie.hhkg import build_hypergraph
        hg = build_hypergraph(kg)
        a, _ = train(hg, features, labels, _cfg(seed=3))
        b, _ = train(hg, features, labels, _cfg(seed=3))
        for (k, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
            assert x.tobytes() == y.tobytes(), k

    def test_divergence_restores_last_good(self, small_synth):
        kg, features, labels = small_synth
        from hypernie.hhkg import build_hypergraph
        hg = build_hypergraph(kg)
        cfg = _cfg(lr=1e200, max_epochs=20, patience=20)
        with pytest.raises(TrainingDiverged) as info, np.errstate(all="ignore"):
            train(hg, features, labels, cfg)
        assert all(np.isfinite(v).all() for v in info.value.model.state_dict().values())

    def test_folds_parallel_matches_sequential(self, mid_synth):
        kg, hg, features, labels = mid_synth
        cfg = _cfg(max_epochs=5, patience=5)
        _, logs1, _, rep1 = train_folds(hg, features, labels, cfg, jobs=1)
        _, logs2, _, rep2 = train_folds(hg, features, labels, cfg, jobs=3)
        assert rep1.folds == rep2.folds
        assert len(rep1.folds) == 3


class TestCheckpoint:
    def test_round_trip(self, tmp_path, small_synth):
        features = small_synth[1]
        cfg = _cfg("concat", seed=9)
        model = build_model(features, cfg)
        save_checkpoint(tmp_path / "m.hhkc", model, cfg, extra={"fold": 2})
        state, cfg2, _ = load_checkpoint(tmp_path / "m.hhkc")
        assert cfg2 == cfg
        assert checkpoint_echo(tmp_path / "m.hhkc")["fold"] == "2"
        for k, v in model.state_dict().items():
            assert state[k].tobytes() == v.astype(np.float64).tobytes()

    def test_shape_mismatch_names_tensor(self, tmp_path, small_synth):
        features = small_synth[1]
        model = build_model(features, _cfg())
        save_checkpoint(tmp_path / "m.hhkc", model, _cfg())
        from hypernie.ingest import FeatureBundle
        wider = FeatureBundle(np.hstack([features.X1, features.X1]), features.X2,
                              features.e_type_ids, features.n_types)
        with pytest.raises(DataError, match="struct.hsa.weight"):
            model_from_checkpoint(tmp_path / "m.hhkc", wider)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.hhkc")

    def test_config_echo_round_trip(self):
        cfg = _cfg("semantic", alpha=0.0, use_unimodal=False, seed=4)
        assert config_from_echo(cfg.echo()) == cfg

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(max_epochs=10, patience=20)
        with pytest.raises(ValueError):
            ModelConfig(mode="other")
