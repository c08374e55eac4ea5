import numpy as np
import pytest

from graphcf.errors import ConfigError, StructuralError
from graphcf.models import (
    Batch,
    CHECKPOINT_MAGIC,
    EmbeddingTable,
    ModelParams,
    cal_loss,
    forward,
    full_predict,
    load_checkpoint,
    propagate,
    propagate_grad,
    sample_epoch_views,
    save_checkpoint,
)
from graphcf.sparse import from_coo, normalize_sym
from helpers import (
    fd_gradient,
    model_fd_check,
    random_batch,
    random_bipartite_dataset,
    rel_err,
    small_params,
)


class TestModelParams:
    def test_irrelevant_field_rejected(self):
        with pytest.raises(ConfigError, match="temperature"):
            ModelParams(name="lightgcn", temperature=0.2)
        with pytest.raises(ConfigError, match="dropout"):
            ModelParams(name="simgcl", ssl_weight=0.1, temperature=0.2,
                        noise=0.1, dropout=0.1)

    def test_missing_required_field(self):
        with pytest.raises(ConfigError, match="requires"):
            ModelParams(name="sgl", ssl_weight=0.1, temperature=0.2)

    def test_range_checks(self):
        with pytest.raises(ConfigError):
            ModelParams(name="lightgcn", layers=-1)
        with pytest.raises(ConfigError):
            ModelParams(name="directau", gamma=-0.5)
        with pytest.raises(ConfigError):
            ModelParams(name="sgl", ssl_weight=0.1, temperature=0.0, dropout=0.1)

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            ModelParams(name="ncf")


def single_edge_adjacency():
    raw = from_coo(2, 2, [(0, 1, 1.0), (1, 0, 1.0)])
    return normalize_sym(raw)


class TestPropagate:
    def test_zero_layers_is_identity(self):
        adj = single_edge_adjacency()
        e0 = np.random.default_rng(0).standard_normal((2, 3))
        z, terms = propagate(adj, e0, 0)
        assert np.array_equal(z, e0)
        assert terms is None

    def test_single_edge_hand_propagation(self):
        adj = single_edge_adjacency()
        e0 = np.array([[1.0, 2.0], [3.0, 5.0]])
        z, _ = propagate(adj, e0, 1)
        expected = np.array([[(1 + 3) / 2, (2 + 5) / 2], [(3 + 1) / 2, (5 + 2) / 2]])
        assert np.allclose(z, expected, atol=1e-15)

    def test_linearity(self):
        ds = random_bipartite_dataset(5, 5, seed=1)
        rng = np.random.default_rng(2)
        a = rng.standard_normal((10, 4))
        b = rng.standard_normal((10, 4))
        za, _ = propagate(ds.adjacency, a, 3)
        zb, _ = propagate(ds.adjacency, b, 3)
        zab, _ = propagate(ds.adjacency, a + 2.5 * b, 3)
        assert np.abs(zab - (za + 2.5 * zb)).max() <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(StructuralError):
            propagate(single_edge_adjacency(), np.ones((3, 2)), 1)

    def test_exclude_input_layer(self):
        adj = single_edge_adjacency()
        e0 = np.array([[1.0], [3.0]])
        z, _ = propagate(adj, e0, 1, include_input=False)
        assert np.allclose(z, [[3.0], [1.0]])
        with pytest.raises(StructuralError):
            propagate(adj, e0, 0, include_input=False)


class TestPropagateGrad:
    def test_zero_layers(self):
        adj = single_edge_adjacency()
        dz = np.random.default_rng(0).standard_normal((2, 3))
        assert np.array_equal(propagate_grad(adj, dz, 0), dz)

    def test_matches_finite_differences_of_probe(self):
        ds = random_bipartite_dataset(4, 4, seed=3)
        rng = np.random.default_rng(4)
        e0 = rng.standard_normal((8, 3))
        w = rng.standard_normal((8, 3))

        def probe(e):
            z, _ = propagate(ds.adjacency, e, 2)
            return float(np.sum(w * z))

        analytic = propagate_grad(ds.adjacency, w, 2)
        fd = fd_gradient(probe, e0, h=1e-6)
        assert rel_err(fd, analytic).max() <= 1e-6

    def test_self_adjoint(self):
        ds = random_bipartite_dataset(4, 4, seed=5)
        dz = np.random.default_rng(6).standard_normal((8, 2))
        via_grad = propagate_grad(ds.adjacency, dz, 2)
        via_forward, _ = propagate(ds.adjacency, dz, 2)
        assert np.array_equal(via_grad, via_forward)


class TestForward:
    def test_lightgcn_has_no_views(self):
        ds = random_bipartite_dataset(seed=0)
        params = small_params("lightgcn")
        e0 = EmbeddingTable.init_uniform(8, 4, 0).matrix
        fwd = forward(params, e0, ds.adjacency, ds.n_users)
        assert fwd.z_view1 is None and fwd.z_view2 is None

    def test_sgl_zero_dropout_views_equal_clean(self):
        ds = random_bipartite_dataset(seed=1)
        params = small_params("sgl", dropout=0.0)
        e0 = EmbeddingTable.init_uniform(8, 4, 1).matrix
        views = sample_epoch_views(params, ds.raw_bipartite, np.random.default_rng(2))
        fwd = forward(params, e0, ds.adjacency, ds.n_users, views)
        assert np.array_equal(fwd.z_view1, fwd.z)
        assert np.array_equal(fwd.z_view2, fwd.z)

    def test_simgcl_noise_limit(self):
        ds = random_bipartite_dataset(seed=2)
        params = small_params("simgcl", noise=1e-9)
        e0 = EmbeddingTable.init_uniform(8, 4, 2).matrix
        views = sample_epoch_views(params, None, np.random.default_rng(3))
        fwd = forward(params, e0, ds.adjacency, ds.n_users, views)
        assert np.abs(fwd.z_view1 - fwd.z).max() <= 1e-8
        assert np.abs(fwd.z_view2 - fwd.z).max() <= 1e-8
        assert not np.array_equal(fwd.z_view1, fwd.z_view2)

    def test_contrastive_models_require_views(self):
        ds = random_bipartite_dataset(seed=3)
        e0 = EmbeddingTable.init_uniform(8, 4, 3).matrix
        with pytest.raises(StructuralError):
            forward(small_params("sgl"), e0, ds.adjacency, ds.n_users)
        with pytest.raises(StructuralError):
            forward(small_params("simgcl"), e0, ds.adjacency, ds.n_users)


class TestCalLoss:
    def test_zero_ssl_weight_reduces_to_lightgcn(self):
        ds = random_bipartite_dataset(seed=4)
        e0 = EmbeddingTable.init_uniform(8, 4, 4).matrix
        batch = random_batch(ds, 5, seed=4)
        base = forward(small_params("lightgcn"), e0, ds.adjacency, ds.n_users)
        loss_ref, grad_ref = cal_loss(small_params("lightgcn"), base, batch)
        for name in ("sgl", "simgcl"):
            params = small_params(name, ssl_weight=0.0)
            views = sample_epoch_views(
                params, ds.raw_bipartite if name == "sgl" else None,
                np.random.default_rng(5),
            )
            fwd = forward(params, e0, ds.adjacency, ds.n_users, views)
            loss, grad = cal_loss(params, fwd, batch)
            assert loss.total == loss_ref.total
            assert np.array_equal(grad, grad_ref)

    @pytest.mark.parametrize("name", ["lightgcn", "sgl", "simgcl", "directau"])
    def test_gradient_matches_finite_differences(self, name):
        # the acceptance suite sweeps 10 seeds; one seed per model here
        worst = model_fd_check(small_params(name), seed=11)
        assert worst <= 1e-4

    def test_directau_degenerate_geometry(self):
        ds = random_bipartite_dataset(seed=6)
        params = small_params("directau", layers=0, reg=0.01)
        e0 = np.tile([[0.5, 0.5, 0.5, 0.5]], (8, 1))
        fwd = forward(params, e0, ds.adjacency, ds.n_users)
        batch = Batch(np.array([0, 1, 2]), np.array([0, 1, 2]), None)
        loss, _ = cal_loss(params, fwd, batch)
        assert abs(loss.components["rec"]) <= 1e-12
        assert abs(loss.components["ssl"]) <= 1e-12
        touched = 6  # 3 users + 3 items, all with identical rows
        expected_reg = 0.5 * params.reg * touched * np.sum(e0[0] ** 2)
        assert loss.components["reg"] == pytest.approx(expected_reg, rel=1e-12)

    def test_bpr_models_require_negatives(self):
        ds = random_bipartite_dataset(seed=7)
        params = small_params("lightgcn")
        e0 = EmbeddingTable.init_uniform(8, 4, 7).matrix
        fwd = forward(params, e0, ds.adjacency, ds.n_users)
        with pytest.raises(StructuralError):
            cal_loss(params, fwd, Batch(np.array([0]), np.array([0]), None))


class TestFullPredict:
    def _fwd(self, z, n_users):
        ds = random_bipartite_dataset(n_users, z.shape[0] - n_users, seed=8)
        params = small_params("lightgcn", layers=0, dim=z.shape[1])
        return forward(params, z, ds.adjacency, n_users)

    def test_unit_and_orthogonal(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        fwd = self._fwd(z, 2)
        scores = full_predict(fwd, [0, 1])
        assert scores[0, 0] == 1.0 and scores[1, 1] == 1.0
        assert scores[0, 1] == 0.0 and scores[1, 0] == 0.0

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(9)
        z = rng.standard_normal((7, 4))
        fwd = self._fwd(z, 3)
        scores = full_predict(fwd, [0, 1, 2])
        for u in range(3):
            for i in range(4):
                assert abs(scores[u, i] - float(np.dot(z[u], z[3 + i]))) <= 1e-12

    def test_locality(self):
        rng = np.random.default_rng(10)
        z = rng.standard_normal((6, 3))
        fwd = self._fwd(z, 2)
        row = full_predict(fwd, [0])
        z2 = z.copy()
        z2[1] += 100.0  # another user's embedding
        fwd2 = self._fwd(z2, 2)
        assert np.array_equal(full_predict(fwd2, [0]), row)

    def test_out_of_range_user(self):
        z = np.ones((4, 2))
        fwd = self._fwd(z, 2)
        with pytest.raises(StructuralError):
            full_predict(fwd, [2])


class TestCheckpoint:
    def test_round_trip_and_header(self, tmp_path):
        rng = np.random.default_rng(11)
        e0 = rng.standard_normal((5, 3))
        meta = {"model": "lightgcn", "layers": 2, "dim": 3,
                "n_users": 2, "n_items": 3, "seed": 7, "epoch": 42}
        save_checkpoint(tmp_path / "ck", e0, meta)
        blob = (tmp_path / "ck" / "e0.bin").read_bytes()
        assert blob[:8] == CHECKPOINT_MAGIC
        assert int.from_bytes(blob[8:12], "little") == 5
        assert int.from_bytes(blob[12:16], "little") == 3
        assert len(blob) == 16 + 5 * 3 * 4
        loaded, meta_back = load_checkpoint(tmp_path / "ck")
        assert np.array_equal(loaded, e0.astype(np.float32).astype(np.float64))
        assert meta_back["model"] == "lightgcn"
        assert meta_back["epoch"] == "42"

    def test_bad_magic_rejected(self, tmp_path):
        save_checkpoint(tmp_path / "ck", np.ones((2, 2)), {"model": "lightgcn"})
        path = tmp_path / "ck" / "e0.bin"
        payload = path.read_bytes()
        path.write_bytes(b"NOTMAGIC" + payload[8:])
        with pytest.raises(StructuralError, match="magic"):
            load_checkpoint(tmp_path / "ck")
