import hashlib
import math

import numpy as np
import pytest

import sonogen.autodiff as ad
from sonogen.errors import ConfigError, LabelError, LengthError, ShapeError
from sonogen.model import (
    END_ID,
    ModelConfig,
    ReportModel,
    START_ID,
    desk_config,
    export_attention,
    full_config,
    write_attention_csv,
)


@pytest.fixture(scope="module")
def small_model():
    return ReportModel(desk_config(vocab_size=40, k_topics=4), seed=11)


@pytest.fixture(scope="module")
def image_batch():
    rng = np.random.default_rng(0)
    return rng.uniform(0.0, 1.0, size=(3, 2, 32, 32)).astype(np.float32)


class TestConfig:
    def test_desk_preset_values(self):
        cfg = desk_config(vocab_size=100, k_topics=5)
        assert (cfg.d_model, cfg.n_heads) == (64, 4)
        assert (cfg.n_layers_enc, cfg.n_layers_dec) == (2, 2)
        assert cfg.max_len == 40
        assert cfg.image_size == 32
        assert cfg.patches_per_image == 16
        assert cfg.d_visual == 32

    def test_full_preset_values(self):
        cfg = full_config(vocab_size=700, k_topics=18)
        assert (cfg.d_model, cfg.n_heads) == (512, 8)
        assert (cfg.n_layers_enc, cfg.n_layers_dec) == (3, 3)
        assert cfg.max_len == 150
        assert cfg.feature_side == 7
        assert cfg.d_visual == 2048
        assert 2 * cfg.d_visual == 4096

    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=50, k_topics=2, d_model=30, n_heads=4)


class TestVisualPathway:
    def test_shapes(self, small_model, image_batch):
        vis = small_model.encode_images(image_batch)
        assert vis.patch_seq.shape == (3, 32, 64)
        assert vis.pooled_pair.shape == (3, 64)
        assert vis.kmve_logits_input is vis.pooled_pair

    def test_identical_views_share_pooled_halves(self, small_model):
        rng = np.random.default_rng(1)
        view = rng.uniform(0, 1, size=(32, 32)).astype(np.float32)
        vis = small_model.encode_images(np.stack([view, view])[None])
        half = small_model.config.d_visual
        assert np.array_equal(vis.pooled_pair.data[0, :half], vis.pooled_pair.data[0, half:])

    def test_weight_sharing_survives_updates(self, image_batch):
        model = ReportModel(desk_config(vocab_size=40, k_topics=4), seed=3)
        vis = model.encode_images(image_batch)
        loss = model.kmve_loss(vis.pooled_pair, [0, 1, 2])
        ad.backward(loss)
        for name, tensor in model.params.items():
            if tensor.grad is not None:
                tensor.data -= 0.05 * tensor.grad
        rng = np.random.default_rng(2)
        view = rng.uniform(0, 1, size=(32, 32)).astype(np.float32)
        vis2 = model.encode_images(np.stack([view, view])[None])
        half = model.config.d_visual
        assert np.array_equal(vis2.pooled_pair.data[0, :half], vis2.pooled_pair.data[0, half:])

    def test_shape_validation(self, small_model):
        with pytest.raises(ShapeError):
            small_model.encode_images(np.zeros((2, 3, 32, 32), dtype=np.float32))
        with pytest.raises(ShapeError):
            small_model.encode_images(np.zeros((2, 2, 16, 16), dtype=np.float32))


class TestKmveLoss:
    def test_uniform_logits_give_log_k(self):
        logits = ad.Tensor(np.zeros((1, 2), dtype=np.float32), requires_grad=True)
        loss = ad.cross_entropy(logits, np.array([0]))
        assert abs(float(loss.data) - math.log(2)) < 1e-6

    def test_saturated_correct_class(self):
        logits = ad.Tensor(np.array([[20.0, -20.0]], dtype=np.float32))
        loss = ad.cross_entropy(logits, np.array([0]))
        assert float(loss.data) < 1e-8

    def test_projection_gradient_matches_finite_differences(self, image_batch):
        model = ReportModel(desk_config(vocab_size=40, k_topics=4), seed=5)
        vis = model.encode_images(image_batch[:2])
        pooled = vis.pooled_pair.data.copy()
        weight_shape = model.kmve_head.w.data.shape

        def f(w):
            logits = ad.add(ad.matmul(ad.Tensor(pooled), w), model.kmve_head.b)
            return ad.cross_entropy(logits, np.array([0, 2]))

        err = ad.finite_diff_check(
            f, model.kmve_head.w.data.copy(), eps=1e-3,
            coords=range(0, weight_shape[0] * weight_shape[1], 7),
        )
        assert err < 1e-4

    def test_label_range(self, small_model, image_batch):
        vis = small_model.encode_images(image_batch)
        with pytest.raises(LabelError):
            small_model.kmve_loss(vis.pooled_pair, [0, 1, 4])


class TestTransformer:
    def test_encoder_preserves_shape(self, small_model, image_batch):
        vis = small_model.encode_images(image_batch)
        memory = small_model.encode_memory(vis)
        assert memory.shape == vis.patch_seq.shape

    def test_attention_rows_sum_to_one(self, small_model, image_batch):
        vis = small_model.encode_images(image_batch)
        memory = small_model.encode_memory(vis)
        _, cross = small_model.decode(memory, np.array([[START_ID, 5, 6, 7]]* 3))
        for weights in cross:
            assert np.allclose(weights.data.sum(axis=-1), 1.0, atol=1e-5)

    def test_patch_permutation_equivariance(self, small_model, image_batch):
        vis = small_model.encode_images(image_batch[:1])
        memory = small_model.encode_memory(vis)
        perm = np.random.default_rng(3).permutation(vis.patch_seq.shape[1])
        permuted = ad.Tensor(vis.patch_seq.data[:, perm, :])
        memory_perm = small_model.encode_memory(
            type(vis)(patch_seq=permuted, pooled_pair=vis.pooled_pair)
        )
        assert np.allclose(memory_perm.data, memory.data[:, perm, :], atol=1e-5)

    def test_causality(self, small_model, image_batch):
        vis = small_model.encode_images(image_batch[:1])
        memory = small_model.encode_memory(vis)
        ids = np.array([[START_ID, 5, 6, 7, 8]])
        logits_a, _ = small_model.decode(memory, ids)
        altered = ids.copy()
        altered[0, 3] = 9  # change token at position 3
        logits_b, _ = small_model.decode(memory, altered)
        assert np.array_equal(logits_a.data[:, :3, :], logits_b.data[:, :3, :])
        assert not np.allclose(logits_a.data[:, 3:, :], logits_b.data[:, 3:, :])

    def test_teacher_forced_equals_incremental(self, small_model, image_batch):
        from sonogen.model import _IncrementalDecoder

        vis = small_model.encode_images(image_batch)
        memory = small_model.encode_memory(vis)
        ids = np.array([[START_ID, 4, 9, 12], [START_ID, 6, 2, 0], [START_ID, 7, 7, 7]])
        full, _ = small_model.decode(memory, ids)
        stepper = _IncrementalDecoder(small_model, memory.data)
        stepwise = np.stack([stepper.step(ids[:, t]) for t in range(ids.shape[1])], axis=1)
        assert np.max(np.abs(full.data - stepwise)) < 1e-5

    def test_single_prefix_logits_shape(self, small_model, image_batch):
        vis = small_model.encode_images(image_batch[:1])
        memory = small_model.encode_memory(vis)
        logits, _ = small_model.decode(memory, np.array([[START_ID]]))
        assert logits.shape == (1, 1, 40)

    def test_zeroed_output_projection_uniform(self, image_batch):
        model = ReportModel(desk_config(vocab_size=40, k_topics=4), seed=7)
        model.out_proj.w.data[:] = 0.0
        model.out_proj.b.data[:] = 0.0
        vis = model.encode_images(image_batch[:1])
        memory = model.encode_memory(vis)
        ids = np.array([[START_ID, 5, 6]])
        logits, _ = model.decode(memory, ids)
        probs = ad.softmax(logits, axis=-1).data
        assert np.allclose(probs, 1.0 / 40, atol=1e-7)
        loss = model.tf_loss(logits, np.array([[5, 6, END_ID]]))
        assert abs(float(loss.data) - math.log(40)) < 1e-5

    def test_prefix_length_cap(self, small_model, image_batch):
        vis = small_model.encode_images(image_batch[:1])
        memory = small_model.encode_memory(vis)
        with pytest.raises(LengthError):
            small_model.decode(memory, np.zeros((1, 41), dtype=np.int64))

    def test_pooled_memory_mode(self, image_batch):
        cfg = desk_config(vocab_size=40, k_topics=4, memory_mode="pooled")
        model = ReportModel(cfg, seed=9)
        vis = model.encode_images(image_batch)
        memory = model.encode_memory(vis)
        assert memory.shape == (3, 1, 64)
        outputs = model.generate(image_batch)
        assert len(outputs) == 3


class TestGeneration:
    def test_length_cap_and_sentinels(self, small_model, image_batch):
        outputs = small_model.generate(image_batch)
        for out in outputs:
            assert len(out.token_ids) <= small_model.config.max_len
            assert out.token_ids[0] == START_ID

    def test_beam_one_equals_greedy(self, small_model, image_batch):
        greedy = small_model.generate(image_batch)
        beam = small_model.generate(image_batch, mode="beam", beam_width=1)
        assert [g.token_ids for g in greedy] == [b.token_ids for b in beam]

    def test_beam_width_validation(self, small_model, image_batch):
        with pytest.raises(ConfigError):
            small_model.generate(image_batch, mode="beam", beam_width=0)

    def test_determinism(self, small_model, image_batch):
        a = small_model.generate(image_batch)
        b = small_model.generate(image_batch)
        assert [x.token_ids for x in a] == [x.token_ids for x in b]
        assert all(np.array_equal(x.attention, y.attention) for x, y in zip(a, b))

    def test_attention_table_dims_and_rows(self, small_model, image_batch):
        out = small_model.generate(image_batch[:1])[0]
        table = out.attention_table()
        assert table.shape == (len(out.token_ids) - 1, 2 * small_model.config.patches_per_image)
        assert np.allclose(table.sum(axis=1), 1.0, atol=1e-5)

    def test_export_attention_csv(self, small_model, image_batch, tmp_path):
        out = small_model.generate(image_batch[:1])[0]
        vocab_tokens = [f"t{i}" for i in range(40)]
        labels, table = export_attention(out, vocab_tokens)
        assert len(labels) == table.shape[0]
        path = tmp_path / "attn.csv"
        write_attention_csv(path, out, vocab_tokens)
        lines = path.read_text().splitlines()
        assert len(lines) == table.shape[0] + 1
        assert lines[0].startswith("token,patch0,")


class TestCheckpoints:
    def test_round_trip_bytes_and_logits(self, small_model, image_batch, tmp_path):
        vocab_tokens = [f"t{i}" for i in range(40)]
        first = tmp_path / "a.ckpt"
        second = tmp_path / "b.ckpt"
        small_model.save(first, vocab_tokens)
        loaded, tokens = ReportModel.load(first)
        assert tokens == vocab_tokens
        loaded.save(second, tokens)
        assert (
            hashlib.sha256(first.read_bytes()).hexdigest()
            == hashlib.sha256(second.read_bytes()).hexdigest()
        )
        vis = small_model.encode_images(image_batch)
        memory = small_model.encode_memory(vis)
        ids = np.array([[START_ID, 3, 4]] * 3)
        original, _ = small_model.decode(memory, ids)
        vis2 = loaded.encode_images(image_batch)
        memory2 = loaded.encode_memory(vis2)
        reloaded, _ = loaded.decode(memory2, ids)
        assert original.data.tobytes() == reloaded.data.tobytes()

    def test_reject_non_checkpoint(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOPE")
        with pytest.raises(ConfigError):
            ReportModel.load(path)


def test_seeded_init_is_bit_identical():
    a = ReportModel(desk_config(vocab_size=30, k_topics=3), seed=21)
    b = ReportModel(desk_config(vocab_size=30, k_topics=3), seed=21)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
