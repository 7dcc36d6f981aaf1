import math
import time

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from modimg.model import (
    Block,
    EncoderConfig,
    FusionModel,
    TaskSpec,
    TextConfig,
    TrainConfig,
    TrainingDiverged,
    VisionEncoder,
    attention,
    gradient_check,
    load_checkpoint,
    loss_fn,
    params_hash,
    predict,
    save_checkpoint,
    train,
    transfer_encoder,
    whiten_features,
    window_partition,
    window_unpartition,
)
from modimg.textmeta import PAD_ID

TINY = EncoderConfig(
    image_size=32, patch_size=16, embed_dim=16, n_layers=1, n_heads=2, mlp_ratio=2.0, feature_dim=8
)


def tiny_batch(n=4, seed=0, modalities=("clinical",), config=TINY):
    g = torch.Generator().manual_seed(seed)
    batch = {
        m: torch.randn(n, 3, config.image_size, config.image_size, generator=g)
        for m in modalities
    }
    labels = torch.randint(0, 2, (n,), generator=g).float()
    return batch, labels


class TestAttention:
    def test_rows_sum_to_one(self):
        q = torch.randn(2, 3, 5, 4)
        out, weights = attention(q, q, q)
        assert torch.allclose(weights.sum(dim=-1), torch.ones(2, 3, 5, 5).sum(dim=-1) / 5)
        assert out.shape == (2, 3, 5, 4)

    @given(st.integers(min_value=0, max_value=10_000))
    def test_rows_sum_to_one_property(self, seed):
        g = torch.Generator().manual_seed(seed)
        t = int(torch.randint(1, 9, (1,), generator=g))
        d = int(torch.randint(1, 9, (1,), generator=g))
        q = torch.randn(1, 2, t, d, generator=g) * 10
        k = torch.randn(1, 2, t, d, generator=g) * 10
        v = torch.randn(1, 2, t, d, generator=g)
        _, weights = attention(q, k, v)
        assert (weights.sum(dim=-1) - 1.0).abs().max() <= 1e-6

    def test_masked_columns_get_zero_weight(self):
        q = torch.randn(1, 1, 4, 8)
        mask = torch.tensor([True, True, False, True])[None, None, None, :]
        _, weights = attention(q, q, q, mask)
        assert (weights[..., 2] == 0).all()
        assert (weights.sum(dim=-1) - 1.0).abs().max() <= 1e-6

    def test_large_logits_stable(self):
        q = torch.full((1, 1, 3, 4), 1e4)
        _, weights = attention(q, q, q)
        assert torch.isfinite(weights).all()


class TestWindows:
    def test_partition_round_trip(self):
        grid = torch.arange(2 * 6 * 6 * 3, dtype=torch.float32).reshape(2, 6, 6, 3)
        windows = window_partition(grid, 3)
        assert windows.shape == (2, 4, 9, 3)
        back = window_unpartition(windows, 3, 6)
        assert torch.equal(back, grid)

    def test_window_contents_row_major(self):
        grid = torch.arange(16, dtype=torch.float32).reshape(1, 4, 4, 1)
        windows = window_partition(grid, 2)
        # [DERIVED] first window = top-left 2x2 block: 0, 1, 4, 5
        assert windows[0, 0, :, 0].tolist() == [0.0, 1.0, 4.0, 5.0]


class TestVisionEncoder:
    def test_patch_embed_layout(self):
        enc = VisionEncoder(TINY)
        x = torch.randn(2, 3, 32, 32)
        tokens = enc.patch_embed(x)
        assert tokens.shape == (2, 1 + 4, 16)

    def test_patch_flatten_matches_manual_pixel_order(self):
        enc = VisionEncoder(TINY)
        with torch.no_grad():
            enc.patch_proj.weight.zero_()
            enc.patch_proj.weight[0, 0] = 1.0  # pick out flat element 0
            enc.patch_proj.bias.zero_()
            enc.pos_embed.zero_()
        x = torch.randn(1, 3, 32, 32)
        with torch.no_grad():
            tokens = enc.patch_embed(x)
        # flat element 0 of patch (row 0, col 1) is pixel (0, 16) channel 0
        assert float(tokens[0, 2, 0]) == pytest.approx(float(x[0, 0, 0, 16]), abs=1e-6)

    def test_forward_and_attention_stack(self):
        enc = VisionEncoder(TINY)
        x = torch.randn(2, 3, 32, 32)
        feat, stack = enc(x, record_attention=True)
        assert feat.shape == (2, 8)
        assert len(stack) == 1
        assert stack[0].shape == (2, 2, 5, 5)  # (B, heads, T, T)
        assert (stack[0].sum(dim=-1) - 1.0).abs().max() <= 1e-6

    def test_windowed_encoder_runs_and_cls_attends_globally(self):
        cfg = EncoderConfig(
            image_size=64, patch_size=16, embed_dim=16, n_layers=2, n_heads=2,
            window_size=2, mlp_ratio=2.0, feature_dim=8,
        )
        enc = VisionEncoder(cfg)
        x = torch.randn(2, 3, 64, 64)
        feat, stack = enc(x, record_attention=True)
        assert feat.shape == (2, 8)
        # windowed blocks record the global CLS row: (B, heads, 1, T)
        assert stack[0].shape == (2, 2, 1, 17)
        assert (stack[0].sum(dim=-1) - 1.0).abs().max() <= 1e-6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(image_size=30, patch_size=16)
        with pytest.raises(ValueError):
            EncoderConfig(embed_dim=15, n_heads=2)
        with pytest.raises(ValueError):
            EncoderConfig(image_size=96, patch_size=16, window_size=4)  # 6 % 4 != 0


class TestFusionModel:
    def test_feature_order_is_fixed(self):
        # same weights, same inputs: modalities given in any order produce
        # identical logits because fusion always uses the canonical order
        torch.manual_seed(0)
        m1 = FusionModel(("meds", "clinical"), TINY, TaskSpec())
        torch.manual_seed(0)
        m2 = FusionModel(("clinical", "meds"), TINY, TaskSpec())
        batch, _ = tiny_batch(modalities=("clinical", "meds"))
        assert torch.equal(m1(batch), m2(batch))

    def test_text_fusion(self):
        text_cfg = TextConfig(vocab_size=300, context_length=16, embed_dim=16, n_layers=1, n_heads=2, feature_dim=8)
        model = FusionModel(("clinical",), TINY, TaskSpec(), text_config=text_cfg)
        batch, _ = tiny_batch()
        batch["text"] = torch.randint(0, 259, (4, 16))
        logits = model(batch)
        assert logits.shape == (4, 1)

    def test_pad_tokens_do_not_change_features(self):
        text_cfg = TextConfig(vocab_size=300, context_length=8, embed_dim=16, n_layers=1, n_heads=2, feature_dim=8)
        model = FusionModel((), TINY, TaskSpec(), text_config=text_cfg)
        model.eval()
        ids = torch.tensor([[257, 65, 66, PAD_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]])
        with torch.no_grad():
            base = model({"text": ids})
            # swap embedding content of pad positions by changing one pad to
            # another pad id is impossible; instead verify attention ignores
            # pads: perturbing the pad token embedding must not move logits
            model.text_encoder.token_embed.weight[PAD_ID] += 100.0
            moved = model({"text": ids})
        # CLS still sees pad rows through residual stream only if attended;
        # masked attention means the pad embedding never mixes in
        assert torch.allclose(base, moved)

    def test_phenotyping_head_width(self):
        model = FusionModel(("clinical",), TINY, TaskSpec("phenotyping", 25))
        batch, _ = tiny_batch()
        assert model(batch).shape == (4, 25)

    def test_rejects_unknown_modality(self):
        with pytest.raises(ValueError):
            FusionModel(("sonogram",), TINY, TaskSpec())


class TestLoss:
    def test_matches_manual_bce(self):
        logits = torch.tensor([0.0, 2.0, -1.0])
        labels = torch.tensor([1.0, 0.0, 1.0])
        expected = -(
            math.log(0.5)
            + math.log(1 - 1 / (1 + math.exp(-2.0)))
            + math.log(1 / (1 + math.exp(1.0)))
        ) / 3
        assert loss_fn(logits, labels).item() == pytest.approx(expected, abs=1e-6)

    def test_extreme_logits_finite(self):
        logits = torch.tensor([1e4, -1e4])
        labels = torch.tensor([0.0, 1.0])
        assert torch.isfinite(loss_fn(logits, labels))


class TestTrain:
    def test_seeded_determinism(self):
        batch, labels = tiny_batch(n=8)
        results = []
        for _ in range(2):
            torch.manual_seed(1)
            model = FusionModel(("clinical",), TINY, TaskSpec())
            train(model, batch, labels, TrainConfig(epochs=2, learning_rates=(1e-3, 5e-4), batch_size=4, seed=7))
            results.append(params_hash(model))
        assert results[0] == results[1]

    def test_history_and_lr_schedule(self):
        batch, labels = tiny_batch(n=8)
        model = FusionModel(("clinical",), TINY, TaskSpec())
        history = train(
            model, batch, labels,
            TrainConfig(epochs=3, learning_rates=(1e-3, 5e-4, 1e-4), batch_size=4),
        )
        assert [h["lr"] for h in history] == [1e-3, 5e-4, 1e-4]
        assert all("train_loss" in h for h in history)

    def test_best_val_checkpoint_restored(self):
        batch, labels = tiny_batch(n=16, seed=3)
        val_batch, val_labels = tiny_batch(n=8, seed=4)
        model = FusionModel(("clinical",), TINY, TaskSpec())
        snapshots = []

        history = train(
            model, batch, labels,
            TrainConfig(epochs=3, learning_rates=(3e-3,), batch_size=8),
            val_batch=val_batch, val_labels=val_labels,
        )
        vals = [h["val_auroc"] for h in history]
        # the restored model must reproduce the best epoch's val AUROC
        from modimg.metrics import auroc
        scores = predict(model, val_batch).numpy()
        assert auroc(scores, val_labels.numpy()) == pytest.approx(max(vals), abs=1e-12)

    def test_divergence_raises(self):
        batch, labels = tiny_batch(n=4)
        model = FusionModel(("clinical",), TINY, TaskSpec())
        with torch.no_grad():
            model.head.weight.fill_(float("nan"))
        with pytest.raises(TrainingDiverged):
            train(model, batch, labels, TrainConfig(epochs=1, learning_rates=(1e-3,)))

    def test_predict_chunking_consistent(self):
        batch, labels = tiny_batch(n=10)
        model = FusionModel(("clinical",), TINY, TaskSpec())
        a = predict(model, batch, chunk=3)
        b = predict(model, batch, chunk=64)
        assert torch.allclose(a, b, atol=1e-7)
        assert ((a >= 0) & (a <= 1)).all()


class TestGradientCheck:
    def test_analytic_matches_finite_differences(self):
        # <50k params, 64-bit, every parameter checked, under 2 minutes
        torch.manual_seed(0)
        cfg = EncoderConfig(
            image_size=16, patch_size=16, embed_dim=8, n_layers=1, n_heads=2,
            mlp_ratio=1.0, feature_dim=4,
        )
        model = FusionModel(("clinical",), cfg, TaskSpec())
        assert model.parameter_count() < 50_000
        g = torch.Generator().manual_seed(5)
        batch = {"clinical": torch.randn(2, 3, 16, 16, generator=g)}
        labels = torch.randint(0, 2, (2,), generator=g).float()
        start = time.monotonic()
        max_rel = gradient_check(model, batch, labels)
        elapsed = time.monotonic() - start
        assert max_rel <= 1e-4
        assert elapsed < 120.0

    def test_windowed_variant_also_passes(self):
        torch.manual_seed(1)
        cfg = EncoderConfig(
            image_size=32, patch_size=16, embed_dim=8, n_layers=2, n_heads=2,
            mlp_ratio=1.0, feature_dim=4, window_size=1,
        )
        model = FusionModel(("clinical",), cfg, TaskSpec())
        assert model.parameter_count() < 50_000
        g = torch.Generator().manual_seed(6)
        batch = {"clinical": torch.randn(2, 3, 32, 32, generator=g)}
        labels = torch.tensor([1.0, 0.0])
        assert gradient_check(model, batch, labels) <= 1e-4


def test_checkpoint_round_trip(tmp_path):
    model = FusionModel(("clinical", "meds"), TINY, TaskSpec())
    batch, _ = tiny_batch(modalities=("clinical", "meds"))
    path = tmp_path / "model.pt"
    save_checkpoint(path, model, [{"epoch": 0}])
    loaded, history = load_checkpoint(path)
    assert history == [{"epoch": 0}]
    assert params_hash(loaded) == params_hash(model)
    assert torch.equal(loaded(batch), model(batch))


class TestEncoderTransfer:
    # [DERIVED] transfer_encoder copies weights exactly; whiten_features makes
    # the train-split features zero-mean unit-std by construction.
    def test_transfer_copies_encoder_weights(self):
        torch.manual_seed(0)
        src = FusionModel(("clinical",), TINY, TaskSpec())
        dst = FusionModel(("clinical", "meds"), TINY, TaskSpec())
        transfer_encoder(dst, src, "clinical")
        batch, _ = tiny_batch()
        assert torch.equal(dst.encoders["clinical"](batch["clinical"]),
                           src.encoders["clinical"](batch["clinical"]))

    def test_transfer_rejects_missing_modality_and_config_mismatch(self):
        src = FusionModel(("clinical",), TINY, TaskSpec())
        dst = FusionModel(("meds",), TINY, TaskSpec())
        with pytest.raises(ValueError):
            transfer_encoder(dst, src, "clinical")
        other = EncoderConfig(image_size=32, patch_size=16, embed_dim=8,
                              n_layers=1, n_heads=2, mlp_ratio=2.0, feature_dim=8)
        dst2 = FusionModel(("clinical",), other, TaskSpec())
        with pytest.raises(ValueError):
            transfer_encoder(dst2, src, "clinical")

    def test_whiten_standardizes_train_features(self):
        torch.manual_seed(1)
        model = FusionModel(("clinical",), TINY, TaskSpec())
        batch, _ = tiny_batch(n=16, seed=3)
        whiten_features(model, batch, "clinical")
        with torch.no_grad():
            feats = model.encoders["clinical"](batch["clinical"])
        assert feats.mean(dim=0).abs().max().item() < 1e-4
        assert (feats.std(dim=0) - 1).abs().max().item() < 1e-2
