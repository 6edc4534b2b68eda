import json

import numpy as np
import pytest

from treeprompt.training import (
    EmptySplit,
    FrozenViolation,
    RunConfig,
    convergence_csv,
    evaluate,
    evaluate_predictor,
    gradient_fidelity_check,
    load_side,
    log_convergence,
    parse_convergence_csv,
    save_run,
    smooth,
    tune,
)


def quick_config(**overrides):
    base = dict(seed=11, lr_tree=2e-3, epochs_tree=2, d_p=32, d_w=16, prompt_len=8)
    base.update(overrides)
    return RunConfig(**base)


class TestTune:
    def test_lr_zero_keeps_initial_accuracy(self, tiny_dataset, frozen_backbone):
        backbone, word = frozen_backbone
        cfg = quick_config(lr_tree=0.0, epochs_tree=1)
        report, side = tune(cfg, tiny_dataset, backbone, word)
        # parameters unchanged => accuracy equals the untouched-model accuracy
        fresh = evaluate(backbone, side, tiny_dataset["tune_test_compositional"])
        assert report.test_accuracy["tune_test_compositional"] == fresh
        assert report.val_accuracy[0] == report.val_accuracy[-1]

    def test_continuous_baseline_tunes_g_only(self, tiny_dataset, frozen_backbone):
        backbone, word = frozen_backbone
        cfg = quick_config(tree_enabled=False, modules_enabled=False, epochs_tree=1)
        report, side = tune(cfg, tiny_dataset, backbone, word)
        assert set(side.parameters()) == {"global_prompt"}
        assert report.grads_received == ["global_prompt"]
        # the shared word table must stay exactly as pretrained
        np.testing.assert_array_equal(side.word_table().data, word)

    def test_tree_mode_declared_set_receives_gradients(self, tiny_dataset, frozen_backbone):
        backbone, word = frozen_backbone
        cfg = quick_config(epochs_tree=1)
        report, side = tune(cfg, tiny_dataset, backbone, word)
        declared = set(side.parameters())
        received = set(report.grads_received)
        assert received <= declared
        assert received == declared  # every declared tensor saw gradient flow
        assert any(name.startswith("modules.leaf") for name in received)
        assert any(name.startswith("fusion.") for name in received)

    def test_unfrozen_backbone_rejected(self, tiny_dataset, tiny_vocab, small_backbone_config, frozen_backbone):
        import numpy as np

        from treeprompt.backbone import ToyBackbone

        _, word = frozen_backbone
        loose = ToyBackbone(small_backbone_config, tiny_vocab, np.random.default_rng(0))
        with pytest.raises(FrozenViolation):
            tune(quick_config(), tiny_dataset, loose, word)

    def test_empty_train_split_rejected(self, tiny_dataset, frozen_backbone):
        backbone, word = frozen_backbone
        from treeprompt.world import Dataset

        empty = Dataset(splits={**tiny_dataset.splits, "tune_train": []})
        with pytest.raises(EmptySplit):
            tune(quick_config(), empty, backbone, word)

    def test_full_run_beats_no_prompt_floor(self, tiny_dataset, frozen_backbone):
        from treeprompt.backbone import top1_accuracy
        from treeprompt.autodiff import Tensor

        backbone, word = frozen_backbone
        floor = top1_accuracy(backbone, Tensor(word), tiny_dataset["tune_test_compositional"])
        cfg = quick_config(epochs_tree=4)
        report, _ = tune(cfg, tiny_dataset, backbone, word)
        assert report.test_accuracy["tune_test_compositional"] > floor

    def test_seeded_reproducibility(self, tiny_dataset, frozen_backbone):
        backbone, word = frozen_backbone
        cfg = quick_config(epochs_tree=1)
        r1, _ = tune(cfg, tiny_dataset, backbone, word)
        r2, _ = tune(cfg, tiny_dataset, backbone, word)
        assert r1.losses == r2.losses
        assert r1.test_accuracy == r2.test_accuracy


class TestMultiLayerMode:
    def test_global_pretune_then_frozen_stack(self, tiny_dataset, frozen_backbone):
        backbone, word = frozen_backbone
        pre_cfg = quick_config(
            prompt_mode="multi", tree_enabled=False, modules_enabled=False,
            epochs_global=1, batch_global=16, seed=21,
        )
        pre_report, pre_side = tune(pre_cfg, tiny_dataset, backbone, word)
        assert set(pre_side.parameters()) == {"global_multi"}
        stack = pre_side.global_multi.data
        assert stack.shape == (backbone.config.layers, 8, 32)

        tree_cfg = quick_config(prompt_mode="multi", epochs_tree=1, seed=22)
        report, side = tune(tree_cfg, tiny_dataset, backbone, word, global_stack=stack)
        assert side.frozen_global is not None
        assert not side.frozen_global.requires_grad
        assert "global_multi_frozen" not in report.grads_received
        assert any(name.startswith("expand.") for name in report.grads_received)
        np.testing.assert_array_equal(side.frozen_global.data, stack)

    def test_multi_tree_requires_global_stack(self, tiny_dataset, frozen_backbone):
        backbone, word = frozen_backbone
        with pytest.raises(ValueError):
            tune(quick_config(prompt_mode="multi"), tiny_dataset, backbone, word)


class TestEvaluate:
    def test_perfect_predictor(self, tiny_dataset):
        acc = evaluate_predictor(lambda ex: ex.gold_box, tiny_dataset["tune_val"])
        assert acc == 1.0

    def test_uniform_random_stub_matches_binomial(self):
        # 12-object scenes, uniform random region picks: expect ~1/12
        from treeprompt.world import SceneObject, SyntheticScene, GroundingExample
        from treeprompt.conllu import DepNode, DepTree

        rng = np.random.default_rng(0)
        tree = DepTree((DepNode(1, "x", "NOUN", "root", 0),), 1, "stub")
        examples = []
        for i in range(400):
            cells = [(r, c) for r in range(6) for c in range(6)]
            rng.shuffle(cells)
            objs = [
                SceneObject("square", "red", "big", cells[j],
                            box=(cells[j][1] * 16 + 2, cells[j][0] * 16 + 2,
                                 cells[j][1] * 16 + 14, cells[j][0] * 16 + 14))
                for j in range(12)
            ]
            examples.append(GroundingExample(f"e{i}", "stub", ["x"], tree,
                                             SyntheticScene(objs), int(rng.integers(12))))
        acc = evaluate_predictor(
            lambda ex: ex.scene.objects[int(rng.integers(12))].box, examples
        )
        p = 1.0 / 12.0
        sigma = np.sqrt(p * (1 - p) / len(examples))
        assert abs(acc - p) <= 3 * sigma

    def test_empty_split(self):
        with pytest.raises(EmptySplit):
            evaluate_predictor(lambda ex: ex.gold_box, [])


class TestRunPersistence:
    def test_save_and_reload_reproduces_accuracy(self, tiny_dataset, frozen_backbone, tmp_path):
        backbone, word = frozen_backbone
        cfg = quick_config(epochs_tree=1)
        report, side = tune(cfg, tiny_dataset, backbone, word)
        save_run(tmp_path / "run", cfg, report, side)
        assert (tmp_path / "run" / "config.json").exists()
        assert (tmp_path / "run" / "report.json").exists()

        reloaded = load_side(tmp_path / "run", backbone)
        acc = evaluate(backbone, reloaded, tiny_dataset["tune_test_compositional"])
        assert acc == report.test_accuracy["tune_test_compositional"]

    def test_report_json_shape(self, tiny_dataset, frozen_backbone, tmp_path):
        backbone, word = frozen_backbone
        cfg = quick_config(epochs_tree=1)
        report, _ = tune(cfg, tiny_dataset, backbone, word)
        blob = json.loads(report.to_json())
        assert blob["seed"] == cfg.seed
        assert blob["config"]["lr_tree"] == cfg.lr_tree
        assert len(blob["losses"]) > 0
        assert "tune_test_compositional" in blob["test_accuracy"]
        assert blob["wall_clock_s"] > 0


class TestConvergenceLog:
    def test_identical_runs_identical_curves(self, tiny_dataset, frozen_backbone):
        backbone, word = frozen_backbone
        cfg = quick_config(epochs_tree=1)
        r1, _ = tune(cfg, tiny_dataset, backbone, word)
        r2, _ = tune(cfg, tiny_dataset, backbone, word)
        stats = log_convergence(r1.losses, r2.losses)
        assert stats["final_a"] == stats["final_b"]
        assert (
            stats["first_step_a_reaches_final_b"]
            == stats["first_step_b_reaches_final_b"]
        )

    def test_length_mismatch_aligns_to_min(self):
        stats = log_convergence([3.0, 2.0, 1.0, 0.5], [3.0, 2.5])
        assert stats["steps"] == 2

    def test_csv_roundtrip(self):
        a = [1.5, 1.2, 0.9]
        b = [1.5, 1.4, 1.3]
        text = convergence_csv(a, b)
        back_a, back_b = parse_convergence_csv(text)
        assert back_a == a
        assert back_b == b

    def test_smooth_window(self):
        assert smooth([2.0, 4.0], window=2) == [2.0, 3.0]


class TestGradientFidelityHarness:
    def test_small_seed_run(self):
        err, per_param = gradient_fidelity_check(0)
        assert err <= 1e-4
        assert "global_prompt" in per_param
