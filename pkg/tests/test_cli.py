import json
import types

import numpy as np
import pytest

from quantart.cli import (
    CKPT_ENV_VAR,
    EXIT_DIVERGED,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    GridSpec,
    _epoch_log,
    main,
)
from quantart.data import decode_image_bytes, save_image, synthetic_textures
from quantart.training import TrainConfig, train_stage1, train_stage2

TINY = dict(steps=3, epochs=1, batch_size=2, image_size=8, num_entries=8,
            latent_dim=4, sga_depth=1, channels=(4, 8), augment=False,
            reseed_interval=0, seed=5, learning_rate=1e-3)


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Dataset dirs plus trained stage-1 and stage-2 checkpoints."""
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    photos = synthetic_textures("photo", 4, 8, rng)
    arts = synthetic_textures("art", 4, 8, rng)
    pdir, adir = root / "photos", root / "arts"
    pdir.mkdir()
    adir.mkdir()
    for i in range(4):
        save_image(photos[i], pdir / f"p{i}.png")
        save_image(arts[i], adir / f"a{i}.png")
    cfg = TrainConfig(**TINY)
    bundle, _ = train_stage1(cfg, photos, arts)
    stage1 = root / "stage1.qart"
    bundle.save(stage1)
    bundle, _ = train_stage2(cfg, bundle, photos, arts)
    stage2 = root / "stage2.qart"
    bundle.save(stage2)
    config = root / "tiny.json"
    config.write_text(json.dumps(cfg.to_dict()))
    return types.SimpleNamespace(
        root=root, photos=pdir, arts=adir, stage1=stage1, stage2=stage2,
        config=config, content=pdir / "p0.png", style=adir / "a0.png")


def run(*argv):
    return main([str(a) for a in argv])


class TestParser:
    def test_no_command_is_usage_error(self, capsys):
        assert run() == EXIT_USAGE
        capsys.readouterr()

    def test_unknown_command_is_usage_error(self, capsys):
        assert run("transmogrify") == EXIT_USAGE
        capsys.readouterr()

    def test_missing_required_flag_is_usage_error(self, capsys):
        assert run("train", "--stage", "1") == EXIT_USAGE
        capsys.readouterr()


class TestGridSpec:
    def test_sorts_and_deduplicates(self):
        spec = GridSpec((1.0, 0.0, 1.0), (0.5, 0.5))
        assert spec.alphas == (0.0, 1.0)
        assert spec.betas == (0.5,)
        assert spec.tile_count == 2

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="non-empty"):
            GridSpec((), (0.5,))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            GridSpec((0.5,), (1.5,))


class TestEpochLog:
    def test_means_per_epoch(self):
        history = [{"g": {"loss": float(v)}} for v in (1, 3, 5, 7)]
        log = _epoch_log(history, 2)
        assert [e["epoch"] for e in log] == [0, 1]
        assert [e["g"]["loss"] for e in log] == [2.0, 6.0]
        assert all(e["steps"] == 2 for e in log)

    def test_empty_history(self):
        assert _epoch_log([], 3) == []


class TestTrain:
    def test_stage1_writes_checkpoint_and_log(self, ws, tmp_path, capsys):
        out = tmp_path / "ck"
        code = run("train", "--stage", "1", "--photos", ws.photos,
                   "--arts", ws.arts, "--out", out,
                   "--config", ws.config)
        assert code == EXIT_OK
        assert (out / "stage1.qart").is_file()
        log = json.loads((out / "stage1_losses.json").read_text())
        assert log["stage"] == 1
        assert len(log["epochs"]) == 1
        assert "photo_quant" in log["epochs"][0]
        capsys.readouterr()

    def test_missing_dataset_dir_exits_3_naming_path(self, ws, tmp_path,
                                                    capsys):
        missing = tmp_path / "nowhere"
        code = run("train", "--stage", "1", "--photos", missing,
                   "--arts", ws.arts, "--out", tmp_path / "ck",
                   "--config", ws.config)
        assert code == EXIT_IO
        assert str(missing) in capsys.readouterr().err

    def test_same_seed_gives_identical_checkpoints(self, ws, tmp_path,
                                                   capsys):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run("train", "--stage", "1", "--photos", ws.photos,
                       "--arts", ws.arts, "--out", out, "--config",
                       ws.config, "--seed", 7) == EXIT_OK
            outs.append((out / "stage1.qart").read_bytes())
        assert outs[0] == outs[1]
        capsys.readouterr()

    def test_stage2_requires_checkpoint(self, ws, tmp_path, capsys,
                                        monkeypatch):
        monkeypatch.delenv(CKPT_ENV_VAR, raising=False)
        code = run("train", "--stage", "2", "--photos", ws.photos,
                   "--arts", ws.arts, "--out", tmp_path / "ck")
        assert code == EXIT_USAGE
        assert CKPT_ENV_VAR in capsys.readouterr().err

    def test_stage2_trains_over_stage1(self, ws, tmp_path, capsys):
        out = tmp_path / "ck"
        code = run("train", "--stage", "2", "--photos", ws.photos,
                   "--arts", ws.arts, "--out", out,
                   "--ckpt", ws.stage1, "--steps", 2)
        assert code == EXIT_OK
        assert (out / "stage2.qart").is_file()
        log = json.loads((out / "stage2_losses.json").read_text())
        assert "cont" in log["epochs"][0] and "quant" in log["epochs"][0]
        capsys.readouterr()


class TestStylize:
    def test_writes_png_with_content_dims(self, ws, tmp_path, capsys):
        out = tmp_path / "y.png"
        code = run("stylize", "--content", ws.content, "--style", ws.style,
                   "--out", out, "--ckpt", ws.stage2)
        assert code == EXIT_OK
        assert decode_image_bytes(out.read_bytes()).shape == (3, 8, 8)
        capsys.readouterr()

    def test_alpha_out_of_range_exits_2(self, ws, tmp_path, capsys):
        code = run("stylize", "--content", ws.content, "--style", ws.style,
                   "--out", tmp_path / "y.png", "--ckpt", ws.stage2,
                   "--alpha", 1.5)
        assert code == EXIT_USAGE
        assert "alpha" in capsys.readouterr().err

    def test_beta_zero_is_style_independent(self, ws, tmp_path, capsys):
        outs = []
        for style in sorted(ws.arts.iterdir())[:2]:
            out = tmp_path / f"{style.stem}.png"
            assert run("stylize", "--content", ws.content, "--style", style,
                       "--out", out, "--ckpt", ws.stage2,
                       "--beta", 0) == EXIT_OK
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        capsys.readouterr()

    def test_missing_content_file_exits_3(self, ws, tmp_path, capsys):
        code = run("stylize", "--content", tmp_path / "absent.png",
                   "--style", ws.style, "--out", tmp_path / "y.png",
                   "--ckpt", ws.stage2)
        assert code == EXIT_IO
        capsys.readouterr()

    def test_stage1_checkpoint_rejected(self, ws, tmp_path, capsys):
        code = run("stylize", "--content", ws.content, "--style", ws.style,
                   "--out", tmp_path / "y.png", "--ckpt", ws.stage1)
        assert code == EXIT_USAGE
        assert "stage" in capsys.readouterr().err

    def test_env_var_supplies_checkpoint(self, ws, tmp_path, capsys,
                                         monkeypatch):
        monkeypatch.setenv(CKPT_ENV_VAR, str(ws.stage2))
        out = tmp_path / "y.png"
        assert run("stylize", "--content", ws.content, "--style", ws.style,
                   "--out", out) == EXIT_OK
        assert out.is_file()
        capsys.readouterr()

    def test_no_checkpoint_anywhere_exits_2(self, ws, tmp_path, capsys,
                                            monkeypatch):
        monkeypatch.delenv(CKPT_ENV_VAR, raising=False)
        code = run("stylize", "--content", ws.content, "--style", ws.style,
                   "--out", tmp_path / "y.png")
        assert code == EXIT_USAGE
        capsys.readouterr()

    def test_nonexistent_checkpoint_exits_3(self, ws, tmp_path, capsys):
        code = run("stylize", "--content", ws.content, "--style", ws.style,
                   "--out", tmp_path / "y.png",
                   "--ckpt", tmp_path / "none.qart")
        assert code == EXIT_IO
        capsys.readouterr()


class TestGrid:
    def stylize_pixels(self, ws, tmp_path, alpha, beta, name):
        out = tmp_path / name
        assert run("stylize", "--content", ws.content, "--style", ws.style,
                   "--out", out, "--ckpt", ws.stage2, "--alpha", alpha,
                   "--beta", beta) == EXIT_OK
        return decode_image_bytes(out.read_bytes())

    def test_three_by_three_mosaic_and_index(self, ws, tmp_path, capsys):
        out = tmp_path / "grid"
        code = run("grid", "--content", ws.content, "--style", ws.style,
                   "--out", out, "--ckpt", ws.stage2,
                   "--alphas", "0,0.5,1", "--betas", "0,0.5,1")
        assert code == EXIT_OK
        index = json.loads((out / "grid.json").read_text())
        assert index["rows"] == 3 and index["cols"] == 3
        assert len(index["cells"]) == 9
        mosaic = decode_image_bytes((out / "grid.png").read_bytes())
        assert mosaic.shape == (3, 24, 24)
        capsys.readouterr()

    def test_corner_cell_matches_single_stylize(self, ws, tmp_path, capsys):
        out = tmp_path / "grid"
        assert run("grid", "--content", ws.content, "--style", ws.style,
                   "--out", out, "--ckpt", ws.stage2,
                   "--alphas", "0,1", "--betas", "0,1") == EXIT_OK
        mosaic = decode_image_bytes((out / "grid.png").read_bytes())
        corner = mosaic[:, :8, :8]
        single = self.stylize_pixels(ws, tmp_path, 0.0, 0.0, "corner.png")
        np.testing.assert_array_equal(corner, single)
        capsys.readouterr()

    def test_single_cell_grid_equals_stylize(self, ws, tmp_path, capsys):
        out = tmp_path / "grid"
        assert run("grid", "--content", ws.content, "--style", ws.style,
                   "--out", out, "--ckpt", ws.stage2,
                   "--alphas", "0.5", "--betas", "0.5") == EXIT_OK
        mosaic = decode_image_bytes((out / "grid.png").read_bytes())
        single = self.stylize_pixels(ws, tmp_path, 0.5, 0.5, "single.png")
        np.testing.assert_array_equal(mosaic, single)
        capsys.readouterr()

    def test_tile_count_after_dedup(self, ws, tmp_path, capsys):
        out = tmp_path / "grid"
        assert run("grid", "--content", ws.content, "--style", ws.style,
                   "--out", out, "--ckpt", ws.stage2,
                   "--alphas", "1,1,0", "--betas", "0.5") == EXIT_OK
        index = json.loads((out / "grid.json").read_text())
        assert len(index["cells"]) == 2
        assert [c["alpha"] for c in index["cells"]] == [0.0, 1.0]
        capsys.readouterr()

    def test_out_of_range_grid_exits_2(self, ws, tmp_path, capsys):
        code = run("grid", "--content", ws.content, "--style", ws.style,
                   "--out", tmp_path / "grid", "--ckpt", ws.stage2,
                   "--alphas", "0,2")
        assert code == EXIT_USAGE
        capsys.readouterr()

    def test_non_numeric_grid_exits_2(self, ws, tmp_path, capsys):
        code = run("grid", "--content", ws.content, "--style", ws.style,
                   "--out", tmp_path / "grid", "--ckpt", ws.stage2,
                   "--alphas", "a,b")
        assert code == EXIT_USAGE
        capsys.readouterr()


class TestEval:
    def test_reports_metrics_as_json_lines(self, ws, tmp_path, capsys):
        out = tmp_path / "metrics.jsonl"
        code = run("eval", "--photos", ws.photos, "--arts", ws.arts,
                   "--ckpt", ws.stage2, "--out", out, "--n", 4)
        assert code == EXIT_OK
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        metrics = {r["metric"] for r in lines}
        assert {"recon_l1_photo_cont", "recon_l1_art_quant", "style_stats",
                "gram", "perceptual"} <= metrics
        for r in lines:
            assert set(r) == {"metric", "value", "n_samples",
                              "backbone_hash"}
            assert np.isfinite(r["value"])
            assert r["n_samples"] == 4
        capsys.readouterr()

    def test_prints_to_stdout_without_out(self, ws, capsys):
        code = run("eval", "--photos", ws.photos, "--arts", ws.arts,
                   "--ckpt", ws.stage1, "--n", 2)
        assert code == EXIT_OK
        lines = [json.loads(l)
                 for l in capsys.readouterr().out.strip().splitlines()]
        metrics = {r["metric"] for r in lines}
        assert "recon_l1_photo_cont" in metrics
        assert "style_stats" not in metrics  # stage 1 has no transfer
