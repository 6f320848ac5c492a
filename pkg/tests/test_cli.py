import os

import numpy as np
import pytest

from styletrace import cli, imgproc, nets, train
from styletrace.cli import entry


FAST_PRIOR = ["--blur-kernel", "3", "--bilateral-d", "3"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Checkpoint plus a couple of images, shared across the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(12)
    paths = {
        "content": str(root / "content.png"),
        "style": str(root / "style.png"),
        "ckpt": str(root / "model.bin"),
        "zero_ckpt": str(root / "zeroed.bin"),
        "root": str(root),
    }
    imgproc.save_image(rng.random((3, 64, 64)), paths["content"])
    imgproc.save_image(rng.random((3, 64, 64)), paths["style"])
    params = nets.build_model(base_width=4, proj_dim=8, seed=6)
    nets.save_model(params, paths["ckpt"])
    params.decoder.zero_final_()
    nets.save_model(params, paths["zero_ckpt"])
    return paths


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert entry(["stylize", "--no-such-flag"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_missing_subcommand_is_usage_error(self):
        assert entry([]) == 1

    def test_bad_alpha_list_is_usage_error(self, workdir):
        code = entry(
            ["interp", "--content", workdir["content"], "--style", workdir["style"],
             "--checkpoint", workdir["ckpt"], "--out-dir", workdir["root"],
             "--alpha-list", "0.5,oops"]
        )
        assert code == 1

    def test_missing_content_file(self, workdir, capsys):
        code = entry(
            ["stylize", "--content", os.path.join(workdir["root"], "ghost.png"),
             "--style", workdir["style"], "--checkpoint", workdir["ckpt"],
             "--out", os.path.join(workdir["root"], "x.png")]
        )
        assert code == 3
        assert "missing input" in capsys.readouterr().err

    def test_missing_checkpoint(self, workdir):
        code = entry(
            ["stylize", "--content", workdir["content"], "--style", workdir["style"],
             "--checkpoint", os.path.join(workdir["root"], "ghost.bin"),
             "--out", os.path.join(workdir["root"], "x.png")]
        )
        assert code == 3

    def test_corrupt_checkpoint_is_runtime_error(self, workdir, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"XXXX not a checkpoint")
        code = entry(
            ["stylize", "--content", workdir["content"], "--style", workdir["style"],
             "--checkpoint", str(bad), "--out", str(tmp_path / "x.png")]
        )
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            entry(["--help"])
        assert excinfo.value.code == 0
        assert "styletrace" in capsys.readouterr().out


class TestHelpText:
    @pytest.mark.parametrize(
        "command,flags",
        [
            ("train", ["--config", "--resume"]),
            ("stylize", ["--content", "--style", "--checkpoint", "--out", "--alpha",
                         "--size", "--no-prior-blur", "--blur-kernel", "--bilateral-d",
                         "--bilateral-sigma", "--prior-weight"]),
            ("interp", ["--alpha-list", "--out-dir", "--size"]),
            ("prior", ["--plain", "--out-dir", "--no-prior-blur"]),
            ("eval", ["--pairs", "--checkpoint", "--out"]),
            ("bench", ["--sizes", "--repeats", "--warmup", "--out"]),
            ("frames", ["--in", "--alpha", "--out"]),
        ],
    )
    def test_every_flag_documented(self, command, flags, capsys):
        with pytest.raises(SystemExit):
            entry([command, "--help"])
        text = capsys.readouterr().out
        for flag in flags:
            assert flag in text, flag

    def test_defaults_shown(self, capsys):
        with pytest.raises(SystemExit):
            entry(["stylize", "--help"])
        text = " ".join(capsys.readouterr().out.split())  # undo help line wrapping
        assert "default 1.0" in text
        assert "default 7" in text
        assert "default 25" in text
        assert "default 0.5" in text
        assert "default 100.0" in text


class TestStylizeCommand:
    def test_writes_output(self, workdir, tmp_path, capsys):
        out = str(tmp_path / "out.png")
        code = entry(
            ["stylize", "--content", workdir["content"], "--style", workdir["style"],
             "--checkpoint", workdir["ckpt"], "--out", out] + FAST_PRIOR
        )
        assert code == 0
        assert capsys.readouterr().out.strip() == out
        assert imgproc.load_image(out).shape == (3, 64, 64)

    def test_reruns_byte_identical(self, workdir, tmp_path):
        a = str(tmp_path / "a.png")
        b = str(tmp_path / "b.png")
        for out in (a, b):
            assert entry(
                ["stylize", "--content", workdir["content"], "--style", workdir["style"],
                 "--checkpoint", workdir["ckpt"], "--out", out] + FAST_PRIOR
            ) == 0
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_zeroed_decoder_matches_prior_subcommand(self, workdir, tmp_path):
        stylized = str(tmp_path / "stylized.png")
        stage_dir = str(tmp_path / "stages")
        assert entry(
            ["stylize", "--content", workdir["content"], "--style", workdir["style"],
             "--checkpoint", workdir["zero_ckpt"], "--out", stylized] + FAST_PRIOR
        ) == 0
        assert entry(
            ["prior", "--content", workdir["content"], "--style", workdir["style"],
             "--out-dir", stage_dir] + FAST_PRIOR
        ) == 0
        with open(stylized, "rb") as fa, open(os.path.join(stage_dir, "04_prior.png"), "rb") as fb:
            assert fa.read() == fb.read()

    def test_alpha_changes_output(self, workdir, tmp_path):
        full = str(tmp_path / "full.png")
        half = str(tmp_path / "half.png")
        base = ["stylize", "--content", workdir["content"], "--style", workdir["style"],
                "--checkpoint", workdir["ckpt"]] + FAST_PRIOR
        assert entry(base + ["--out", full]) == 0
        assert entry(base + ["--out", half, "--alpha", "0.5"]) == 0
        assert not np.array_equal(imgproc.load_image(full), imgproc.load_image(half))


class TestPriorCommand:
    def test_all_stages_written(self, workdir, tmp_path):
        out_dir = str(tmp_path / "stages")
        assert entry(["prior", "--content", workdir["content"], "--style", workdir["style"],
                      "--out-dir", out_dir] + FAST_PRIOR) == 0
        assert sorted(os.listdir(out_dir)) == [
            "01_blurred.png", "02_smoothed.png", "03_recolored.png", "04_prior.png"
        ]

    def test_plain_needs_no_style(self, workdir, tmp_path):
        out_dir = str(tmp_path / "plain")
        assert entry(["prior", "--content", workdir["content"], "--plain",
                      "--out-dir", out_dir] + FAST_PRIOR) == 0
        assert sorted(os.listdir(out_dir)) == ["01_blurred.png", "02_smoothed.png", "03_prior.png"]

    def test_no_prior_blur_drops_the_blur_stage(self, workdir, tmp_path):
        out_dir = str(tmp_path / "noblur")
        assert entry(["prior", "--content", workdir["content"], "--style", workdir["style"],
                      "--out-dir", out_dir, "--no-prior-blur"] + FAST_PRIOR) == 0
        assert sorted(os.listdir(out_dir)) == [
            "01_smoothed.png", "02_recolored.png", "03_prior.png"
        ]

    def test_missing_style_without_plain_is_usage_error(self, workdir, tmp_path, capsys):
        code = entry(["prior", "--content", workdir["content"],
                      "--out-dir", str(tmp_path / "p")] + FAST_PRIOR)
        assert code == 1
        assert "--style" in capsys.readouterr().err


class TestInterpCommand:
    def test_one_file_per_alpha(self, workdir, tmp_path):
        out_dir = str(tmp_path / "sweep")
        code = entry(
            ["interp", "--content", workdir["content"], "--style", workdir["style"],
             "--checkpoint", workdir["ckpt"], "--out-dir", out_dir,
             "--alpha-list", "0,1,1.5"] + FAST_PRIOR
        )
        assert code == 0
        names = sorted(os.listdir(out_dir))
        assert names == ["alpha_0.png", "alpha_1.5.png", "alpha_1.png"]


class TestEvalCommand:
    def test_csv_and_figure_written(self, workdir, tmp_path):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text(
            "content_path,style_path\n"
            f"{workdir['content']},{workdir['style']}\n"
            f"{workdir['style']},{workdir['content']}\n"
        )
        out_csv = str(tmp_path / "metrics.csv")
        code = entry(["eval", "--pairs", str(pairs),
                      "--checkpoint", workdir["ckpt"], "--out", out_csv])
        assert code == 0
        with open(out_csv) as fh:
            lines = fh.read().strip().split("\n")
        assert lines[0].startswith("label,")
        assert len(lines) == 4  # header, one row per pair, aggregate
        assert lines[1].split(",")[0] == "content+style"
        assert lines[-1].split(",")[0] == "mean"
        assert os.path.exists(str(tmp_path / "metrics.png"))

    def test_relative_paths_resolve_against_the_csv(self, workdir, tmp_path):
        pairs = os.path.join(workdir["root"], "rel_pairs.csv")
        with open(pairs, "w") as fh:
            fh.write("content_path,style_path\ncontent.png,style.png\n")
        out_csv = str(tmp_path / "rel.csv")
        assert entry(["eval", "--pairs", pairs,
                      "--checkpoint", workdir["ckpt"], "--out", out_csv]) == 0
        assert os.path.exists(out_csv)

    def test_missing_header_is_runtime_error(self, workdir, tmp_path, capsys):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text(f"{workdir['content']},{workdir['style']}\n")
        code = entry(["eval", "--pairs", str(pairs),
                      "--checkpoint", workdir["ckpt"], "--out", str(tmp_path / "m.csv")])
        assert code == 2
        assert "header" in capsys.readouterr().err

    def test_malformed_pair_line(self, workdir, tmp_path):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("content_path,style_path\nonly_one_path.png\n")
        code = entry(["eval", "--pairs", str(pairs),
                      "--checkpoint", workdir["ckpt"], "--out", str(tmp_path / "m.csv")])
        assert code == 2


class TestBenchCommand:
    def test_table_and_figure_written(self, workdir, tmp_path, capsys):
        out = str(tmp_path / "timing.txt")
        code = entry(
            ["bench", "--checkpoint", workdir["ckpt"], "--out", out,
             "--sizes", "32x32", "--repeats", "2", "--warmup", "1"] + FAST_PRIOR
        )
        assert code == 0
        with open(out) as fh:
            table = fh.read()
        assert "resolution" in table and "32x32" in table
        assert table in capsys.readouterr().out
        assert os.path.exists(str(tmp_path / "timing.png"))

    def test_without_out_prints_the_table_only(self, workdir, tmp_path, capsys):
        code = entry(
            ["bench", "--checkpoint", workdir["ckpt"],
             "--sizes", "32x32", "--repeats", "2", "--warmup", "1"] + FAST_PRIOR
        )
        assert code == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].split() == ["resolution", "seconds"]
        assert "32x32" in out
        assert list(tmp_path.iterdir()) == []

    def test_bad_resolution_is_usage_error(self, workdir, tmp_path):
        code = entry(["bench", "--checkpoint", workdir["ckpt"],
                      "--out", str(tmp_path / "t.txt"), "--sizes", "32by32"])
        assert code == 1


class TestFramesCommand:
    def test_sequence_processed(self, workdir, tmp_path, capsys):
        frames = tmp_path / "frames"
        frames.mkdir()
        rng = np.random.default_rng(1)
        for i in (1, 2):
            imgproc.save_image(rng.random((3, 64, 64)), str(frames / f"f_{i}.png"))
        out_dir = str(tmp_path / "out")
        code = entry(
            ["frames", "--in", str(frames), "--style", workdir["style"],
             "--checkpoint", workdir["ckpt"], "--out", out_dir] + FAST_PRIOR
        )
        assert code == 0
        assert sorted(os.listdir(out_dir)) == ["f_1.png", "f_2.png"]
        assert "wrote 2 frames" in capsys.readouterr().out


class TestTrainCommand:
    def test_end_to_end_from_config_file(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        data = tmp_path / "data"
        data.mkdir()
        for name in ("c0.png", "s0.png"):
            imgproc.save_image(rng.random((3, 72, 72)), str(data / name))
        (data / "contents.txt").write_text("c0.png\n")
        (data / "styles.txt").write_text("s0.png\n")
        out_dir = tmp_path / "run"
        cfg = tmp_path / "train.cfg"
        cfg.write_text(
            f"content_manifest={data / 'contents.txt'}\n"
            f"style_manifest={data / 'styles.txt'}\n"
            f"out_dir={out_dir}\n"
            "steps=1\nbatch_size=2\ncrop_size=64\nbase_width=4\nproj_dim=8\n"
            "checkpoint_every=1\nlog_every=0\nn_patches=4\n"
            "blur_kernel=3\nbilateral_diameter=3\n"
        )
        assert entry(["train", "--config", str(cfg)]) == 0
        assert os.path.exists(str(out_dir / "latest.bin"))
        assert os.path.exists(str(out_dir / "losses.csv"))
        assert os.path.exists(str(out_dir / "losses.png"))
        assert "finished at" in capsys.readouterr().out

    def test_missing_config_file(self, tmp_path):
        assert entry(["train", "--config", str(tmp_path / "none.cfg")]) == 3
