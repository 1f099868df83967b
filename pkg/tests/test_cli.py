import json
import subprocess
import sys

import numpy as np
import pytest

from regionblend.cli import main, manifest_path
from regionblend.denoiser import save_checkpoint, seeded_init
from regionblend.imageio import load_image


@pytest.fixture(scope="module")
def fx_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert main(["gen-fixtures", "--seed", "0", "--out-dir", str(out), "--count", "2",
                 "--multi", "1"]) == 0
    return out


def _customize_args(fx_dir, out, *extra):
    return ["customize", "--scene", str(fx_dir / "fixture_00_scene.png"),
            "--ref", str(fx_dir / "fixture_00_ref0.png"),
            "--ref-mask", str(fx_dir / "fixture_00_mask0.png"),
            "--box", "4,6,14,12", "--prompt", "red disc", "--steps", "6",
            "--out", str(out), *extra]


def test_customize_writes_image_and_manifest(fx_dir, tmp_path):
    out = tmp_path / "o.png"
    assert main(_customize_args(fx_dir, out)) == 0
    assert load_image(out).shape == (32, 32, 3)
    man = json.loads(open(manifest_path(str(out))).read())
    assert man["seed"] == 0 and man["config"]["num_steps"] == 6
    assert man["config"]["boxes"] == [[4, 6, 14, 12]]
    assert [s["t"] for s in man["steps"]] == [999, 799, 599, 400, 200]
    assert {s["branch"] for s in man["steps"]} <= {"window", "high", "identity"}
    assert "seconds" not in man["steps"][0] and "timing" not in man
    assert man["metrics"]["output_vs_collage"]["lpips"].startswith("not-computed")


def test_customize_byte_reproducible(fx_dir, tmp_path):
    a, b = tmp_path / "a" / "o.png", tmp_path / "b" / "o.png"
    a.parent.mkdir()
    b.parent.mkdir()
    assert main(_customize_args(fx_dir, a)) == 0
    assert main(_customize_args(fx_dir, b)) == 0
    assert a.read_bytes() == b.read_bytes()
    assert open(manifest_path(str(a)), "rb").read() == open(manifest_path(str(b)), "rb").read()


def test_timing_flag(fx_dir, tmp_path):
    out = tmp_path / "t.png"
    assert main(_customize_args(fx_dir, out, "--timing")) == 0
    man = json.loads(open(manifest_path(str(out))).read())
    assert man["timing"]["total_seconds"] > 0 and "seconds" in man["steps"][0]


def test_flags_override_config_file(fx_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 5, "num_steps": 4, "solver": "ddim",
                               "blend": {"alpha": 0.5, "beta": 0.25}}))
    out = tmp_path / "c.png"
    assert main(_customize_args(fx_dir, out, "--config", str(cfg), "--seed", "8",
                                "--set", "blend.tau_a=0.3")) == 0
    man = json.loads(open(manifest_path(str(out))).read())
    c = man["config"]
    assert (c["seed"], c["num_steps"], c["solver"]) == (8, 6, "ddim")
    assert (c["blend"]["alpha"], c["blend"]["tau_a"]) == (0.5, 0.3)


def test_config_errors_exit_2(fx_dir, tmp_path, capsys):
    out = tmp_path / "x.png"
    assert main(_customize_args(fx_dir, out, "--set", "blend.alpha=0.9")) == 2
    assert "blend weights" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(_customize_args(fx_dir, out, "--config", str(bad))) == 2
    assert "config" in capsys.readouterr().err
    args = _customize_args(fx_dir, out)
    args[args.index("--scene") + 1] = str(tmp_path / "missing.png")
    assert main(args) == 2
    assert "missing.png" in capsys.readouterr().err
    args = _customize_args(fx_dir, out)
    args[args.index("--box") + 1] = "30,30,8,8"
    assert main(args) == 2


def test_bad_box_syntax_is_usage_error(fx_dir, tmp_path):
    args = _customize_args(fx_dir, tmp_path / "x.png")
    args[args.index("--box") + 1] = "1,2,3"
    with pytest.raises(SystemExit) as info:
        main(args)
    assert info.value.code == 2


def test_numerical_failure_exit_3(fx_dir, tmp_path, capsys):
    model = seeded_init(7)
    model.params["conv_out.w"][0, 0, 0, 0] = np.nan
    ckpt = tmp_path / "nan.ckpt"
    save_checkpoint(model, ckpt)
    code = main(_customize_args(fx_dir, tmp_path / "n.png", "--weights", str(ckpt)))
    assert code == 3
    err = capsys.readouterr().err
    assert "invert null step 0" in err and "t=0->" in err


def test_reconstruct_invert_eval(fx_dir, tmp_path, capsys):
    scene = str(fx_dir / "fixture_01_scene.png")
    out = tmp_path / "r.png"
    assert main(["reconstruct", "--image", scene, "--out", str(out), "--steps", "8"]) == 0
    metrics = json.loads(capsys.readouterr().out)["reconstruction_vs_input"]
    assert metrics["mae"] < 0.1
    assert main(["invert", "--image", scene, "--out", str(tmp_path / "z.npy"),
                 "--steps", "8"]) == 0
    assert np.load(tmp_path / "z.npy").shape == (1, 3, 32, 32)
    assert main(["eval", scene, scene]) == 0
    same = json.loads(capsys.readouterr().out)
    assert same["mae"] == 0 and same["ssim"] == pytest.approx(1.0)
    assert main(["eval", str(fx_dir), str(fx_dir)]) == 0
    table = json.loads(capsys.readouterr().out)
    assert table["mean"]["mae"] == 0 and "fixture_00_scene.png" in table["images"]


def test_train_toy_command(tmp_path):
    ckpt = tmp_path / "t.ckpt"
    assert main(["train-toy", "--out", str(ckpt), "--iterations", "1", "--batch-size", "2",
                 "--dataset-size", "2"]) == 0
    assert main(["reconstruct", "--image", str(tmp_path / "missing.png"),
                 "--out", str(tmp_path / "r.png"), "--weights", str(ckpt)]) == 2


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "regionblend.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("customize", "reconstruct", "invert", "eval", "gen-fixtures", "train-toy"):
        assert cmd in proc.stdout
