"""
End to end tests of the sobolev-descent command line.
"""

import os

import numpy as np
import pandas as pd
import pytest
import yaml
from numpy.testing import assert_allclose, assert_array_equal
from PIL import Image

from sobolev_descent.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main, preset
from sobolev_descent.datasets import load_png, quantize
from sobolev_descent.errors import ParameterError

FAST = ["--quiet", "--deterministic", "--m", "16", "--steps", "20", "--eval-m", "32"]


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def write_image(path, pixels):
    Image.fromarray(pixels.astype(np.uint8), mode="RGB").save(path)


def two_images(tmp_path, size=8):
    rng = np.random.default_rng(0)
    source = rng.integers(0, 120, (size, size, 3))
    target = rng.integers(120, 256, (size, size, 3))
    source_path, target_path = str(tmp_path / "source.png"), str(tmp_path / "target.png")
    write_image(source_path, source)
    write_image(target_path, target)
    return source_path, target_path


def test_presets():
    morph = preset("morph", "kernel")
    assert (morph["m"], morph["steps"], morph["eps"], morph["lam"]) == (100, 600, 0.01, 0.01)
    neural = preset("morph", "neural")
    assert neural["hidden"] == [32, 64, 32] and neural["steps"] == 800
    assert preset("color", "kernel")["sigma"] == 0.1
    with pytest.raises(ParameterError):
        preset("principal-dirs", "neural")


def test_gauss1d_outputs(tmp_path):
    out = str(tmp_path / "run")
    status = main(["gauss1d", "--out", out, "--n", "100", "--snapshots", "0", "10", "20"]
                  + FAST)
    assert status == EXIT_OK

    for name in ("manifest.yml", "trace.csv", "kde_step00000.csv", "kde_step00010.csv",
                 "kde_step00020.csv", "kde_target.csv"):
        assert os.path.isfile(os.path.join(out, name))

    trace = pd.read_csv(os.path.join(out, "trace.csv"))
    assert list(trace["step"]) == list(range(21))
    assert "eval_mmd2" in trace.columns
    assert trace["mmd2"].iloc[-1] < trace["mmd2"].iloc[0]

    with open(os.path.join(out, "manifest.yml")) as f:
        manifest = yaml.safe_load(f)
    assert manifest["experiment"] == "gauss1d"
    assert manifest["config"]["m"] == 16
    assert manifest["config"]["sigma"] == 0.3
    assert set(manifest["metadata"]["kde_bandwidths"]) == {"0", "10", "20", "target"}

    kde = pd.read_csv(os.path.join(out, "kde_step00020.csv"))
    assert list(kde.columns) == ["x", "density"]


def test_zero_lambda_is_a_usage_error(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["gauss1d", "--lambda", "0", "--out", out] + FAST) == EXIT_USAGE
    assert "lambda must be > 0" in capsys.readouterr().err
    assert not os.path.exists(out)


@pytest.mark.parametrize("flag, message", [
    ("--kde-bandwidth=0", "kde_bandwidth must be > 0"),
    ("--kde-bandwidth=-0.1", "kde_bandwidth must be > 0"),
    ("--kde-points=-1", "kde_points must be at least 2"),
    ("--kde-points=1", "kde_points must be at least 2"),
])
def test_bad_kde_options_are_usage_errors(tmp_path, capsys, flag, message):
    out = str(tmp_path / "run")
    assert main(["gauss1d", flag, "--out", out] + FAST) == EXIT_USAGE
    assert message in capsys.readouterr().err
    assert not os.path.exists(out)


def test_explicit_kde_bandwidth_is_used(tmp_path):
    out = str(tmp_path / "run")
    assert main(["gauss1d", "--kde-bandwidth", "0.05", "--kde-points", "64",
                 "--out", out] + FAST) == EXIT_OK
    with open(os.path.join(out, "manifest.yml")) as f:
        manifest = yaml.safe_load(f)
    assert set(manifest["metadata"]["kde_bandwidths"].values()) == {0.05}
    assert len(pd.read_csv(os.path.join(out, "kde_target.csv"))) == 64


def test_unknown_flag_is_a_usage_error():
    assert main(["gauss1d", "--frobnicate"]) == EXIT_USAGE
    assert main(["unknown"]) == EXIT_USAGE


def test_same_seed_gives_identical_files(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (a, b):
        assert main(["gauss1d", "--seed", "1", "--n", "100", "--out", out] + FAST) == EXIT_OK
    for name in ("trace.csv", "kde_step00020.csv", "kde_target.csv"):
        assert read_bytes(os.path.join(a, name)) == read_bytes(os.path.join(b, name))


def test_rerun_from_manifest(tmp_path):
    first, second = str(tmp_path / "first"), str(tmp_path / "second")
    assert main(["morph", "--n", "200", "--seed", "4", "--out", first] + FAST) == EXIT_OK
    assert main(["morph", "--quiet", "--config", os.path.join(first, "manifest.yml"),
                 "--out", second]) == EXIT_OK
    assert read_bytes(os.path.join(first, "trace.csv")) == \
        read_bytes(os.path.join(second, "trace.csv"))


def test_config_file_and_flag_precedence(tmp_path):
    config = tmp_path / "config.yml"
    config.write_text("n: 50\nsteps: 5\nm: 8\nlam: 1e-1\n")
    out = str(tmp_path / "run")
    assert main(["gauss1d", "--quiet", "--deterministic", "--config", str(config),
                 "--steps", "7", "--out", out]) == EXIT_OK

    with open(os.path.join(out, "manifest.yml")) as f:
        resolved = yaml.safe_load(f)["config"]
    assert (resolved["n"], resolved["steps"], resolved["m"], resolved["lam"]) == (50, 7, 8, 0.1)
    assert resolved["sigma"] == 0.3


def test_config_file_with_unknown_key(tmp_path):
    config = tmp_path / "config.yml"
    config.write_text("bandwidth_of_everything: 3\n")
    assert main(["gauss1d", "--quiet", "--config", str(config),
                 "--out", str(tmp_path / "run")]) == EXIT_USAGE


def test_color_identical_images(tmp_path):
    source, _ = two_images(tmp_path)
    out = str(tmp_path / "run")
    assert main(["color", "--source", source, "--target", source, "--out", out]
                + FAST) == EXIT_OK

    assert_array_equal(quantize(load_png(os.path.join(out, "recolored.png"))),
                       quantize(load_png(source)))
    sweep = pd.read_csv(os.path.join(out, "bandwidths.csv"))
    assert list(sweep.columns) == ["sigma", "mmd2_source", "mmd2_final"]
    assert np.all(sweep["mmd2_final"] == 0)


def test_color_transfer_moves_colors(tmp_path):
    source, target = two_images(tmp_path)
    out = str(tmp_path / "run")
    assert main(["color", "--source", source, "--target", target, "--sigma", "0.3",
                 "--eval-sigma", "0.3", "--eps", "0.05", "--out", out] + FAST) == EXIT_OK

    trace = pd.read_csv(os.path.join(out, "trace.csv"))
    assert trace["eval_mmd2"].iloc[-1] < trace["eval_mmd2"].iloc[0]
    recolored = quantize(load_png(os.path.join(out, "recolored.png")))
    assert recolored.shape == (8, 8, 3)
    with open(os.path.join(out, "manifest.yml")) as f:
        assert yaml.safe_load(f)["metadata"]["source_resolution"] == [8, 8]


def test_color_missing_file(tmp_path, capsys):
    source, _ = two_images(tmp_path)
    status = main(["color", "--source", source, "--target", str(tmp_path / "missing.png"),
                   "--out", str(tmp_path / "run")] + FAST)
    assert status == EXIT_IO
    assert "missing.png" in capsys.readouterr().err


def test_color_needs_images(tmp_path):
    assert main(["color", "--out", str(tmp_path / "run")] + FAST) == EXIT_USAGE


def test_color_pixel_limit(tmp_path):
    source, target = two_images(tmp_path)
    assert main(["color", "--source", source, "--target", target, "--max-pixels", "10",
                 "--out", str(tmp_path / "run")] + FAST) == EXIT_USAGE


def test_morph_snapshots(tmp_path):
    out = str(tmp_path / "run")
    assert main(["morph", "--source", "disk", "--target", "square", "--n", "100",
                 "--snapshots", "0", "20", "--out", out] + FAST) == EXIT_OK

    start = pd.read_csv(os.path.join(out, "points_step00000.csv"))
    end = pd.read_csv(os.path.join(out, "points_step00020.csv"))
    assert list(start.columns) == ["x", "y"]
    assert len(start) == len(end) == 100
    assert os.path.isfile(os.path.join(out, "target.csv"))


def test_morph_identical_shapes_barely_move(tmp_path):
    out = str(tmp_path / "run")
    assert main(["morph", "--source", "disk", "--target", "disk", "--n", "400",
                 "--snapshots", "0", "20", "--out", out] + FAST) == EXIT_OK
    start = pd.read_csv(os.path.join(out, "points_step00000.csv")).to_numpy()
    end = pd.read_csv(os.path.join(out, "points_step00020.csv")).to_numpy()
    assert np.sqrt(np.mean(np.sum((end - start)**2, axis=1))) < 0.1


def test_morph_from_files(tmp_path):
    luma = np.full((16, 16), 255, dtype=np.uint8)
    luma[4:12, 4:12] = 0
    png = str(tmp_path / "shape.png")
    Image.fromarray(luma, mode="L").save(png)
    out = str(tmp_path / "run")
    assert main(["morph", "--source", png, "--target", "ring", "--n", "100",
                 "--out", out] + FAST) == EXIT_OK
    assert main(["morph", "--source", "blob", "--out", str(tmp_path / "bad")]
                + FAST) == EXIT_USAGE


def test_morph_lambda_sweep(tmp_path):
    out = str(tmp_path / "sweep")
    assert main(["morph", "--n", "100", "--lambdas", "1", "1e-3", "--out", out]
                + FAST) == EXIT_OK
    report = pd.read_csv(os.path.join(out, "sweep.csv"))
    assert list(report.columns) == ["lambda", "steps_to_threshold", "initial_mmd2",
                                    "final_mmd2"]
    assert list(report["lambda"]) == [1e-3, 1.0]
    assert os.path.isfile(os.path.join(out, "lambda_00", "trace.csv"))
    assert os.path.isfile(os.path.join(out, "lambda_01", "trace.csv"))

    assert main(["morph", "--mode", "neural", "--lambdas", "1e-3", "--out", out]
                + FAST) == EXIT_USAGE


def test_neural_morph(tmp_path):
    out = str(tmp_path / "run")
    assert main(["morph", "--mode", "neural", "--n", "64", "--steps", "5",
                 "--warmup", "5", "--n-critic", "2", "--hidden", "8", "8",
                 "--out", out, "--quiet", "--deterministic", "--eval-m", "32"]) == EXIT_OK
    trace = pd.read_csv(os.path.join(out, "trace.csv"))
    assert {"lambda_alm", "omega_hat", "ehat"} <= set(trace.columns)


def test_principal_dirs(tmp_path):
    out = str(tmp_path / "dirs")
    assert main(["principal-dirs", "--n", "200", "--m", "24", "--at-step", "10",
                 "--grid", "5", "--directions", "3", "--out", out, "--quiet"]) == EXIT_OK

    report = pd.read_csv(os.path.join(out, "spectral.csv"))
    assert len(report) == 24
    assert_allclose(report["coefficient"], report["alignment"] * report["weight"], rtol=1e-15)

    fields = pd.read_csv(os.path.join(out, "fields.csv"))
    assert sorted(fields["j"].unique()) == [1, 2, 3]
    assert len(fields) == 3 * 25

    with open(os.path.join(out, "manifest.yml")) as f:
        metadata = yaml.safe_load(f)["metadata"]
    assert metadata["reconstruction_error"] < 1e-8 * max(1.0, metadata["rksd2"])
    assert_allclose(metadata["spectral_rksd2"], metadata["rksd2"], rtol=1e-8)


@pytest.mark.slow
def test_gauss1d_kernel_preset(tmp_path):
    out = str(tmp_path / "run")
    assert main(["gauss1d", "--mode", "kernel", "--m", "128", "--sigma", "0.3",
                 "--lambda", "1e-2", "--eps", "1e-2", "--steps", "3000",
                 "--trace-every", "100", "--quiet", "--out", out]) == EXIT_OK
    trace = pd.read_csv(os.path.join(out, "trace.csv"))
    assert trace["mmd2"].iloc[-1] < 0.01 * trace["mmd2"].iloc[0]


@pytest.mark.slow
def test_morph_preset_reduces_evaluation_mmd(tmp_path):
    out = str(tmp_path / "run")
    assert main(["morph", "--trace-every", "50", "--quiet", "--out", out]) == EXIT_OK
    trace = pd.read_csv(os.path.join(out, "trace.csv"))
    assert trace["step"].iloc[-1] == 600
    assert trace["eval_mmd2"].iloc[-1] <= 0.1 * trace["eval_mmd2"].iloc[0]


@pytest.mark.slow
def test_color_preset_reduces_evaluation_mmd(tmp_path):
    rng = np.random.default_rng(1)
    source = np.zeros((64, 64, 3))
    source[..., 0] = np.linspace(0, 255, 64)[None, :]
    source[..., 2] = rng.integers(0, 80, (64, 64))
    target = np.zeros((64, 64, 3))
    target[..., 1] = np.linspace(0, 255, 64)[:, None]
    target[..., 0] = rng.integers(150, 256, (64, 64))
    source_path, target_path = str(tmp_path / "s.png"), str(tmp_path / "t.png")
    write_image(source_path, source)
    write_image(target_path, target)

    out = str(tmp_path / "run")
    assert main(["color", "--source", source_path, "--target", target_path,
                 "--trace-every", "20", "--quiet", "--out", out]) == EXIT_OK
    trace = pd.read_csv(os.path.join(out, "trace.csv"))
    assert trace["eval_mmd2"].iloc[-1] <= 0.1 * trace["eval_mmd2"].iloc[0]
