import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from gsv_interp.cli import bench_rows, main
from gsv_interp.imaging import load_pgm, save_pgm
from gsv_interp.modelfile import load_model, model_to_dict, save_model
from gsv_interp.pipeline import InterpModel


def _smooth(h, w, seed=0):
    r, c = np.mgrid[0:h, 0:w]
    rng = np.random.default_rng(seed)
    return np.clip(0.5 + 0.3 * np.sin(r / 6.0 + c / 9.0) + 0.01 * rng.standard_normal((h, w)), 0, 1)


@pytest.fixture
def image(tmp_path):
    path = tmp_path / "img.pgm"
    save_pgm(path, _smooth(64, 64))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_mask_writes_image_and_sidecar(tmp_path, image, capsys):
    out = tmp_path / "m.pgm"
    code, _, _ = run(capsys, "mask", image, out)
    assert code == 0
    px = np.asarray(load_pgm(out))
    assert int(np.sum(px == 0)) >= 2048
    mask = np.asarray(load_pgm(tmp_path / "m.mask.pgm")) > 0.5
    assert mask.sum() == 2048 and not np.any(px[~mask])


def test_mask_idempotent_on_observed(tmp_path, image, capsys):
    run(capsys, "mask", image, tmp_path / "a.pgm")
    run(capsys, "mask", tmp_path / "a.pgm", tmp_path / "b.pgm")
    a, b = (np.asarray(load_pgm(tmp_path / n)) for n in ("a.pgm", "b.pgm"))
    mask = np.asarray(load_pgm(tmp_path / "a.mask.pgm")) > 0.5
    np.testing.assert_array_equal(a[mask], b[mask])


def test_mask_rejects_non_pgm(tmp_path, capsys):
    bad = tmp_path / "x.pgm"
    bad.write_bytes(b"GIF89a")
    code, _, err = run(capsys, "mask", bad, tmp_path / "y.pgm")
    assert code == 2 and "byte offset" in err


@pytest.mark.parametrize("mode", ["perturbed", "dr"])
def test_zero_gain_modes_match_baseline(tmp_path, image, capsys, mode):
    run(capsys, "mask", image, tmp_path / "m.pgm")
    run(capsys, "interpolate", tmp_path / "m.pgm", tmp_path / "base.pgm", "--mode", "baseline")
    code, out, _ = run(capsys, "interpolate", tmp_path / "m.pgm", tmp_path / "o.pgm", "--mode", mode)
    assert code == 0 and json.loads(out)["mode"] == mode
    a, b = (np.asarray(load_pgm(tmp_path / n)) for n in ("o.pgm", "base.pgm"))
    assert np.max(np.abs(a - b)) <= 1e-9


def test_interpolate_truth_reports_metric_pair(tmp_path, image, capsys):
    run(capsys, "mask", image, tmp_path / "m.pgm")
    model = tmp_path / "model.json"
    save_model(InterpModel(gain_l=0.1), model)
    code, out, _ = run(capsys, "interpolate", tmp_path / "m.pgm", tmp_path / "o.pgm",
                       "--model", model, "--truth", image, "--threads", 2,
                       "--patch-size", 32, "--stride", 24)
    report = json.loads(out)
    assert code == 0
    psnr_s, ssim_s = report["psnr_ssim"].split(" | ")
    assert float(psnr_s) == pytest.approx(report["psnr"], abs=0.01)
    assert float(ssim_s) == pytest.approx(report["ssim"], abs=1e-4)
    observed = np.asarray(load_pgm(tmp_path / "m.mask.pgm")) > 0.5
    np.testing.assert_array_equal(np.asarray(load_pgm(tmp_path / "o.pgm"))[observed],
                                  np.asarray(load_pgm(tmp_path / "m.pgm"))[observed])


def test_interpolate_solver_failure_exit_code(tmp_path, image, capsys):
    run(capsys, "mask", image, tmp_path / "m.pgm")
    doc = model_to_dict(InterpModel(gain_p=0.5))
    doc["solver"]["bicg_schedule"] = {"alpha": [1e300] * 15, "beta": [1e300] * 15}
    model = tmp_path / "bad.json"
    model.write_text(json.dumps(doc))
    with np.errstate(all="ignore"):
        code, out, err = run(capsys, "interpolate", tmp_path / "m.pgm", tmp_path / "o.pgm",
                             "--model", model, "--mode", "perturbed")
    assert code == 1
    assert json.loads(out)["failures"] and "patch (0, 0) failed" in err


def test_interpolate_bad_model(tmp_path, image, capsys):
    model = tmp_path / "m.json"
    model.write_text('{"format": "gsv-interp-model"}')
    code, _, err = run(capsys, "interpolate", image, tmp_path / "o.pgm", "--model", model)
    assert code == 2 and "invalid model file" in err


def test_tune_end_to_end(tmp_path, capsys):
    for split, seeds in (("train", (1, 2)), ("val", (3,))):
        (tmp_path / split).mkdir()
        for s in seeds:
            save_pgm(tmp_path / split / f"{s}.pgm", _smooth(32, 32, s))
    run(capsys, "init-model", tmp_path / "in.json")
    code, out, _ = run(capsys, "tune", tmp_path / "train", tmp_path / "val", tmp_path / "in.json",
                       tmp_path / "out.json", "--epochs", 2, "--tunables", "s2",
                       "--patch-size", 16, "--patches-per-image", 2)
    assert code == 0
    summary = json.loads(out)
    tuned = load_model(tmp_path / "out.json")
    assert tuned.training["val_mse"] <= tuned.training["baseline_val_mse"]
    rows = list(csv.DictReader(open(summary["history"])))
    assert [int(r["epoch"]) for r in rows] == list(range(len(rows)))
    assert len(rows) == summary["epochs"] + 1


def test_tune_empty_train_dir(tmp_path, capsys):
    (tmp_path / "train").mkdir()
    (tmp_path / "val").mkdir()
    run(capsys, "init-model", tmp_path / "in.json")
    code, _, err = run(capsys, "tune", tmp_path / "train", tmp_path / "val",
                       tmp_path / "in.json", tmp_path / "out.json")
    assert code == 2 and "no PGM" in err


def test_tune_unknown_tunable(tmp_path, capsys):
    for split in ("train", "val"):
        (tmp_path / split).mkdir()
        save_pgm(tmp_path / split / "a.pgm", _smooth(16, 16))
    run(capsys, "init-model", tmp_path / "in.json")
    code, _, _ = run(capsys, "tune", tmp_path / "train", tmp_path / "val", tmp_path / "in.json",
                     tmp_path / "out.json", "--tunables", "warp")
    assert code == 2


def test_verify_passes(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0 and "FAIL" not in out
    assert out.count("PASS") == len(out.splitlines()) - 1


def test_metrics_line(tmp_path, image, capsys):
    code, out, _ = run(capsys, "metrics", image, image)
    assert code == 0 and out.strip() == "99.00 | 1.0000"


def test_bench_rows(capsys):
    code, out, _ = run(capsys, "bench", 16, 32, 64, "--repeats", 1)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [int(r["size"]) for r in rows] == [16, 32, 64]


def test_bench_iterations_deterministic():
    a = bench_rows([16, 32], repeats=1, seed=5)
    b = bench_rows([16, 32], repeats=1, seed=5)
    keys = ("bicg_iters", "dr_bicg_iters", "dr_cg_iters", "nnz")
    assert [[r[k] for k in keys] for r in a] == [[r[k] for k in keys] for r in b]


def test_bench_cost_scales_with_nnz():
    rows = bench_rows([64, 128, 256], repeats=3)
    nnz = np.log([r["nnz"] for r in rows])
    cost = np.log([r["bicg_ms_per_iter"] for r in rows])
    slope = np.polyfit(nnz, cost, 1)[0]
    assert 0.5 <= slope <= 1.5


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "interpolate", "a.pgm")[0] == 2
    assert run(capsys, "bench", 15)[0] == 2
    assert run(capsys, "interpolate", "missing.pgm", "o.pgm", "--threads", 0)[0] == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gsv_interp", "metrics", "nope.pgm", "nope.pgm"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2 and "nope.pgm" in proc.stderr and not proc.stdout
