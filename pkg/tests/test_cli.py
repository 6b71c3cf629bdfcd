import csv
import subprocess
import sys

import numpy as np
import pytest

import challenge_tables as tables
from dcan import io
from dcan.cli import main

SMOKE_CONFIG = """
data.n_scenes = 3
data.seed = 5
train.max_iters = 200
train.seed = 1
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> make-labels -> train -> infer -> fuse -> eval with the desk network."""
    d = tmp_path_factory.mktemp("smoke")
    cfg = d / "smoke.cfg"
    cfg.write_text(SMOKE_CONFIG)
    data, seg = d / "data", d / "seg"
    seg.mkdir()
    assert main(["gen-data", "--config", str(cfg), str(data)]) == 0
    assert main(["make-labels", str(data / "scene_0000.imask"), str(d / "contour.imask"), "--radius", "3"]) == 0
    assert main(["train", "--config", str(cfg), str(data), str(d / "model.ckpt")]) == 0
    for name in io.list_with_suffix(data, ".ppm"):
        stem = name[:-4]
        assert main(["infer", str(d / "model.ckpt"), str(data / name), str(d / f"{stem}.pmap"),
                     "--tile", "64", "--stride", "32"]) == 0
        assert main(["fuse", str(d / f"{stem}.pmap"), str(seg / f"{stem}.imask")]) == 0
    assert main(["eval", str(seg), str(data), str(d / "report.csv")]) == 0
    return d


def test_gen_data_layout(pipeline):
    data = pipeline / "data"
    assert io.list_with_suffix(data, ".ppm") == ["scene_0000.ppm", "scene_0001.ppm", "scene_0002.ppm"]
    manifest = io.read_manifest(data / "manifest.txt")
    assert [m[0] for m in manifest] == ["scene_0000", "scene_0001", "scene_0002"]
    assert io.read_imask(data / "scene_0000.imask").shape == io.read_ppm(data / "scene_0000.ppm").shape[1:]


def test_make_labels_output(pipeline):
    from dcan.morphology import extract_contour_labels

    inst = io.read_imask(pipeline / "data" / "scene_0000.imask")
    contour = io.read_imask(pipeline / "contour.imask")
    assert set(np.unique(contour)) <= {0, 1}
    np.testing.assert_array_equal(contour, extract_contour_labels(inst, 3))


def test_report_is_well_formed(pipeline):
    with open(pipeline / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["image"] for r in rows] == ["scene_0000", "scene_0001", "scene_0002", "ALL"]
    for r in rows:
        for key in ("f1", "precision", "recall", "object_dice"):
            assert 0.0 <= float(r[key]) <= 1.0
        assert float(r["object_hausdorff"]) >= 0.0


def test_maps_are_probabilities(pipeline):
    p_o, p_c = io.read_pmap(pipeline / "scene_0000.pmap")
    assert p_o.shape == (128, 128)
    assert ((p_o >= 0) & (p_o <= 1) & (p_c >= 0) & (p_c <= 1)).all()


def test_commands_are_idempotent(pipeline, tmp_path):
    cfg = pipeline / "smoke.cfg"
    assert main(["gen-data", "--config", str(cfg), str(tmp_path / "data")]) == 0
    for name in ("scene_0001.ppm", "scene_0001.imask", "manifest.txt"):
        assert (tmp_path / "data" / name).read_bytes() == (pipeline / "data" / name).read_bytes()
    assert main(["train", "--config", str(cfg), str(tmp_path / "data"), str(tmp_path / "m.ckpt")]) == 0
    assert (tmp_path / "m.ckpt").read_bytes() == (pipeline / "model.ckpt").read_bytes()
    assert main(["infer", str(tmp_path / "m.ckpt"), str(pipeline / "data" / "scene_0000.ppm"),
                 str(tmp_path / "x.pmap")]) == 0
    assert (tmp_path / "x.pmap").read_bytes() == (pipeline / "scene_0000.pmap").read_bytes()


def test_objects_only_equals_zero_contour_plane(tmp_path):
    rng = np.random.default_rng(0)
    p_o = rng.random((40, 40))
    p_o[5:20, 5:35] = 0.9
    io.write_pmap(tmp_path / "m.pmap", p_o, rng.random((40, 40)))
    io.write_pmap(tmp_path / "z.pmap", p_o, np.zeros((40, 40)))
    assert main(["fuse", str(tmp_path / "m.pmap"), str(tmp_path / "a.imask"), "--objects-only",
                 "--min-area", "10"]) == 0
    assert main(["fuse", str(tmp_path / "z.pmap"), str(tmp_path / "b.imask"), "--min-area", "10"]) == 0
    assert (tmp_path / "a.imask").read_bytes() == (tmp_path / "b.imask").read_bytes()


def test_rank_on_published_scores(tmp_path):
    tables.write_csv(tmp_path / "scores.csv")
    assert main(["rank", str(tmp_path / "scores.csv"), str(tmp_path / "ranking.csv")]) == 0
    with open(tmp_path / "ranking.csv", newline="") as fh:
        rows = {r["team"]: r for r in csv.DictReader(fh)}
    assert rows["CUMedVision2"]["sum_score"] == "17" and rows["CUMedVision2"]["final_rank"] == "1"


def test_gradcheck_command(tmp_path, capsys):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("gradcheck.seeds = 1\ngradcheck.samples = 5\n")
    assert main(["gradcheck", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "model[seed=0]" in out


def test_config_reference_command(tmp_path):
    assert main(["config-reference", str(tmp_path / "ref.md")]) == 0
    assert "| `train.lr0` |" in (tmp_path / "ref.md").read_text()


@pytest.mark.parametrize("argv, code, kind", [
    (["eval", "missing_dir", "missing_dir", "r.csv"], 3, "FileNotFoundError"),
    (["make-labels", "missing.imask", "out.imask"], 3, "FileNotFoundError"),
    (["train", "--config", "bad.cfg", ".", "m.ckpt"], 5, "ConfigError"),
    (["fuse", "broken.pmap", "out.imask"], 4, "FormatError"),
    (["rank", "broken.csv", "out.csv"], 4, "FormatError"),
])
def test_failures_print_one_line(tmp_path, monkeypatch, capsys, argv, code, kind):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "bad.cfg").write_text("net.input_size = 64\nnet.wrong = 1\n")
    (tmp_path / "broken.pmap").write_bytes(b"PMAP v1 2 2\n\x00")
    (tmp_path / "broken.csv").write_text("who,what\n")
    assert main(argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and kind in err[0] and err[0].startswith(f"dcan {argv[0]}:")


def test_shape_mismatch_in_eval(tmp_path, capsys):
    (tmp_path / "seg").mkdir()
    (tmp_path / "gt").mkdir()
    io.write_imask(tmp_path / "seg" / "a.imask", np.zeros((3, 3), dtype=int))
    io.write_imask(tmp_path / "gt" / "a.imask", np.zeros((4, 3), dtype=int))
    assert main(["eval", str(tmp_path / "seg"), str(tmp_path / "gt"), str(tmp_path / "r.csv")]) == 6
    assert "ShapeError" in capsys.readouterr().err


def test_console_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "dcan.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-data" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "dcan.cli", "no-such-command"], capture_output=True, text=True)
    assert bad.returncode == 2
