import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcan import io
from dcan.metrics import ImageReport, rank_teams


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.integers(1, 12), w=st.integers(1, 12))
def test_imask_round_trip(tmp_path_factory, seed, h, w):
    d = tmp_path_factory.mktemp("imask")
    lab = np.random.default_rng(seed).integers(0, 300, size=(h, w))
    a, b = d / "a.imask", d / "b.imask"
    io.write_imask(a, lab)
    assert a.read_text().splitlines()[0] == f"IMASK v1 {w} {h}"
    back = io.read_imask(a)
    np.testing.assert_array_equal(back, lab)
    io.write_imask(b, back)
    assert a.read_bytes() == b.read_bytes()


def test_imask_errors(tmp_path):
    p = tmp_path / "m.imask"
    p.write_text("IMASK v1 3 2\n0 1 2\n0 1\n")
    with pytest.raises(io.FormatError, match=":3"):
        io.read_imask(p)
    p.write_text("MASK 3 2\n")
    with pytest.raises(io.FormatError):
        io.read_imask(p)
    p.write_text("IMASK v1 2 2\n0 1\n")
    with pytest.raises(io.FormatError, match="rows"):
        io.read_imask(p)
    with pytest.raises(io.FormatError):
        io.write_imask(p, np.array([[-1]]))


def test_pmap_round_trip_and_layout(tmp_path):
    rng = np.random.default_rng(0)
    p_o, p_c = rng.random((3, 5)), rng.random((3, 5))
    a, b = tmp_path / "a.pmap", tmp_path / "b.pmap"
    io.write_pmap(a, p_o, p_c)
    raw = a.read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert header == b"PMAP v1 5 3"
    np.testing.assert_array_equal(np.frombuffer(payload, "<f8")[:15].reshape(3, 5), p_o)
    o, c = io.read_pmap(a)
    np.testing.assert_array_equal(o, p_o)
    np.testing.assert_array_equal(c, p_c)
    io.write_pmap(b, o, c)
    assert b.read_bytes() == raw
    a.write_bytes(raw[:-1])
    with pytest.raises(io.FormatError):
        io.read_pmap(a)


def test_ppm_and_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(3, 4, 6)) / 255.0
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    io.write_ppm(a, img)
    np.testing.assert_array_equal(io.read_ppm(a), img)
    io.write_ppm(b, io.read_ppm(a))
    assert a.read_bytes() == b.read_bytes()
    grey = rng.integers(0, 256, size=(5, 2)) / 255.0
    io.write_pgm(tmp_path / "g.pgm", grey)
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "g.pgm"), grey)


def test_ppm_header_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    img = io.read_ppm(p)
    np.testing.assert_array_equal(img[:, 0, 0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(img[:, 0, 1], [0.0, 0.0, 1.0])
    p.write_bytes(b"P5\n2 1\n255\n" + bytes([1, 2]))
    with pytest.raises(io.FormatError):
        io.read_ppm(p)
    p.write_bytes(b"P6\n2 1\n65535\n")
    with pytest.raises(io.FormatError):
        io.read_ppm(p)


def test_manifest_round_trip(tmp_path):
    p = tmp_path / "manifest.txt"
    entries = [("scene_0000", 12), ("scene_0001", 2**62)]
    io.write_manifest(p, entries)
    assert io.read_manifest(p) == entries


def test_report_csv(tmp_path):
    p = tmp_path / "r.csv"
    rows = [ImageReport("a", 1.0, 1.0, 1.0, 0.9, 2.5)]
    io.write_report(p, rows, ImageReport("ALL", 0.5, 0.5, 0.5, 0.25, 3.0))
    lines = p.read_text().splitlines()
    assert lines[0] == "image,f1,precision,recall,object_dice,object_hausdorff"
    assert lines[-1].startswith("ALL,")
    back = io.read_report(p)
    assert back[0]["object_hausdorff"] == 2.5 and back[1]["image"] == "ALL"


def test_scores_and_ranking_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("team,f1_a,f1_b,dice_a,dice_b,haus_a,haus_b\nA,0.9,0.8,0.9,0.8,40,100\nB,0.8,0.9,0.8,0.9,50,90\n")
    table = io.read_scores(p)
    assert list(table) == ["A", "B"]
    out = tmp_path / "r.csv"
    io.write_ranking(out, rank_teams(table))
    lines = out.read_text().splitlines()
    assert lines[0] == "team,f1_a,f1_b,dice_a,dice_b,haus_a,haus_b,sum_score,final_rank"
    assert lines[1] == "A,1,2,1,2,1,2,9,1"
    assert lines[2] == "B,2,1,2,1,2,1,9,1"


@pytest.mark.parametrize("body", [
    "team,f1_a\nA,1\n",
    "team,f1_a,f1_b,dice_a,dice_b,haus_a,haus_b\nA,x,1,1,1,1,1\n",
    "team,f1_a,f1_b,dice_a,dice_b,haus_a,haus_b\nA,1,1,1,1,1,1\nA,1,1,1,1,1,1\n",
    "team,f1_a,f1_b,dice_a,dice_b,haus_a,haus_b\nA,1,1,1,1,1\n",
    "team,f1_a,f1_b,dice_a,dice_b,haus_a,haus_b\n",
])
def test_bad_score_tables(tmp_path, body):
    p = tmp_path / "s.csv"
    p.write_text(body)
    with pytest.raises(io.FormatError):
        io.read_scores(p)
