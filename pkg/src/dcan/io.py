"""File formats: IMASK masks, PMAP probability maps, binary PPM/PGM images,
scene manifests and the evaluation/ranking CSVs."""

from __future__ import annotations

import csv
import math
import os

import numpy as np

PMAP_MAGIC = "PMAP v1"
IMASK_MAGIC = "IMASK v1"


class FormatError(ValueError):
    """A file does not follow its declared format."""


# --- IMASK ------------------------------------------------------------------------

def write_imask(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError(f"mask must be 2-D, got shape {labels.shape}")
    if labels.size and labels.min() < 0:
        raise FormatError("mask labels must be non-negative")
    h, w = labels.shape
    lines = [f"{IMASK_MAGIC} {w} {h}"]
    lines += [" ".join(str(int(v)) for v in row) for row in labels]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_imask(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if header[:2] != IMASK_MAGIC.split() or len(header) != 4:
            raise FormatError(f"{path}: missing '{IMASK_MAGIC} <width> <height>' header")
        w, h = int(header[2]), int(header[3])
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != w:
                raise FormatError(f"{path}:{lineno}: expected {w} values, got {len(vals)}")
            rows.append([int(v) for v in vals])
    if len(rows) != h:
        raise FormatError(f"{path}: expected {h} rows, got {len(rows)}")
    labels = np.array(rows, dtype=np.int64).reshape(h, w)
    if labels.size and labels.min() < 0:
        raise FormatError(f"{path}: negative label")
    return labels


# --- PMAP -------------------------------------------------------------------------

def write_pmap(path, p_o: np.ndarray, p_c: np.ndarray) -> None:
    p_o, p_c = np.asarray(p_o, dtype="<f8"), np.asarray(p_c, dtype="<f8")
    if p_o.shape != p_c.shape or p_o.ndim != 2:
        raise FormatError(f"maps must be equal 2-D planes, got {p_o.shape} and {p_c.shape}")
    h, w = p_o.shape
    with open(path, "wb") as fh:
        fh.write(f"{PMAP_MAGIC} {w} {h}\n".encode("ascii"))
        fh.write(p_o.tobytes())
        fh.write(p_c.tobytes())


def read_pmap(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        payload = fh.read()
    if header[:2] != PMAP_MAGIC.split() or len(header) != 4:
        raise FormatError(f"{path}: missing '{PMAP_MAGIC} <width> <height>' header")
    w, h = int(header[2]), int(header[3])
    if len(payload) != 2 * 8 * w * h:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {16 * w * h}")
    planes = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(2, h, w)
    return planes[0], planes[1]


# --- PPM / PGM --------------------------------------------------------------------

def _read_netpbm(path, magic: bytes):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} netpbm file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte before the raster
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    return w, h, data[pos:]


def read_ppm(path) -> np.ndarray:
    """Binary P6 image as a (3, H, W) float array in [0, 1]."""
    w, h, raster = _read_netpbm(path, b"P6")
    if len(raster) != 3 * w * h:
        raise FormatError(f"{path}: raster holds {len(raster)} bytes, expected {3 * w * h}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    """Binary P5 image as an (H, W) float array in [0, 1]."""
    w, h, raster = _read_netpbm(path, b"P5")
    if len(raster) != w * h:
        raise FormatError(f"{path}: raster holds {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def _to_bytes(arr) -> bytes:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes()


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"expected a (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_to_bytes(image.transpose(1, 2, 0)))


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError(f"expected an (H, W) image, got {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_to_bytes(image))


# --- manifests and CSVs -----------------------------------------------------------

def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for scene_id, seed in entries:
            fh.write(f"{scene_id} {seed}\n")


def read_manifest(path) -> list[tuple[str, int]]:
    entries = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'scene_id seed'")
            entries.append((parts[0], int(parts[1])))
    return entries


REPORT_HEADER = ["image", "f1", "precision", "recall", "object_dice", "object_hausdorff"]


def write_report(path, rows, total) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(REPORT_HEADER)
        for r in list(rows) + [total]:
            out.writerow([r.name] + [repr(float(v)) for v in
                                     (r.f1, r.precision, r.recall, r.object_dice, r.object_hausdorff)])


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_HEADER:
            raise FormatError(f"{path}: header must be {','.join(REPORT_HEADER)}")
        return [{k: (v if k == "image" else float(v)) for k, v in row.items()} for row in reader]


SCORE_HEADER = ["team", "f1_a", "f1_b", "dice_a", "dice_b", "haus_a", "haus_b"]
RANKING_HEADER = ["team", "f1_a", "f1_b", "dice_a", "dice_b", "haus_a", "haus_b", "sum_score", "final_rank"]


def read_scores(path) -> dict:
    """Team score table; keeps file order."""
    table = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != SCORE_HEADER:
            raise FormatError(f"{path}: header must be {','.join(SCORE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items()}
            team = row["team"]
            if not team or team in table:
                raise FormatError(f"{path}:{lineno}: missing or duplicate team name {team!r}")
            try:
                vals = {k: float(row[k]) for k in SCORE_HEADER[1:]}
            except ValueError:
                raise FormatError(f"{path}:{lineno}: every score column needs a number") from None
            if not all(math.isfinite(v) for v in vals.values()):
                raise FormatError(f"{path}:{lineno}: scores must be finite")
            table[team] = vals
    if not table:
        raise FormatError(f"{path}: no teams")
    return table


def write_ranking(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(RANKING_HEADER)
        for r in rows:
            out.writerow([r.team, *r.ranks, r.sum_score, r.final_rank])


def list_with_suffix(directory, suffix: str) -> list[str]:
    return sorted(f for f in os.listdir(directory) if f.endswith(suffix))
