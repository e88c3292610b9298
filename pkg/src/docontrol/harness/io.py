"""Artifact persistence: CSV arrays, binary PGM images, manifests, metrics tables."""
import csv
import json
import os

import numpy as np

from .metrics import CSV_FIELDS


def save_array_csv(path, arr):
    arr = np.atleast_1d(np.asarray(arr, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(arr) if arr.ndim > 1 else arr[:, None]:
            writer.writerow([repr(float(v)) for v in row])


def load_array_csv(path):
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    arr = np.array(rows, dtype=float)
    return arr[:, 0] if arr.shape[1] == 1 else arr


def to_uint8(img, lo=-1.0, hi=1.0):
    scaled = (np.asarray(img, dtype=float) - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def write_pgm(path, img, lo=-1.0, hi=1.0):
    """Write a 2-D array as 8-bit binary PGM (P5), mapping [lo, hi] onto 0..255."""
    data = to_uint8(img, lo, hi)
    if data.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(buf):
    """Header tokens of a PGM file and the offset of the raster."""
    tokens, i = [], 0
    while len(tokens) < 4:
        while buf[i:i + 1].isspace():
            i += 1
        if buf[i:i + 1] == b"#":
            while buf[i:i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while not buf[j:j + 1].isspace():
            j += 1
        tokens.append(buf[i:j].decode("ascii"))
        i = j
    return tokens, i + 1


def read_pgm(path, lo=-1.0, hi=1.0):
    """Read an 8-bit binary PGM into floats on [lo, hi]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), offset = _pgm_tokens(buf)
    if magic != "P5" or int(maxval) > 255:
        raise ValueError(f"{path}: only 8-bit binary PGM (P5) is supported")
    w, h = int(w), int(h)
    raster = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=offset).reshape(h, w)
    return lo + raster.astype(float) * ((hi - lo) / int(maxval))


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_plain(data), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_metrics_csv(path, rows, key_fields=("run",)):
    """Write ``(keys, MetricsRecord)`` rows under a fixed header.

    Columns: the key fields, then ``mse, psnr, measurement_residual,
    terminal_cost, nfe``, then ``status``.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(key_fields) + list(CSV_FIELDS) + ["status"])
        for keys, rec, status in rows:
            cells = rec.row() if rec is not None else [""] * len(CSV_FIELDS)
            writer.writerow([str(k) for k in keys] + cells + [status])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
