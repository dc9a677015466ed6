"""On-disk formats: tensor dumps, PGM renderings, index files.

Tensor files carry one ASCII header line ``tensor f64 <d0> ... <dk>\\n``
followed by the raw little-endian 64-bit floats in row-major order.
Index files hold one ``<file> <identity> <camera>`` line per sample.
"""

from __future__ import annotations

import os

import numpy as np

HEADER_PREFIX = "tensor f64"


def write_tensor(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    header = " ".join([HEADER_PREFIX] + [str(d) for d in arr.shape]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        fields = header.split()
        if fields[:2] != HEADER_PREFIX.split():
            raise ValueError(f"{path}: bad tensor header {header!r}")
        shape = tuple(int(d) for d in fields[2:])
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(fh.read(), dtype="<f8", count=count)
    return data.reshape(shape).astype(np.float64)


def write_pgm(path, arr2d):
    """8-bit binary PGM of a [0,1] map: values x 255, rounded."""
    arr2d = np.asarray(arr2d, dtype=np.float64)
    if arr2d.ndim != 2:
        raise ValueError(f"PGM rendering needs a 2-D map, got shape {arr2d.shape}")
    pix = np.clip(np.rint(arr2d * 255.0), 0, 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def write_index(path, rows):
    with open(path, "w", encoding="ascii") as fh:
        for fname, ident, cam in rows:
            fh.write(f"{fname} {int(ident)} {int(cam)}\n")


def read_index(path):
    rows = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fname, ident, cam = line.split()
            rows.append((fname, int(ident), int(cam)))
    return rows


def save_split(split_dir, images, ids, cams):
    """One tensor file per sample plus an index file."""
    os.makedirs(split_dir, exist_ok=True)
    rows = []
    for i in range(len(ids)):
        fname = f"sample{i:05d}.tsr"
        write_tensor(os.path.join(split_dir, fname), images[i])
        rows.append((fname, ids[i], cams[i]))
    write_index(os.path.join(split_dir, "index.txt"), rows)


def load_split(split_dir):
    rows = read_index(os.path.join(split_dir, "index.txt"))
    images = np.stack([read_tensor(os.path.join(split_dir, f)) for f, _, _ in rows])
    ids = np.array([r[1] for r in rows], dtype=np.int64)
    cams = np.array([r[2] for r in rows], dtype=np.int64)
    return images, ids, cams


def load_embedding_dump(emb_path, index_path):
    """(N,D) embeddings with ids/cams from a companion index file."""
    emb = read_tensor(emb_path)
    if emb.ndim != 2:
        raise ValueError(f"embedding dump must be 2-D, got shape {emb.shape}")
    rows = read_index(index_path)
    if len(rows) != emb.shape[0]:
        raise ValueError(
            f"index rows ({len(rows)}) do not match embeddings ({emb.shape[0]})"
        )
    ids = np.array([r[1] for r in rows], dtype=np.int64)
    cams = np.array([r[2] for r in rows], dtype=np.int64)
    return emb, ids, cams
