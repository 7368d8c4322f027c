"""Portable float map (PFM) reader/writer.

Color images use the "PF" header, grayscale "Pf"; the scale line is fixed at
-1.0 (little-endian float32). Rows are stored bottom-to-top as in the
de-facto standard, so arrays are flipped on both read and write. Writing then
reading then writing again is byte-identical.
"""

import numpy as np


def write_pfm(path, img):
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError("PFM supports HxW or HxWx{1,3} float arrays")
    h, w, c = img.shape
    tag = b"PF" if c == 3 else b"Pf"
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: {path}")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        endian = "<f4" if scale < 0 else ">f4"  # this codec only writes -1.0
        data = np.frombuffer(f.read(w * h * channels * 4), dtype=endian)
    img = data.astype(np.float32).reshape(h, w, channels)
    img = np.flipud(img).copy()
    return img[:, :, 0] if channels == 1 else img
