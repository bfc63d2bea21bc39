"""Binary PPM (P6) images with a 2.2 display gamma applied on write."""

from __future__ import annotations

from pathlib import Path

import numpy as np

GAMMA = 2.2


def encode_ppm(img) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    if np.any(img < 0) or np.any(img > 1) or not np.all(np.isfinite(img)):
        raise ValueError("image values must lie in [0, 1]")
    h, w, _ = img.shape
    px = np.round(img ** (1.0 / GAMMA) * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def write_ppm(path, img) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_ppm(img))
    tmp.replace(path)


def read_ppm(path) -> np.ndarray:
    """Decode a P6 file back to linear [0, 1] values."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValueError("only 8-bit P6 files are supported")
    w, h = int(fields[1]), int(fields[2])
    px = np.frombuffer(data, np.uint8, w * h * 3, pos + 1).reshape(h, w, 3)
    return (px / 255.0) ** GAMMA
