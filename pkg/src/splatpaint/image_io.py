"""Binary PPM (P6) image read/write, bit-exact, 8-bit."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["read_ppm", "write_ppm", "to_u8", "from_u8"]


def to_u8(img: np.ndarray) -> np.ndarray:
    """Quantize a float image in [0, 1] to uint8 (round, clip)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def from_u8(data: np.ndarray) -> np.ndarray:
    return data.astype(np.float64) / 255.0


def write_ppm(path: Path | str, img: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] (or (H, W) grayscale) as P6."""
    u8 = to_u8(img)
    h, w = u8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def read_ppm(path: Path | str) -> np.ndarray:
    """Read a binary P6 file into an (H, W, 3) float image in [0, 1]."""
    data = Path(path).read_bytes()
    # header: magic, width, height, maxval; whitespace/comment separated
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return from_u8(raw.reshape(h, w, 3))
