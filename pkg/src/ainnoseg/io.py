"""Portable pixmap/graymap files, datasets on disk and ASEG1 checkpoints.

Label files store raw ADE20K-style ids: raw 0 means unlabeled and maps to the
ignore value 255, raw k maps to class k-1. The mapping is a bijection on
bytes, so save/load round-trips exactly.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, IntegrityError
from .augment import Sample

IGNORE_INDEX = 255
CKPT_MAGIC = b"ASEG1"
CKPT_VERSION = 1
DTYPE_F64 = 1


# --------------------------------------------------------------------------- #
# netpbm
# --------------------------------------------------------------------------- #
def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DataError("truncated netpbm header")
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read an 8-bit binary P5 (H,W) or P6 (H,W,3) file."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary P5/P6 file (magic {magic!r})")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise DataError(f"{path}: malformed header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit files are supported (maxval {maxval})")
    if width < 1 or height < 1:
        raise DataError(f"{path}: empty raster {width}x{height}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise DataError(f"{path}: missing whitespace after header")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    raster = buf[pos:]
    if len(raster) != expected:
        raise DataError(f"{path}: raster has {len(raster)} bytes, header implies {expected}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape((height, width, channels) if channels == 3 else (height, width))
    return arr.copy()


def write_pnm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise DataError(f"netpbm writer needs uint8 data, got {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise DataError(f"cannot write array of shape {arr.shape} as P5/P6")
    h, w = arr.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes())


def load_image(path) -> np.ndarray:
    img = read_pnm(path)
    if img.ndim != 3:
        raise DataError(f"{path}: expected a P6 colour image")
    return img


def save_image(path, img: np.ndarray) -> None:
    if img.ndim != 3:
        raise DataError(f"image must be (H,W,3), got {img.shape}")
    write_pnm(path, img)


def raw_to_labels(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.int16) - 1).astype(np.uint8)  # 0 wraps to 255


def labels_to_raw(labels: np.ndarray) -> np.ndarray:
    return (labels.astype(np.int16) + 1).astype(np.uint8)  # 255 wraps to 0


def load_labels(path, num_classes: int | None = None) -> np.ndarray:
    raw = read_pnm(path)
    if raw.ndim != 2:
        raise DataError(f"{path}: expected a P5 label map")
    labels = raw_to_labels(raw)
    if num_classes is not None:
        bad = (labels != IGNORE_INDEX) & (labels >= num_classes)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise DataError(f"{path}: class {labels[y, x]} at ({y}, {x}) exceeds {num_classes} classes")
    return labels


def save_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError(f"label map must be 2-D, got {labels.shape}")
    write_pnm(path, labels_to_raw(labels.astype(np.uint8)))


# --------------------------------------------------------------------------- #
# dataset directories: images/<id>.ppm + labels/<id>.pgm
# --------------------------------------------------------------------------- #
def image_ids(root) -> list[str]:
    return sorted(p.stem for p in (Path(root) / "images").glob("*.ppm"))


def load_dataset(root, num_classes: int | None = None, labeled: bool = True) -> list[Sample]:
    root = Path(root)
    ids = image_ids(root)
    if not ids:
        raise DataError(f"{root}: no images/*.ppm files")
    out = []
    for sid in ids:
        img = load_image(root / "images" / f"{sid}.ppm")
        if labeled:
            lbl = load_labels(root / "labels" / f"{sid}.pgm", num_classes)
            if lbl.shape != img.shape[:2]:
                raise DataError(f"{sid}: image {img.shape[:2]} and labels {lbl.shape} differ in size")
        else:
            lbl = np.full(img.shape[:2], IGNORE_INDEX, dtype=np.uint8)
        out.append(Sample(img, lbl, sid))
    return out


def save_dataset(root, samples, with_labels: bool = True) -> None:
    root = Path(root)
    for s in samples:
        save_image(root / "images" / f"{s.id}.ppm", s.image)
        if with_labels:
            save_labels(root / "labels" / f"{s.id}.pgm", s.labels)


def load_label_dir(root, num_classes: int | None = None) -> dict[str, np.ndarray]:
    root = Path(root)
    sub = root / "labels" if (root / "labels").is_dir() else root
    return {p.stem: load_labels(p, num_classes) for p in sorted(sub.glob("*.pgm"))}


# --------------------------------------------------------------------------- #
# checkpoints
# --------------------------------------------------------------------------- #
def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def encode_checkpoint(state: dict[str, np.ndarray]) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack("<BI", DTYPE_F64, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + _checksum(body)


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(blob) < len(CKPT_MAGIC) + 16 or blob[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise IntegrityError(f"{source}: not an ASEG1 checkpoint")
    body, digest = blob[:-8], blob[-8:]
    if _checksum(body) != digest:
        raise IntegrityError(f"{source}: checksum mismatch")
    pos = len(CKPT_MAGIC)
    version, count = struct.unpack_from("<II", body, pos)
    pos += 8
    if version != CKPT_VERSION:
        raise IntegrityError(f"{source}: unsupported checkpoint version {version}")
    state: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + klen].decode("utf-8")
            pos += klen
            dtype, rank = struct.unpack_from("<BI", body, pos)
            pos += 5
            if dtype != DTYPE_F64:
                raise IntegrityError(f"{source}: entry {name!r} has unknown dtype tag {dtype}")
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            nbytes = 8 * int(np.prod(dims))
            if pos + nbytes > len(body):
                raise IntegrityError(f"{source}: entry {name!r} payload truncated")
            if name in state:
                raise IntegrityError(f"{source}: duplicate entry {name!r}")
            state[name] = np.frombuffer(body, dtype="<f8", count=nbytes // 8, offset=pos).reshape(dims).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise IntegrityError(f"{source}: truncated entry table") from exc
    if pos != len(body):
        raise IntegrityError(f"{source}: {len(body) - pos} trailing bytes")
    return state


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_checkpoint(state))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise IntegrityError(f"checkpoint {path} does not exist")
    return decode_checkpoint(path.read_bytes(), str(path))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
