"""Binary containers for checkpoints and datasets, plus PGM/PPM images.

Container layout::

    magic (8 bytes) | header length (uint64 LE) | JSON header | float64 LE payload

Headers are written with sorted keys and no whitespace, so saving the same
object twice produces identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from pathlib import Path

import numpy as np

from dmtlab.errors import CompatibilityError, ParseError, ValidationError
from dmtlab.models import Architecture, DenoiserModel, TranslatorModel, parameter_shapes
from dmtlab.tensor import Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DMTCKPT1"
FORMAT_VERSION = 1
_PREFIX = 16


def canonical_json(data) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_hash(config: dict | None) -> str:
    """sha256 of the canonical JSON form of a training configuration."""
    return hashlib.sha256(canonical_json(config or {})).hexdigest()


def write_container(path, magic: bytes, header: dict, arrays: list[np.ndarray]) -> None:
    header_bytes = canonical_json(header)
    path = Path(path)
    with path.open("wb") as f:
        f.write(magic)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_container(path, magic: bytes) -> tuple[dict, np.ndarray, int]:
    """Return the header, the flat float64 payload and its byte offset."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX:
        raise ParseError(f"File is {len(raw)} bytes, shorter than the {_PREFIX}-byte prefix", offset=len(raw))
    if raw[:8] != magic:
        raise ParseError(f"Bad magic {raw[:8]!r}, expected {magic!r}", offset=0)
    (header_len,) = struct.unpack("<Q", raw[8:_PREFIX])
    end = _PREFIX + header_len
    if end > len(raw):
        raise ParseError(f"Header claims {header_len} bytes but the file ends early", offset=len(raw))
    try:
        header = json.loads(raw[_PREFIX:end].decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ParseError("Header is not UTF-8", offset=_PREFIX + e.start) from None
    except json.JSONDecodeError as e:
        raise ParseError(f"Header is not valid JSON: {e.msg}", offset=_PREFIX + e.pos) from None
    if not isinstance(header, dict):
        raise ParseError("Header is not a JSON object", offset=_PREFIX)
    payload = raw[end:]
    if len(payload) % 8:
        raise ParseError("Payload length is not a multiple of 8", offset=end + len(payload) - len(payload) % 8)
    return header, np.frombuffer(payload, dtype="<f8").astype(np.float64), end


def check_version(header: dict, what: str) -> None:
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CompatibilityError(f"{what} has format version {version}, this build reads version {FORMAT_VERSION}")


def split_payload(payload: np.ndarray, shapes: list[tuple[int, ...]], payload_offset: int) -> list[np.ndarray]:
    sizes = [int(np.prod(s)) for s in shapes]
    if sum(sizes) != payload.size:
        got = payload.size * 8
        raise ParseError(
            f"Payload holds {payload.size} values, expected {sum(sizes)}",
            offset=payload_offset + min(got, sum(sizes) * 8),
        )
    out, start = [], 0
    for shape, size in zip(shapes, sizes):
        out.append(payload[start : start + size].reshape(shape).copy())
        start += size
    return out


# --- checkpoints ---


def save_checkpoint(
    model: DenoiserModel | TranslatorModel,
    path,
    schedule: dict | None = None,
    train_config: dict | None = None,
    optimizer: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write parameters in descriptor order with their metadata.

    Arguments left as None fall back to what the model's ``meta`` carries
    (a loaded checkpoint re-saves to identical bytes).
    """
    meta = model.meta
    train_config = train_config if train_config is not None else meta.get("train_config")
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": model.descriptor(),
        "schedule": schedule if schedule is not None else meta.get("schedule"),
        "train_config": train_config,
        "train_config_hash": config_hash(train_config),
        "optimizer": optimizer if optimizer is not None else meta.get("optimizer"),
        "extra": extra if extra is not None else meta.get("extra", {}),
    }
    write_container(path, CHECKPOINT_MAGIC, header, [p.data for p in model.params.values()])
    logger.info("saved %s checkpoint (%d parameters) to %s", model.arch.role, model.parameter_count, path)


def load_checkpoint(path, expect_role: str | None = None, expect_arch: Architecture | None = None):
    """Load a DenoiserModel or TranslatorModel; nothing is built on failure."""
    header, payload, offset = read_container(path, CHECKPOINT_MAGIC)
    check_version(header, f"Checkpoint {path}")
    try:
        arch = Architecture.from_dict(header["architecture"])
    except (KeyError, TypeError, ValidationError) as e:
        raise CompatibilityError(f"Checkpoint {path} has an unusable architecture descriptor: {e}") from None
    if expect_role is not None and arch.role != expect_role:
        raise CompatibilityError(f"Checkpoint {path} holds a {arch.role}, expected a {expect_role}")
    if expect_arch is not None and arch != expect_arch:
        raise CompatibilityError(f"Checkpoint {path} architecture {arch} does not match {expect_arch}")
    recorded = [(name, tuple(shape)) for name, shape in header["architecture"].get("parameters", [])]
    expected = [(name, shape) for name, shape, _ in parameter_shapes(arch)]
    if recorded != expected:
        raise CompatibilityError(f"Checkpoint {path} parameter layout does not match its descriptor")
    arrays = split_payload(payload, [shape for _, shape in expected], offset)
    params = {name: Tensor(arr, requires_grad=True) for (name, _), arr in zip(expected, arrays)}
    meta = {k: header.get(k) for k in ("schedule", "train_config", "train_config_hash", "optimizer", "extra")}
    cls = DenoiserModel if arch.role == "denoiser" else TranslatorModel
    return cls(arch, params, meta)


# --- PGM / PPM ---


def to_pixels(img: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> uint8 with a linear map."""
    return np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_pixels(pix: np.ndarray) -> np.ndarray:
    return pix.astype(np.float64) / 127.5 - 1.0


def write_pnm(path, img) -> None:
    """Write a [1, h, w] image as binary PGM or a [3, h, w] image as PPM."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValidationError(f"PGM/PPM export needs 1 or 3 channels, got shape {img.shape}")
    c, h, w = img.shape
    magic = b"P5" if c == 1 else b"P6"
    pixels = to_pixels(img).transpose(1, 2, 0)
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM (maxval 255) into a [c, h, w] array in [-1, 1]."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("Truncated PGM/PPM header", offset=pos)
        fields.append(raw[start:pos])
    pos += 1
    magic, w, h, maxval = fields
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"Unsupported image type {magic!r}", offset=0)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ParseError("Non-numeric PGM/PPM header field", offset=pos) from None
    if maxval != 255:
        raise ParseError(f"Only maxval 255 is supported, got {maxval}", offset=pos)
    c = 1 if magic == b"P5" else 3
    body = raw[pos : pos + c * h * w]
    if len(body) != c * h * w:
        raise ParseError(f"Image body holds {len(body)} bytes, expected {c * h * w}", offset=pos + len(body))
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(h, w, c).transpose(2, 0, 1)
    return from_pixels(pixels)
