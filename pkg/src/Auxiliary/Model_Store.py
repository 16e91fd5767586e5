"""
Versioned flat binary model file.

    magic        4 bytes   b"FATM"
    version      uint16 LE
    header_len   uint32 LE
    header       header_len bytes of UTF-8 JSON: layers, activation,
                 input_shape, n_classes, n_params, buffer names and sizes
    body         n_params little-endian float64 parameters, followed by
                 every buffer in header order, also little-endian float64
"""

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import TypeAdapter

from src.Auxiliary.Errors import ModelFileError
from src.Engine.Network import LayerSpec, Network

MAGIC = b"FATM"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_LAYERS = TypeAdapter(list[LayerSpec])


def save_model(net: Network, path: Union[str, Path]) -> Path:
    header = {
        "layers": net.describe(),
        "activation": net.activation.model_dump(),
        "input_shape": list(net.input_shape),
        "n_classes": net.n_classes,
        "n_params": net.n_params,
        "buffers": [[name, int(buf.size)] for name, buf in sorted(net.buffers.items())],
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    body = [np.ascontiguousarray(net.params, dtype="<f8").tobytes()]
    body += [np.ascontiguousarray(buf, dtype="<f8").tobytes() for _, buf in sorted(net.buffers.items())]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_PREFIX.pack(MAGIC, VERSION, len(encoded)) + encoded + b"".join(body))
    return path


def load_model(path: Union[str, Path]) -> Network:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise ModelFileError(f"{path}: file too short for a model header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported model file version {version}")
    start = _PREFIX.size
    header = json.loads(raw[start:start + header_len].decode("utf-8"))
    offset = start + header_len

    def _take(count: int) -> np.ndarray:
        nonlocal offset
        end = offset + 8 * count
        if end > len(raw):
            raise ModelFileError(f"{path}: body truncated at byte {len(raw)}")
        values = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64)
        offset = end
        return values

    params = _take(header["n_params"])
    buffers = {name: _take(size) for name, size in header["buffers"]}
    if offset != len(raw):
        raise ModelFileError(f"{path}: {len(raw) - offset} trailing bytes after the body")
    return Network(
        _LAYERS.validate_python(header["layers"]),
        header["input_shape"],
        header["n_classes"],
        activation=header["activation"],
        params=params,
        buffers=buffers,
        mode="test",
    )
