"""Matrix container: one JSON header line, then little-endian float64 rows.

The header always carries ``shape``; the payload is the matrix in row-major
order. Used for fair transforms and fitted models.
"""

import json
from pathlib import Path

import numpy as np

from .exceptions import ValidationError


def write(path, header: dict, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    head = dict(header)
    head["shape"] = list(matrix.shape)
    line = json.dumps(head, sort_keys=True, separators=(",", ":"))
    with open(Path(path), "wb") as fh:
        fh.write(line.encode("utf-8") + b"\n")
        fh.write(matrix.tobytes(order="C"))


def read(path):
    with open(Path(path), "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
        shape = tuple(header["shape"])
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"{path}: malformed container header") from exc
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise ValidationError(
            f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    matrix = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return header, matrix
