"""Binary checkpoint format.

::

    SEACO-CKPT v1\\n
    <name> <ndim> <d1> ... <dn>\\n      (one header per parameter, name-sorted)
    <prod(d) little-endian float32 values>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .numerics import ModelParams, Parameter

MAGIC = b"SEACO-CKPT v1\n"


class CheckpointError(ValueError):
    pass


def dumps(params: ModelParams) -> bytes:
    names = params.names()
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate parameter names")
    chunks = [MAGIC]
    for name in sorted(names):
        data = params[name].data
        header = " ".join([name, str(data.ndim), *map(str, data.shape)]) + "\n"
        chunks.append(header.encode("utf-8"))
        chunks.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return b"".join(chunks)


def loads(blob: bytes, trainable: bool = True) -> ModelParams:
    if not blob.startswith(MAGIC):
        first = blob.split(b"\n", 1)[0][:40]
        raise CheckpointError(f"bad magic/version at byte 0: {first!r}")
    pos = len(MAGIC)
    params = ModelParams()
    while pos < len(blob):
        end = blob.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"truncated header at byte {pos}")
        fields = blob[pos:end].decode("utf-8").split()
        try:
            name, ndim = fields[0], int(fields[1])
            shape = tuple(int(x) for x in fields[2:2 + ndim])
        except (IndexError, ValueError):
            raise CheckpointError(f"malformed header at byte {pos}") from None
        if len(shape) != ndim or len(fields) != 2 + ndim:
            raise CheckpointError(f"malformed header at byte {pos}")
        pos = end + 1
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError(f"truncated data for {name!r} at byte {pos}")
        values = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=pos)
        pos += nbytes
        if name in params:
            raise CheckpointError(f"duplicate parameter {name!r} ending at byte {pos}")
        params.add(Parameter(name, values.astype(np.float64).reshape(shape), trainable))
    return params


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(dumps(params))


def load_checkpoint(path, trainable: bool = True) -> ModelParams:
    return loads(Path(path).read_bytes(), trainable)
