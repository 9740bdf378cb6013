"""Binary weight archive.

Layout, all integers little-endian uint32:

    magic  b"MSSW"
    version  (currently 1)
    count
    count entries of:
        name_len, name bytes (utf-8)
        four dimension integers
        raw float32 payload, prod(dims) elements

Weights are stored in 32-bit regardless of the model's compute dtype,
so the round trip is bit-exact for float32 models.
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MSSW"
VERSION = 1


def save_weights(model, path):
    """Write every model Variable, in the model's stable order."""
    chunks = [MAGIC]
    variables = list(model.variables())
    chunks.append(struct.pack("<II", VERSION, len(variables)))
    for v in variables:
        name = v.name.encode("utf-8")
        dims = v.value.shape
        if len(dims) != 4:
            raise FormatError(
                f"archive: {v.name} has {len(dims)} dims, format stores 4")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<4I", *dims))
        chunks.append(np.ascontiguousarray(v.value, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def _parse(blob):
    view = memoryview(blob)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"archive truncated while reading {what}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("archive: bad magic, not a weight file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"archive: version {version}, expected {VERSION}")
    entries = {}
    order = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        dims = struct.unpack("<4I", take(16, f"dims of {name}"))
        n = int(np.prod(dims))
        payload = take(4 * n, f"payload of {name}")
        if name in entries:
            raise FormatError(f"archive: duplicate entry {name}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(dims)
        order.append(name)
    if pos != len(view):
        raise FormatError(f"archive: {len(view) - pos} trailing bytes")
    return entries, order


def read_entries(path):
    """Parse an archive into {name: float32 array} without a model."""
    with open(path, "rb") as f:
        blob = f.read()
    entries, _ = _parse(blob)
    return entries


def load_weights(path, model):
    """Validate the whole archive against the model, then assign.

    Any name or shape mismatch raises with the full list of problems
    and leaves the model untouched.
    """
    with open(path, "rb") as f:
        blob = f.read()
    entries, _ = _parse(blob)

    variables = list(model.variables())
    problems = []
    known = set()
    for v in variables:
        known.add(v.name)
        if v.name not in entries:
            problems.append(f"missing from archive: {v.name}")
        elif entries[v.name].shape != v.value.shape:
            problems.append(
                f"shape mismatch for {v.name}: archive "
                f"{entries[v.name].shape} vs model {v.value.shape}")
    for name in entries:
        if name not in known:
            problems.append(f"not in model: {name}")
    if problems:
        raise FormatError("archive does not match model:\n  "
                          + "\n  ".join(problems))
    for v in variables:
        v.value[...] = entries[v.name]
