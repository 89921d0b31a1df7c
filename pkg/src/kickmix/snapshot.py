"""Spectral snapshot files.

Binary layout (all little-endian)::

    16 bytes   magic b"KICKMIX SNAPSHOT"
    u32        format version (1)
    u32        length L of the convention tag
    L bytes    convention tag, UTF-8
    u32        n_max
    f64        nu
    f64        omega
    f64        time
    u32        record count R
    R records  (i32 n, i32 m, f64 re, f64 im) for 1 <= n <= n_max, 0 <= m <= n

The JSON form carries the same fields with floats written by ``repr`` so the
roundtrip is exact.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from kickmix.errors import ConfigurationError
from kickmix.harmonics import CONVENTION, Truncation, check_coeffs, truncation_of

MAGIC = b"KICKMIX SNAPSHOT"
VERSION = 1
_RECORD = struct.Struct("<iidd")


@dataclasses.dataclass(frozen=True, eq=False)
class Snapshot:
    coeffs: np.ndarray
    nu: float
    omega: float
    time: float
    convention: str = CONVENTION

    @property
    def n_max(self) -> int:
        return truncation_of(self.coeffs).n_max


def _records(coeffs: np.ndarray):
    n_max = truncation_of(coeffs).n_max
    for n in range(1, n_max + 1):
        for m in range(n + 1):
            c = coeffs[n, m]
            yield n, m, float(c.real), float(c.imag)


def to_bytes(snap: Snapshot) -> bytes:
    coeffs = check_coeffs(snap.coeffs)
    if coeffs.ndim != 2:
        raise ConfigurationError("snapshots hold a single state")
    tag = snap.convention.encode()
    recs = list(_records(coeffs))
    out = [
        MAGIC,
        struct.pack("<II", VERSION, len(tag)),
        tag,
        struct.pack("<Iddd", snap.n_max, snap.nu, snap.omega, snap.time),
        struct.pack("<I", len(recs)),
    ]
    out += [_RECORD.pack(*r) for r in recs]
    return b"".join(out)


def from_bytes(data: bytes) -> Snapshot:
    if data[:16] != MAGIC:
        raise ConfigurationError("not a snapshot file (bad magic)")
    pos = 16
    version, tag_len = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != VERSION:
        raise ConfigurationError(f"unsupported snapshot version {version}")
    tag = data[pos : pos + tag_len].decode()
    pos += tag_len
    n_max, nu, omega, time = struct.unpack_from("<Iddd", data, pos)
    pos += struct.calcsize("<Iddd")
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) != pos + count * _RECORD.size:
        raise ConfigurationError("snapshot length does not match its record count")
    coeffs = Truncation(n_max).zeros()
    for n, m, re, im in _RECORD.iter_unpack(data[pos:]):
        coeffs[n, m] = complex(re, im)
    return Snapshot(coeffs, nu, omega, time, tag)


def to_json(snap: Snapshot) -> str:
    doc = {
        "format": "kickmix-snapshot",
        "version": VERSION,
        "convention": snap.convention,
        "n_max": snap.n_max,
        "nu": repr(float(snap.nu)),
        "omega": repr(float(snap.omega)),
        "time": repr(float(snap.time)),
        "records": [[n, m, repr(re), repr(im)] for n, m, re, im in _records(check_coeffs(snap.coeffs))],
    }
    return json.dumps(doc, indent=1)


def from_json(text: str) -> Snapshot:
    doc = json.loads(text)
    if doc.get("format") != "kickmix-snapshot":
        raise ConfigurationError("not a snapshot document")
    coeffs = Truncation(int(doc["n_max"])).zeros()
    for n, m, re, im in doc["records"]:
        coeffs[n, m] = complex(float(re), float(im))
    return Snapshot(coeffs, float(doc["nu"]), float(doc["omega"]), float(doc["time"]), doc["convention"])


def save(snap: Snapshot, path: Path) -> Path:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(to_json(snap))
    else:
        path.write_bytes(to_bytes(snap))
    return path


def load(path: Path) -> Snapshot:
    path = Path(path)
    if path.suffix == ".json":
        return from_json(path.read_text())
    return from_bytes(path.read_bytes())
