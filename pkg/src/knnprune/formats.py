"""Binary trace and datastore files.

All integers are little-endian, floats are IEEE-754 binary32 little-endian.

Trace files (``.btrc`` build, ``.etrc`` eval) share a 28-byte header::

    magic[8] | version u32 | dim u32 | vocab_size u32 | record_count u64

followed by ``record_count`` fixed-size records:

* build: ``key f32[dim] | gold u32 | model_argmax u32``
* eval:  ``key f32[dim] | gold u32 | model_dist f32[vocab_size]``

Datastore files (``.plds``) have a 40-byte header::

    magic[8] "PLACDST1" | version u32 | dim u32 | vocab_size u32 |
    flags u32 (bit 0: margins present) | count u64 | margin_cap u32 | reserved u32

then the keys block ``f32[count*dim]``, values ``u32[count]``, the known
bitset (``ceil(count/8)`` bytes, LSB-first) and, when flagged, margins
``u32[count]``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import Datastore
from .errors import FormatError, InvalidArgument, StateError

BUILD_MAGIC = b"PLACTRB1"
EVAL_MAGIC = b"PLACTRE1"
STORE_MAGIC = b"PLACDST1"
VERSION = 1

_TRACE_HEADER = struct.Struct("<8sIIIQ")
_STORE_HEADER = struct.Struct("<8sIIIIQII")
TRACE_HEADER_SIZE = _TRACE_HEADER.size  # 28
STORE_HEADER_SIZE = _STORE_HEADER.size  # 40
_MARGINS_FLAG = 1
_DIST_TOL = 1e-5


@dataclass(frozen=True)
class TraceHeader:
    magic: bytes
    version: int
    dim: int
    vocab_size: int
    record_count: int

    def pack(self) -> bytes:
        return _TRACE_HEADER.pack(
            self.magic, self.version, self.dim, self.vocab_size, self.record_count
        )


@dataclass(frozen=True)
class BuildTraceRecord:
    key: np.ndarray
    gold: int
    model_argmax: int


@dataclass(frozen=True)
class EvalTraceRecord:
    key: np.ndarray
    gold: int
    model_dist: np.ndarray


def build_dtype(dim: int) -> np.dtype:
    return np.dtype([("key", "<f4", (dim,)), ("gold", "<u4"), ("model_argmax", "<u4")])


def eval_dtype(dim: int, vocab_size: int) -> np.dtype:
    return np.dtype([("key", "<f4", (dim,)), ("gold", "<u4"), ("model_dist", "<f4", (vocab_size,))])


class _Trace:
    """Columnar view over a record array; iterating yields record objects."""

    def __init__(self, header: TraceHeader, records: np.ndarray) -> None:
        self.header = header
        self.records = records

    def __len__(self) -> int:
        return int(self.records.shape[0])

    @property
    def keys(self) -> np.ndarray:
        return self.records["key"]

    @property
    def gold(self) -> np.ndarray:
        return self.records["gold"]

    def __eq__(self, other: object) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return self.header == other.header and self.records.tobytes() == other.records.tobytes()

    __hash__ = None  # type: ignore[assignment]


class BuildTrace(_Trace):
    @property
    def model_argmax(self) -> np.ndarray:
        return self.records["model_argmax"]

    def __iter__(self) -> Iterator[BuildTraceRecord]:
        for r in self.records:
            yield BuildTraceRecord(r["key"].copy(), int(r["gold"]), int(r["model_argmax"]))

    @classmethod
    def from_arrays(cls, keys, gold, model_argmax, vocab_size: int) -> "BuildTrace":
        keys = np.asarray(keys, dtype=np.float32)
        n, dim = keys.shape
        recs = np.empty(n, dtype=build_dtype(dim))
        recs["key"] = keys
        recs["gold"] = gold
        recs["model_argmax"] = model_argmax
        header = TraceHeader(BUILD_MAGIC, VERSION, dim, vocab_size, n)
        trace = cls(header, recs)
        _validate_build(trace)
        return trace


class EvalTrace(_Trace):
    @property
    def model_dist(self) -> np.ndarray:
        return self.records["model_dist"]

    def __iter__(self) -> Iterator[EvalTraceRecord]:
        for r in self.records:
            yield EvalTraceRecord(r["key"].copy(), int(r["gold"]), r["model_dist"].copy())

    @classmethod
    def from_arrays(cls, keys, gold, model_dist) -> "EvalTrace":
        keys = np.asarray(keys, dtype=np.float32)
        model_dist = np.asarray(model_dist, dtype=np.float32)
        n, dim = keys.shape
        vocab_size = model_dist.shape[1]
        recs = np.empty(n, dtype=eval_dtype(dim, vocab_size))
        recs["key"] = keys
        recs["gold"] = gold
        recs["model_dist"] = model_dist
        header = TraceHeader(EVAL_MAGIC, VERSION, dim, vocab_size, n)
        trace = cls(header, recs)
        _validate_eval(trace)
        return trace


def _validate_common(trace: _Trace, error=InvalidArgument) -> None:
    h = trace.header
    if trace.records.shape[0] != h.record_count:
        raise error(f"header declares {h.record_count} records, got {trace.records.shape[0]}")
    if len(trace) == 0:
        return
    keys = trace.keys
    if not np.all(np.isfinite(keys)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(keys), axis=1))[0])
        raise error(f"record {bad}: key contains NaN or Inf")
    if trace.gold.max() >= h.vocab_size:
        bad = int(np.flatnonzero(trace.gold >= h.vocab_size)[0])
        raise error(f"record {bad}: gold token out of vocabulary")


def _validate_build(trace: BuildTrace, error=InvalidArgument) -> None:
    _validate_common(trace, error)
    if len(trace) and trace.model_argmax.max() >= trace.header.vocab_size:
        bad = int(np.flatnonzero(trace.model_argmax >= trace.header.vocab_size)[0])
        raise error(f"record {bad}: model_argmax token out of vocabulary")


def _validate_eval(trace: EvalTrace, error=InvalidArgument) -> None:
    _validate_common(trace, error)
    if len(trace) == 0:
        return
    dist = trace.model_dist.astype(np.float64)
    bad = (dist < 0).any(axis=1) | ~np.all(np.isfinite(dist), axis=1)
    bad |= np.abs(dist.sum(axis=1) - 1.0) > _DIST_TOL
    if bad.any():
        raise error(f"record {int(np.flatnonzero(bad)[0])}: model_dist is not a probability vector")


def _check_header_for(header: TraceHeader, magic: bytes) -> None:
    if header.magic != magic:
        raise InvalidArgument(f"header magic must be {magic!r}")
    if header.version != VERSION:
        raise InvalidArgument(f"header version must be {VERSION}")


def _coerce_build(header: TraceHeader, records) -> BuildTrace:
    if isinstance(records, BuildTrace):
        recs = records.records
    elif isinstance(records, np.ndarray):
        recs = records
    else:
        items = list(records)
        recs = np.empty(len(items), dtype=build_dtype(header.dim))
        for i, r in enumerate(items):
            if np.shape(r.key) != (header.dim,):
                raise InvalidArgument(f"record {i}: key dimension mismatch")
            recs[i] = (r.key, r.gold, r.model_argmax)
    if recs.dtype != build_dtype(header.dim):
        raise InvalidArgument("record layout does not match header dimension")
    trace = BuildTrace(header, recs)
    _validate_build(trace)
    return trace


def _coerce_eval(header: TraceHeader, records) -> EvalTrace:
    if isinstance(records, EvalTrace):
        recs = records.records
    elif isinstance(records, np.ndarray):
        recs = records
    else:
        items = list(records)
        recs = np.empty(len(items), dtype=eval_dtype(header.dim, header.vocab_size))
        for i, r in enumerate(items):
            if np.shape(r.key) != (header.dim,) or np.shape(r.model_dist) != (header.vocab_size,):
                raise InvalidArgument(f"record {i}: dimension mismatch")
            recs[i] = (r.key, r.gold, r.model_dist)
    if recs.dtype != eval_dtype(header.dim, header.vocab_size):
        raise InvalidArgument("record layout does not match header dimensions")
    trace = EvalTrace(header, recs)
    _validate_eval(trace)
    return trace


def _write_atomic(path, chunks: Iterable[bytes]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)
    os.replace(tmp, path)


def write_build_trace(path, header: TraceHeader, records) -> None:
    """Write a ``.btrc`` file. ``records`` may be a BuildTrace, record array or iterable."""
    _check_header_for(header, BUILD_MAGIC)
    trace = _coerce_build(header, records)
    _write_atomic(path, [header.pack(), trace.records.tobytes()])


def write_eval_trace(path, header: TraceHeader, records) -> None:
    """Write a ``.etrc`` file."""
    _check_header_for(header, EVAL_MAGIC)
    trace = _coerce_eval(header, records)
    _write_atomic(path, [header.pack(), trace.records.tobytes()])


def _read_trace_header(fh, magic: bytes) -> TraceHeader:
    raw = fh.read(TRACE_HEADER_SIZE)
    if len(raw) < TRACE_HEADER_SIZE:
        raise FormatError(f"file too short for a {TRACE_HEADER_SIZE}-byte header", len(raw))
    header = TraceHeader(*_TRACE_HEADER.unpack(raw))
    if header.magic != magic:
        raise FormatError(f"bad magic {header.magic!r}, expected {magic!r}", 0)
    if header.version != VERSION:
        raise FormatError(f"unsupported version {header.version}", 8)
    if header.dim < 1:
        raise FormatError("dimension must be positive", 12)
    if header.vocab_size < 2:
        raise FormatError("vocab_size must be at least 2", 16)
    return header


def _read_records(fh, header: TraceHeader, dtype: np.dtype, file_size: int) -> np.ndarray:
    rec = dtype.itemsize
    body = file_size - TRACE_HEADER_SIZE
    complete = body // rec
    if complete < header.record_count:
        offset = TRACE_HEADER_SIZE + complete * rec
        raise FormatError(
            f"truncated: header declares {header.record_count} records of {rec} bytes, "
            f"record {complete} is incomplete",
            offset,
        )
    end = TRACE_HEADER_SIZE + header.record_count * rec
    if file_size > end:
        raise FormatError(f"{file_size - end} trailing bytes after last record", end)
    data = fh.read(header.record_count * rec)
    return np.frombuffer(data, dtype=dtype, count=header.record_count).copy()


def read_build_trace(path) -> BuildTrace:
    """Read and validate a ``.btrc`` file; ``trace.header`` holds the header."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        header = _read_trace_header(fh, BUILD_MAGIC)
        recs = _read_records(fh, header, build_dtype(header.dim), size)
    trace = BuildTrace(header, recs)
    _validate_build(trace, FormatError)
    return trace


def read_eval_trace(path) -> EvalTrace:
    """Read and validate a ``.etrc`` file."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        header = _read_trace_header(fh, EVAL_MAGIC)
        recs = _read_records(fh, header, eval_dtype(header.dim, header.vocab_size), size)
    trace = EvalTrace(header, recs)
    _validate_eval(trace, FormatError)
    return trace


def iter_build_trace(path, chunk_records: int = 4096) -> tuple[TraceHeader, Iterator[BuildTraceRecord]]:
    """Stream a ``.btrc`` file without loading it whole.

    The file length is checked against the header before any record is
    yielded, so a lying ``record_count`` fails up front.
    """
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        header = _read_trace_header(fh, BUILD_MAGIC)
    dtype = build_dtype(header.dim)
    expected = TRACE_HEADER_SIZE + header.record_count * dtype.itemsize
    if size < expected:
        complete = (size - TRACE_HEADER_SIZE) // dtype.itemsize
        raise FormatError(
            f"truncated: record {complete} is incomplete",
            TRACE_HEADER_SIZE + complete * dtype.itemsize,
        )
    if size > expected:
        raise FormatError(f"{size - expected} trailing bytes after last record", expected)

    def gen() -> Iterator[BuildTraceRecord]:
        with open(path, "rb") as fh:
            fh.seek(TRACE_HEADER_SIZE)
            left = header.record_count
            while left:
                n = min(left, chunk_records)
                block = np.frombuffer(fh.read(n * dtype.itemsize), dtype=dtype)
                for r in block:
                    yield BuildTraceRecord(r["key"].copy(), int(r["gold"]), int(r["model_argmax"]))
                left -= n

    return header, gen()


def save_datastore(path, store: Datastore) -> None:
    """Write a frozen datastore to a ``.plds`` file."""
    if not store.frozen:
        raise StateError("only frozen datastores can be saved")
    n = len(store)
    flags = _MARGINS_FLAG if store.has_margins else 0
    header = _STORE_HEADER.pack(
        STORE_MAGIC, VERSION, store.dim, store.vocab_size, flags, n, store.margin_cap or 0, 0
    )
    chunks = [
        header,
        store.keys.astype("<f4").tobytes(),
        store.values.astype("<u4").tobytes(),
        np.packbits(store.known, bitorder="little").tobytes(),
    ]
    if store.has_margins:
        chunks.append(store.margins.astype("<u4").tobytes())
    _write_atomic(path, chunks)


def load_datastore(path) -> Datastore:
    """Read a ``.plds`` file into a frozen datastore."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        raw = fh.read(STORE_HEADER_SIZE)
        if len(raw) < STORE_HEADER_SIZE:
            raise FormatError(f"file too short for a {STORE_HEADER_SIZE}-byte header", len(raw))
        magic, version, dim, vocab_size, flags, n, cap, _ = _STORE_HEADER.unpack(raw)
        if magic != STORE_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {STORE_MAGIC!r}", 0)
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 8)
        if dim < 1 or vocab_size < 2:
            raise FormatError("invalid dimension or vocab_size", 12)
        if flags & ~_MARGINS_FLAG:
            raise FormatError(f"unknown flags {flags:#x}", 20)
        has_margins = bool(flags & _MARGINS_FLAG)
        if has_margins and cap < 1:
            raise FormatError("margins flagged but margin_cap is 0", 32)
        sizes = [n * dim * 4, n * 4, (n + 7) // 8] + ([n * 4] if has_margins else [])
        expected = STORE_HEADER_SIZE + sum(sizes)
        if size < expected:
            # Report where the first incomplete block starts.
            offset = STORE_HEADER_SIZE
            for s in sizes:
                if offset + s > size:
                    break
                offset += s
            raise FormatError(f"truncated datastore: expected {expected} bytes, file has {size}", offset)
        if size > expected:
            raise FormatError(f"{size - expected} trailing bytes", expected)
        keys = np.frombuffer(fh.read(sizes[0]), dtype="<f4").reshape(n, dim)
        values = np.frombuffer(fh.read(sizes[1]), dtype="<u4")
        known = np.unpackbits(
            np.frombuffer(fh.read(sizes[2]), dtype=np.uint8), count=n, bitorder="little"
        ).astype(bool)
        margins = np.frombuffer(fh.read(sizes[3]), dtype="<u4") if has_margins else None
    try:
        return Datastore.from_arrays(
            keys,
            values,
            known,
            vocab_size=vocab_size,
            margins=margins,
            margin_cap=cap if has_margins else None,
        )
    except InvalidArgument as exc:
        raise FormatError(f"corrupt datastore contents: {exc}") from None
