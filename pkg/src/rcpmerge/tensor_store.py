"""Named tensor collections and the single-file checkpoint container.

The container layout follows the common safetensors convention:

* bytes 0-7: unsigned 64-bit little-endian header length N
* bytes 8..8+N: a JSON object mapping tensor names to
  ``{"dtype": "F32"|"F64", "shape": [...], "data_offsets": [begin, end]}``
  (offsets relative to the end of the header), plus an optional
  ``"__metadata__"`` string-to-string object
* remaining bytes: raw little-endian payloads at the declared offsets

Writes are canonical: tensors are serialized in lexicographic name order
with gap-free payload ranges and a deterministic header encoding, so two
saves of the same map produce byte-identical files.  Element-wise algebra
(`combine`, `scale`) accumulates in float64 and stores results back at the
input dtype, touching one tensor of each operand at a time.
"""

from __future__ import annotations

import json
import struct
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import CheckpointError, NonFiniteError, ValidationError

_DTYPE_TAGS = {"F32": np.dtype("<f4"), "F64": np.dtype("<f8")}
_TAG_FOR_DTYPE = {np.dtype(np.float32): "F32", np.dtype(np.float64): "F64"}
_HEADER_ALIGN = 8


def _check_array(name: str, arr: np.ndarray) -> np.ndarray:
    if arr.dtype not in _TAG_FOR_DTYPE:
        raise ValidationError(
            f"tensor {name!r} has dtype {arr.dtype}; only float32/float64 are supported"
        )
    # note: ascontiguousarray would flatten 0-d arrays to shape (1,)
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


class TensorMap:
    """Immutable ordered mapping of unique names to dense tensors.

    Iteration order is always the lexicographic order of names.  Arrays
    are stored read-only; operations return new maps.
    """

    def __init__(
        self,
        entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]] = (),
        metadata: Mapping[str, str] | None = None,
    ) -> None:
        items = entries.items() if isinstance(entries, Mapping) else list(entries)
        store: dict[str, np.ndarray] = {}
        for name, arr in items:
            if not isinstance(name, str):
                raise ValidationError(f"tensor name must be a string, got {type(name).__name__}")
            if name in store:
                raise ValidationError(f"duplicate tensor name {name!r}")
            a = _check_array(name, np.asarray(arr))
            a = a.copy() if a.flags.writeable else a
            a.flags.writeable = False
            store[name] = a
        self._entries = {k: store[k] for k in sorted(store)}
        meta = dict(metadata or {})
        for k, v in meta.items():
            if not (isinstance(k, str) and isinstance(v, str)):
                raise ValidationError("metadata must map strings to strings")
        self._metadata = meta

    @property
    def metadata(self) -> dict[str, str]:
        return dict(self._metadata)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._entries.items())

    def with_metadata(self, metadata: Mapping[str, str]) -> "TensorMap":
        return TensorMap(self._entries, metadata)

    def equal(self, other: "TensorMap") -> bool:
        """Element-wise bit equality, including metadata."""
        if self.names != other.names or self._metadata != other._metadata:
            return False
        return all(
            a.dtype == other[n].dtype
            and a.shape == other[n].shape
            and a.tobytes() == other[n].tobytes()
            for n, a in self.items()
        )


def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"tensor {name!r} contains non-finite values")


def _validate_match(a: TensorMap, b: TensorMap) -> None:
    if a.names != b.names:
        only_a = sorted(set(a.names) - set(b.names))
        only_b = sorted(set(b.names) - set(a.names))
        raise ValidationError(
            f"tensor name sets differ: only in first={only_a}, only in second={only_b}"
        )
    for n in a.names:
        if a[n].shape != b[n].shape:
            raise ValidationError(
                f"shape mismatch for {n!r}: {list(a[n].shape)} vs {list(b[n].shape)}"
            )
        if a[n].dtype != b[n].dtype:
            raise ValidationError(
                f"dtype mismatch for {n!r}: {a[n].dtype.name} vs {b[n].dtype.name}"
            )


def combine(a: TensorMap, b: TensorMap, op: str) -> TensorMap:
    """Element-wise add/sub/hadamard of two maps with identical layouts.

    Arithmetic runs at float64; results are stored at the input dtype.
    Metadata of the first operand is carried through.
    """
    if op not in ("add", "sub", "hadamard"):
        raise ValidationError(f"unknown combine op {op!r}")
    _validate_match(a, b)
    out = {}
    for n, x in a.items():
        x64 = x.astype(np.float64, copy=False)
        y64 = b[n].astype(np.float64, copy=False)
        if op == "add":
            r = x64 + y64
        elif op == "sub":
            r = x64 - y64
        else:
            r = x64 * y64
        out[n] = r.astype(x.dtype)
    return TensorMap(out, a.metadata)


def scale(a: TensorMap, c: float) -> TensorMap:
    """Element-wise multiplication by a scalar, accumulated at float64."""
    out = {n: (x.astype(np.float64, copy=False) * float(c)).astype(x.dtype) for n, x in a.items()}
    return TensorMap(out, a.metadata)


# ---------------------------------------------------------------------------
# container I/O
# ---------------------------------------------------------------------------


def _encode_header(m: TensorMap) -> tuple[bytes, list[tuple[str, int, int]]]:
    header: dict = {}
    spans: list[tuple[str, int, int]] = []
    offset = 0
    for name, arr in m.items():
        nbytes = arr.nbytes
        end = offset + nbytes
        if end >= 2**64:
            raise CheckpointError(f"tensor {name!r} too large for the declared offset width")
        header[name] = {
            "dtype": _TAG_FOR_DTYPE[arr.dtype],
            "shape": list(arr.shape),
            "data_offsets": [offset, end],
        }
        spans.append((name, offset, end))
        offset = end
    if m.metadata:
        header["__metadata__"] = m.metadata
    raw = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )
    pad = (-(8 + len(raw))) % _HEADER_ALIGN
    return raw + b" " * pad, spans


def save_checkpoint(m: TensorMap, path: str) -> None:
    """Write ``m`` to ``path``; the result round-trips bit-exactly."""
    header, spans = _encode_header(m)
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for name, _, _ in spans:
                arr = m[name]
                fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path!r}: {e}") from e


class CheckpointReader:
    """Per-tensor streaming access to a checkpoint file."""

    def __init__(self, path: str, allow_nonfinite: bool = False) -> None:
        self._path = path
        self._allow_nonfinite = allow_nonfinite
        try:
            with open(path, "rb") as fh:
                prefix = fh.read(8)
                if len(prefix) < 8:
                    raise CheckpointError(f"{path!r}: malformed header (file shorter than 8 bytes)")
                (header_len,) = struct.unpack("<Q", prefix)
                raw = fh.read(header_len)
                if len(raw) < header_len:
                    raise CheckpointError(f"{path!r}: malformed header (truncated JSON)")
                fh.seek(0, 2)
                self._payload_size = fh.tell() - 8 - header_len
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint {path!r}: {e}") from e
        self._header_end = 8 + header_len
        self._index, self.metadata = self._parse_header(raw)

    def _parse_header(self, raw: bytes):
        def reject_dupes(pairs):
            d = {}
            for k, v in pairs:
                if k in d:
                    raise CheckpointError(f"{self._path!r}: duplicate name {k!r} in header")
                d[k] = v
            return d

        try:
            header = json.loads(raw.decode("utf-8"), object_pairs_hook=reject_dupes)
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{self._path!r}: malformed header ({e})") from e
        if not isinstance(header, dict):
            raise CheckpointError(f"{self._path!r}: malformed header (not a JSON object)")

        metadata = header.pop("__metadata__", {})
        if not (
            isinstance(metadata, dict)
            and all(isinstance(k, str) and isinstance(v, str) for k, v in metadata.items())
        ):
            raise CheckpointError(f"{self._path!r}: __metadata__ must map strings to strings")

        index: dict[str, tuple[np.dtype, tuple[int, ...], int, int]] = {}
        for name, entry in header.items():
            if (
                not isinstance(entry, dict)
                or entry.get("dtype") not in _DTYPE_TAGS
                or not isinstance(entry.get("shape"), list)
                or not isinstance(entry.get("data_offsets"), list)
                or len(entry["data_offsets"]) != 2
            ):
                raise CheckpointError(f"{self._path!r}: malformed header entry for {name!r}")
            shape = entry["shape"]
            if not all(isinstance(d, int) and d >= 0 for d in shape):
                raise CheckpointError(f"{self._path!r}: invalid shape for {name!r}: {shape}")
            dtype = _DTYPE_TAGS[entry["dtype"]]
            begin, end = entry["data_offsets"]
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            if not (isinstance(begin, int) and isinstance(end, int) and 0 <= begin <= end):
                raise CheckpointError(f"{self._path!r}: invalid data_offsets for {name!r}")
            if end - begin != count * dtype.itemsize:
                raise CheckpointError(
                    f"{self._path!r}: data range of {name!r} does not match its shape/dtype"
                )
            if end > self._payload_size:
                raise CheckpointError(f"{self._path!r}: truncated payload for tensor {name!r}")
            index[name] = (dtype, tuple(shape), begin, end)

        spans = sorted((b, e, n) for n, (_, _, b, e) in index.items())
        for (b1, e1, n1), (b2, e2, n2) in zip(spans, spans[1:]):
            if b2 < e1:
                raise CheckpointError(
                    f"{self._path!r}: overlapping data ranges for {n1!r} and {n2!r}"
                )
        return {k: index[k] for k in sorted(index)}, metadata

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._index)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._index[name][1]

    def read(self, name: str) -> np.ndarray:
        dtype, shape, begin, end = self._index[name]
        with open(self._path, "rb") as fh:
            fh.seek(self._header_end + begin)
            buf = fh.read(end - begin)
        if len(buf) != end - begin:
            raise CheckpointError(f"{self._path!r}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        if not self._allow_nonfinite:
            _require_finite(name, arr)
        arr.flags.writeable = False
        return arr

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self._index:
            yield name, self.read(name)


def load_checkpoint(path: str, allow_nonfinite: bool = False) -> TensorMap:
    """Load a full checkpoint into memory (header-declared shapes/dtypes)."""
    reader = CheckpointReader(path, allow_nonfinite=allow_nonfinite)
    return TensorMap({name: arr for name, arr in reader}, reader.metadata)
