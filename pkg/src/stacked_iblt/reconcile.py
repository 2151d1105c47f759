"""Set reconciliation over serialized sketches.

Two parties that agree on Params (seed included) each build a sketch of
their key-value set and exchange the bytes. Each side subtracts its own
sketch from the remote one and decodes the difference: pairs the remote
holds land in `missing_locally`, pairs only held locally in
`missing_remotely`. Wire size depends only on Params, never on set sizes.

Envelope layout (all little-endian)::

    magic "SIBL" | version u16 | mode u8 | k u32 | n u64 | master_seed u64
    delta f64 | big_c f64 | c0 f64 | p u64 | q u128 | layout_digest u64
    item_balance i64
    then per table, cells row-major, per cell:
    key_sum u64 | value_sum u64 | count i64 | hash_sum u128 (checksum mode)

delta travels as a binary64 float; every derived integer (tau, layout) is
recomputed from Params on receipt and checked against the 64-bit layout
digest, so a drifting recomputation can never silently desynchronize
peers. The digest is checked before any payload is touched.
"""

from __future__ import annotations

import hashlib
import math
import struct

import numpy as np

from .stacked import LayoutPlan, Params, StackedSketch, plan_layout

MAGIC = b"SIBL"
VERSION = 1

_HEADER = struct.Struct("<4sHBIQQdddQ16sQq")

_PLAIN_CELL = np.dtype([("k", "<u8"), ("v", "<u8"), ("c", "<i8")])
_CHECKSUM_CELL = np.dtype([("k", "<u8"), ("v", "<u8"), ("c", "<i8"),
                           ("h0", "<u8"), ("h1", "<u8")])

_MASK64 = (1 << 64) - 1


class EnvelopeError(ValueError):
    """Raised for malformed, corrupted, or incompatible envelopes."""


def layout_digest(layout: LayoutPlan) -> int:
    blob = struct.pack("<QQQQ", layout.tau, layout.capacity,
                       layout.single_count, len(layout.tables))
    blob += b"".join(struct.pack("<QQ", r, c) for r, c in layout.tables)
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def serialize(sketch: StackedSketch) -> bytes:
    """Deterministic byte encoding; header plus fixed-width cells."""
    if not sketch._canonical:
        raise ValueError("only sketches with seed-derived hashes serialize")
    p = sketch.params
    checksum_mode = p.mode == "checksum"
    header = _HEADER.pack(
        MAGIC, VERSION, 1 if checksum_mode else 0, p.k, p.n, p.master_seed,
        p.delta, p.big_c, p.c0,
        p.p or 0, (p.q or 0).to_bytes(16, "little"),
        layout_digest(sketch.layout), sketch.item_balance,
    )
    chunks = [header]
    for tab in sketch.tables:
        cells = tab.rows * tab.cols
        rec = np.empty(cells, dtype=_CHECKSUM_CELL if checksum_mode else _PLAIN_CELL)
        rec["k"] = tab.key_sum.reshape(-1)
        rec["v"] = tab.value_sum.reshape(-1)
        rec["c"] = tab.count.reshape(-1)
        if checksum_mode:
            hs = tab.hash_sum.reshape(-1)
            rec["h0"] = np.fromiter((int(x) & _MASK64 for x in hs), dtype=np.uint64, count=cells)
            rec["h1"] = np.fromiter((int(x) >> 64 for x in hs), dtype=np.uint64, count=cells)
        chunks.append(rec.tobytes())
    return b"".join(chunks)


def deserialize(data: bytes) -> StackedSketch:
    """Rebuild a sketch, rejecting corruption before reading the payload."""
    if len(data) < _HEADER.size:
        raise EnvelopeError("truncated envelope: header incomplete")
    (magic, version, mode_byte, k, n, master_seed, delta, big_c, c0,
     p_raw, q_raw, digest, balance) = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise EnvelopeError("bad magic; not a sketch envelope")
    if version != VERSION:
        raise EnvelopeError(f"unsupported envelope version {version}")
    if mode_byte not in (0, 1):
        raise EnvelopeError(f"unknown mode byte {mode_byte}")
    if not math.isfinite(delta):
        raise EnvelopeError("non-finite delta")
    mode = "checksum" if mode_byte else "plain"
    q = int.from_bytes(q_raw, "little")
    try:
        params = Params(n=n, delta=delta, big_c=big_c, c0=c0, k=k, mode=mode,
                        p=p_raw if mode_byte else None,
                        q=q if mode_byte else None,
                        master_seed=master_seed)
    except ValueError as exc:
        raise EnvelopeError(f"invalid parameters: {exc}") from exc
    layout = plan_layout(params)
    if layout_digest(layout) != digest:
        raise EnvelopeError("layout digest mismatch")
    cell_dtype = _CHECKSUM_CELL if mode_byte else _PLAIN_CELL
    want = _HEADER.size + layout.total_cells * cell_dtype.itemsize
    if len(data) < want:
        raise EnvelopeError("truncated envelope: payload incomplete")
    if len(data) > want:
        raise EnvelopeError("oversized envelope: trailing bytes")
    sketch = StackedSketch(params)
    sketch.item_balance = balance
    offset = _HEADER.size
    for tab in sketch.tables:
        cells = tab.rows * tab.cols
        rec = np.frombuffer(data, dtype=cell_dtype, count=cells, offset=offset)
        offset += cells * cell_dtype.itemsize
        shape = (tab.rows, tab.cols)
        tab.key_sum = rec["k"].reshape(shape).copy()
        tab.value_sum = rec["v"].reshape(shape).copy()
        tab.count = rec["c"].reshape(shape).astype(np.int64)
        if mode_byte:
            hs = rec["h0"].astype(object) + (rec["h1"].astype(object) << 64)
            tab.hash_sum = hs.reshape(shape)
    return sketch


def sketch_of(pairs, params: Params) -> StackedSketch:
    """Convenience: a fresh sketch holding `pairs`."""
    s = StackedSketch(params)
    s.insert(pairs)
    return s


def reconcile_local(local_pairs, remote_envelope: bytes, local_params: Params):
    """One side of the reconciliation protocol.

    Returns (missing_locally, missing_remotely, complete): pairs the remote
    party holds that we lack, pairs we hold that it lacks, and whether the
    difference decoded completely. Requires checksum mode: our deletions of
    pairs the remote never inserted are exactly the false-deletion case.
    """
    if local_params.mode != "checksum":
        raise ValueError("reconciliation requires checksum mode")
    remote = deserialize(remote_envelope)
    if remote.params != local_params:
        raise ValueError("remote sketch parameters do not match local ones")
    local = sketch_of(local_pairs, local_params)
    outcome = remote.subtract(local).list_entries(in_place=True)
    return outcome.recovered_plus, outcome.recovered_minus, outcome.complete
