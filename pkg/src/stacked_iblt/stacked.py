"""Stacked sketch: geometrically shrinking tables decoded in order.

Layout: with tau = c0*lg(1/delta) rounded up to a power of two and the
capacity n rounded likewise, the sketch holds single-row tables of
ceil(C*n*2^-i) columns while the expected remaining load stays above tau,
then groups of 2^i rows with ceil(C*tau*2^-i) columns. Decoding peels each
table once, in order: remove everything recovered so far, extract the
cells that hold exactly one remaining pair, move on. Success is verified
by cancellation: deleting the full recovered output from every table must
leave all-zero grids.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (BasicTable, CHECKSUM_CELL_BYTES, PLAIN_CELL_BYTES,
                   _pairs_to_arrays, _signed_to_arrays)
from .hashing import (MERSENNE61, KWiseHash, PowerHash, bucket_stream_id,
                      is_prime, next_prime_at_least)

DEFAULT_BIG_C = 8 * math.e
DEFAULT_C0 = 4.0
DEFAULT_KEY_PRIME = MERSENNE61          # 2^61-1 is itself prime

_MAX_Q_BITS = 128                       # serialized hash_sum field width


def default_independence(n: int, delta: float) -> int:
    """Smallest even k with 2^(-k/2) < delta / (4 * ceil(lg n)^2)."""
    lgn = max(math.ceil(math.log2(max(n, 2))), 1)
    return 2 * math.ceil(math.log2(4 * lgn * lgn / delta))


def checksum_modulus_bound(n: int, delta: float, big_c: float, p: int) -> int:
    """Modulus size needed for the subtraction guarantee at these params."""
    lg_inv = -math.log2(delta)
    factor = max(lg_inv * max(math.log2(lg_inv) if lg_inv > 0 else 0.0, 0.0), 1.0)
    return math.ceil(2.0 * big_c * factor / delta * (n ** 3) * p)


@functools.lru_cache(maxsize=64)
def default_checksum_modulus(n: int, delta: float, big_c: float, p: int) -> int:
    bound = checksum_modulus_bound(n, delta, big_c, p)
    if bound.bit_length() > _MAX_Q_BITS:
        raise ValueError(
            "guarantee bound for q exceeds 128 bits at these parameters; "
            "pass an explicit q")
    q = next_prime_at_least(max(bound, p + 1) | 1)
    if q.bit_length() > _MAX_Q_BITS:
        raise ValueError("no 128-bit prime at or above the q bound; pass an explicit q")
    return q


def _pow2_at_least(x: int) -> int:
    return 1 << max(x - 1, 0).bit_length()


def _ilog2(x: int) -> int:
    return x.bit_length() - 1


@dataclass(frozen=True)
class Params:
    """Sketch configuration; two sketches interoperate iff all fields match.

    n is the decode-capacity threshold, delta the target failure
    probability. big_c, c0 and k may be pushed below the provable regime
    for experiments; `meets_guarantee` reports whether the configuration
    is inside it. Checksum mode needs primes p < q; both get defaults
    (p = 2^61-1, q = smallest prime at the guarantee bound).
    """

    n: int
    delta: float
    big_c: float = DEFAULT_BIG_C
    c0: float = DEFAULT_C0
    k: int | None = None
    mode: str = "plain"
    p: int | None = None
    q: int | None = None
    master_seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("capacity n must be >= 1")
        if not (isinstance(self.delta, float) and math.isfinite(self.delta)
                and 0.0 < self.delta < 1.0):
            raise ValueError("delta must be a finite float in (0, 1)")
        if not (self.big_c > 0 and math.isfinite(self.big_c)):
            raise ValueError("big_c must be positive and finite")
        if not (self.c0 > 0 and math.isfinite(self.c0)):
            raise ValueError("c0 must be positive and finite")
        if self.mode not in ("plain", "checksum"):
            raise ValueError("mode must be 'plain' or 'checksum'")
        if not 0 <= self.master_seed < 1 << 64:
            raise ValueError("master_seed must fit in 64 bits")
        if self.k is None:
            object.__setattr__(self, "k", default_independence(self.n, self.delta))
        if self.k < 2 or self.k % 2:
            raise ValueError("hash independence k must be even and >= 2")
        if self.mode == "plain":
            if self.p is not None or self.q is not None:
                raise ValueError("p/q only apply to checksum mode")
            return
        if self.p is None:
            object.__setattr__(self, "p", DEFAULT_KEY_PRIME)
        if self.q is None:
            object.__setattr__(self, "q", default_checksum_modulus(
                self.n, self.delta, self.big_c, self.p))
        if self.p.bit_length() > 64:
            raise ValueError("p must fit in 64 bits (keys are 64-bit)")
        if not is_prime(self.p):
            raise ValueError("p must be prime")
        if not is_prime(self.q):
            raise ValueError("q must be prime")
        if not self.p < self.q:
            raise ValueError("need p < q")
        if self.q.bit_length() > _MAX_Q_BITS:
            raise ValueError("q must fit in 128 bits")

    @property
    def tau(self) -> int:
        """Crossover load c0*lg(1/delta), rounded up to a power of two."""
        raw = self.c0 * -math.log2(self.delta)
        return _pow2_at_least(max(math.ceil(raw), 2))

    @property
    def capacity(self) -> int:
        """n rounded up to a power of two; the layout is sized for this."""
        return _pow2_at_least(self.n)

    @property
    def checksum_bound(self) -> int | None:
        if self.mode != "checksum":
            return None
        return checksum_modulus_bound(self.n, self.delta, self.big_c, self.p)

    @property
    def meets_guarantee(self) -> bool:
        """True when every knob is inside the provably sufficient regime."""
        eps = 1e-9
        if self.big_c < DEFAULT_BIG_C - eps or self.c0 < DEFAULT_C0 - eps:
            return False
        if self.k < default_independence(self.n, self.delta):
            return False
        if self.mode == "checksum" and self.q < self.checksum_bound:
            return False
        return True


@dataclass(frozen=True)
class LayoutPlan:
    """Per-table dimensions; the first `single_count` tables have one row."""

    tables: tuple[tuple[int, int], ...]
    tau: int
    capacity: int
    single_count: int

    @property
    def total_cells(self) -> int:
        return sum(r * c for r, c in self.tables)

    def cell_bound(self, big_c: float) -> float:
        """Closed-form cap 2*C*n + C*tau*(lg tau + 1) on total cells."""
        return 2.0 * big_c * self.capacity + big_c * self.tau * (_ilog2(self.tau) + 1)


def plan_layout(params: Params) -> LayoutPlan:
    n2 = params.capacity
    tau = params.tau
    c = params.big_c
    dims = []
    if n2 >= tau:
        singles = _ilog2(n2) - _ilog2(tau)
        for i in range(singles):
            dims.append((1, math.ceil(c * n2 / (1 << i))))
        for i in range(_ilog2(tau)):
            dims.append((1 << i, math.ceil(c * tau / (1 << i))))
    else:
        singles = 0
        for i in range(_ilog2(tau) - _ilog2(n2), _ilog2(tau) + 1):
            dims.append((1 << i, math.ceil(c * tau / (1 << i))))
    return LayoutPlan(tuple(dims), tau, n2, singles)


@dataclass
class DecodeOutcome:
    """Result of listing a sketch.

    recovered_plus holds pairs present with net count +1, recovered_minus
    pairs with net count -1 (false deletions / the other side of a
    difference). `complete` means re-deleting the recovered output left
    every table zero; `inconsistent` means extraction contradicted itself
    (same pair on both sides, or one key with two values on a side).
    stage_recoveries records what each table stage newly produced.
    """

    recovered_plus: set = field(default_factory=set)
    recovered_minus: set = field(default_factory=set)
    complete: bool = False
    inconsistent: bool = False
    stage_recoveries: tuple = ()


class StackedSketch:
    """Ordered stack of peelable tables driven by one master seed."""

    __slots__ = ("params", "layout", "tables", "item_balance", "_canonical")

    def __init__(self, params: Params, _row_hash_factory=None):
        self.params = params
        self.layout = plan_layout(params)
        power = None
        if params.mode == "checksum":
            power = PowerHash(params.master_seed, params.p, params.q)
        if _row_hash_factory is None:
            def _row_hash_factory(table, row, cols):
                return KWiseHash(params.master_seed, params.k, cols,
                                 stream_id=bucket_stream_id(table, row))
            self._canonical = True
        else:
            self._canonical = False
        self.tables = []
        for t, (rows, cols) in enumerate(self.layout.tables):
            hashes = [_row_hash_factory(t, r, cols) for r in range(rows)]
            self.tables.append(BasicTable(rows, cols, hashes, power))
        self.item_balance = 0

    @property
    def checksum(self) -> PowerHash | None:
        return self.tables[0].checksum if self.tables else None

    # -- mutation ---------------------------------------------------------

    def insert(self, pairs) -> None:
        keys, values = _pairs_to_arrays(pairs)
        self.insert_arrays(keys, values)

    def insert_arrays(self, keys, values) -> None:
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        values = np.ascontiguousarray(values, dtype=np.uint64)
        self._scatter(keys, values, np.ones(keys.shape, dtype=np.int64))

    def delete(self, signed_pairs) -> None:
        signs, keys, values = _signed_to_arrays(signed_pairs)
        self.delete_arrays(signs, keys, values)

    def delete_pairs(self, pairs) -> None:
        keys, values = _pairs_to_arrays(pairs)
        self._scatter(keys, values, np.full(keys.shape, -1, dtype=np.int64))

    def delete_arrays(self, signs, keys, values) -> None:
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        values = np.ascontiguousarray(values, dtype=np.uint64)
        self._scatter(keys, values, -np.asarray(signs, dtype=np.int64))

    def _scatter(self, keys, values, weights, g_cache=None) -> None:
        if keys.size == 0:
            return
        gvals = None
        if self.params.mode == "checksum":
            gvals = _gvals(self.checksum, keys, g_cache)
        for tab in self.tables:
            tab._apply(keys, values, weights, gvals)
        self.item_balance += int(weights.sum())

    # -- queries ----------------------------------------------------------

    def subtract(self, other: "StackedSketch") -> "StackedSketch":
        """Cell-wise difference; params (seed included) must match exactly."""
        if not isinstance(other, StackedSketch):
            raise TypeError("expected a StackedSketch")
        if self.params != other.params:
            raise ValueError("sketch params differ; subtraction undefined")
        if not (self._canonical and other._canonical):
            raise ValueError("cannot subtract sketches built with injected hashes")
        out = StackedSketch.__new__(StackedSketch)
        out.params = self.params
        out.layout = self.layout
        out.tables = [a.subtract(b) for a, b in zip(self.tables, other.tables)]
        out.item_balance = self.item_balance - other.item_balance
        out._canonical = True
        return out

    def list_entries(self, in_place: bool = False) -> DecodeOutcome:
        """Staged peel over the tables, then verification by cancellation.

        With in_place=True the sketch itself is consumed: afterwards it
        holds the residual (all-zero exactly when decoding was complete).
        """
        checksum = self.params.mode == "checksum"
        g_cache: dict | None = {} if checksum else None
        plus: dict[int, int] = {}
        minus: dict[int, int] = {}
        inconsistent = False
        stage_new: list[tuple[tuple, tuple]] = []
        working: list[BasicTable] = []
        cum: list[tuple[int, int, int]] = []   # (sign, key, value) recovered so far
        for tab in self.tables:
            wt = tab if in_place else tab.copy()
            working.append(wt)
            _delete_signed(wt, cum, g_cache)
            if checksum:
                new_p, new_m = wt.list_entries(g_cache)
            else:
                new_p, new_m = wt.list_entries(), set()
            added_p, added_m = [], []
            for k, v in sorted(new_p):
                if k in plus:
                    if plus[k] != v:
                        inconsistent = True
                    continue
                if minus.get(k) == v:
                    inconsistent = True
                    continue
                plus[k] = v
                added_p.append((k, v))
                cum.append((1, k, v))
            for k, v in sorted(new_m):
                if k in minus:
                    if minus[k] != v:
                        inconsistent = True
                    continue
                if plus.get(k) == v:
                    inconsistent = True
                    continue
                minus[k] = v
                added_m.append((k, v))
                cum.append((-1, k, v))
            stage_new.append((tuple(added_p), tuple(added_m)))
        # Cancellation check: table i has stages < i removed already, so
        # removing the remaining suffix leaves original-minus-everything.
        suffix: list[tuple[int, int, int]] = []
        for i in range(len(working) - 1, -1, -1):
            suffix.extend((1, k, v) for k, v in stage_new[i][0])
            suffix.extend((-1, k, v) for k, v in stage_new[i][1])
            _delete_signed(working[i], suffix, g_cache)
        complete = all(wt.is_zero() for wt in working)
        return DecodeOutcome(
            recovered_plus=set(plus.items()),
            recovered_minus=set(minus.items()),
            complete=complete,
            inconsistent=inconsistent,
            stage_recoveries=tuple(stage_new),
        )

    def is_zero(self) -> bool:
        return all(t.is_zero() for t in self.tables)

    def cell_count(self) -> int:
        return self.layout.total_cells

    def memory_bits(self) -> int:
        width = CHECKSUM_CELL_BYTES if self.params.mode == "checksum" else PLAIN_CELL_BYTES
        return self.cell_count() * width * 8

    def copy(self) -> "StackedSketch":
        out = StackedSketch.__new__(StackedSketch)
        out.params = self.params
        out.layout = self.layout
        out.tables = [t.copy() for t in self.tables]
        out.item_balance = self.item_balance
        out._canonical = self._canonical
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, StackedSketch):
            return NotImplemented
        return (self.params == other.params
                and self.item_balance == other.item_balance
                and self.tables == other.tables)

    def __repr__(self):
        return (f"StackedSketch(n={self.params.n}, delta={self.params.delta}, "
                f"mode={self.params.mode}, tables={len(self.tables)})")


def _gvals(power: PowerHash, keys: np.ndarray, cache: dict | None) -> np.ndarray:
    if cache is None:
        return power.eval_batch(keys)
    out = np.empty(keys.shape, dtype=object)
    for i, k in enumerate(keys.tolist()):
        v = cache.get(k)
        if v is None:
            v = cache[k] = power.eval(k)
        out[i] = v
    return out


def _delete_signed(table: BasicTable, triples: list, g_cache: dict | None) -> None:
    if not triples:
        return
    signs = np.array([s for s, _, _ in triples], dtype=np.int64)
    keys = np.array([k for _, k, _ in triples], dtype=np.uint64)
    values = np.array([v for _, _, v in triples], dtype=np.uint64)
    gvals = None
    if table.checksum is not None:
        gvals = _gvals(table.checksum, keys, g_cache)
    table._apply(keys, values, -signs, gvals)
