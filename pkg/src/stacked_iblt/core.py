"""One peelable table: a rows x cols grid of summed cells.

Every item touches each row exactly once, at the bucket its row hash
assigns. A cell accumulates the key sum and value sum in Z_(2^64)
(wrapping uint64), a signed item count, and, in checksum mode, the sum of
power-hash values in Z_q. All mutations are batch-oriented: one numpy
scatter-add per field per call.

Keys live in [0, 2^61-1); checksum mode further requires key < p.
Values are arbitrary uint64.
"""

from __future__ import annotations

import numpy as np

from .hashing import MERSENNE61, KWiseHash, PowerHash, eval_poly_rows

PLAIN_CELL_BYTES = 24       # key_sum + value_sum + count
CHECKSUM_CELL_BYTES = 40    # + 128-bit hash_sum


class BasicTable:
    """Grid of cells with one hash per row; plain or checksum mode."""

    __slots__ = ("rows", "cols", "hashes", "checksum",
                 "key_sum", "value_sum", "count", "hash_sum", "_coeff_matrix")

    def __init__(self, rows: int, cols: int, hashes, checksum: PowerHash | None = None):
        if rows < 1 or cols < 1:
            raise ValueError("need rows >= 1 and cols >= 1")
        hashes = tuple(hashes)
        if len(hashes) != rows:
            raise ValueError(f"hash vector has {len(hashes)} entries for {rows} rows")
        for h in hashes:
            if h.gamma != cols:
                raise ValueError("row hash range does not match column count")
        self.rows = rows
        self.cols = cols
        self.hashes = hashes
        self.checksum = checksum
        self.key_sum = np.zeros((rows, cols), dtype=np.uint64)
        self.value_sum = np.zeros((rows, cols), dtype=np.uint64)
        self.count = np.zeros((rows, cols), dtype=np.int64)
        self.hash_sum = np.zeros((rows, cols), dtype=object) if checksum else None
        # All-KWiseHash tables evaluate every row in one Horner sweep.
        if hashes and all(isinstance(h, KWiseHash) for h in hashes) and \
                len({h.independence for h in hashes}) == 1:
            self._coeff_matrix = np.stack([h._coeffs_u64 for h in hashes])
        else:
            self._coeff_matrix = None

    @property
    def mode(self) -> str:
        return "checksum" if self.checksum is not None else "plain"

    def bucket_rows(self, keys: np.ndarray) -> np.ndarray:
        """(rows, n) bucket indices for a batch of keys."""
        if self._coeff_matrix is not None:
            return eval_poly_rows(self._coeff_matrix, keys, self.cols)
        return np.stack([np.asarray(h.eval_batch(keys), dtype=np.uint64) for h in self.hashes])

    # -- mutation ---------------------------------------------------------

    def insert(self, pairs) -> None:
        keys, values = _pairs_to_arrays(pairs)
        self.insert_arrays(keys, values)

    def insert_arrays(self, keys: np.ndarray, values: np.ndarray) -> None:
        self._apply(keys, values, np.ones(keys.shape, dtype=np.int64))

    def delete(self, signed_pairs) -> None:
        """Remove sign-weighted contributions; pairs are (sign, key, value)."""
        signs, keys, values = _signed_to_arrays(signed_pairs)
        self.delete_arrays(signs, keys, values)

    def delete_pairs(self, pairs) -> None:
        """Unsigned delete: every pair removed with sign +1."""
        keys, values = _pairs_to_arrays(pairs)
        self._apply(keys, values, np.full(keys.shape, -1, dtype=np.int64))

    def delete_arrays(self, signs: np.ndarray, keys: np.ndarray, values: np.ndarray) -> None:
        self._apply(keys, values, -np.asarray(signs, dtype=np.int64))

    def _apply(self, keys, values, weights, gvals=None) -> None:
        # weights w in {+1,-1}: each pair contributes (w*k, w*v, w, w*g(k)).
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        values = np.ascontiguousarray(values, dtype=np.uint64)
        if keys.size == 0:
            return
        if int(keys.max()) >= MERSENNE61:
            raise ValueError("key out of domain [0, 2^61-1)")
        if self.checksum is not None and int(keys.max()) >= self.checksum.key_bound:
            raise ValueError("checksum mode requires key < p")
        buckets = self.bucket_rows(keys)
        offs = (np.arange(self.rows, dtype=np.uint64) * np.uint64(self.cols))[:, None]
        flat = buckets + offs
        neg = weights < 0
        kd = np.where(neg, np.uint64(0) - keys, keys)
        vd = np.where(neg, np.uint64(0) - values, values)
        np.add.at(self.key_sum.reshape(-1), flat, kd[None, :])
        np.add.at(self.value_sum.reshape(-1), flat, vd[None, :])
        np.add.at(self.count.reshape(-1), flat, weights[None, :])
        if self.checksum is not None:
            if gvals is None:
                gvals = self.checksum.eval_batch(keys)
            hs = self.hash_sum.reshape(-1)
            np.add.at(hs, flat, (gvals * weights)[None, :])
            touched = np.unique(flat)
            hs[touched] %= self.checksum.modulus

    # -- queries ----------------------------------------------------------

    def list_entries(self, g_cache: dict | None = None):
        """Best-effort singleton extraction.

        Plain mode returns a set of (key, value) taken from count==1 cells.
        Checksum mode returns (plus, minus): cells with count +-1 whose
        hash sum matches the power hash of the (sign-corrected) key sum,
        negation meaning the group inverse in Z_(2^64) and Z_q.
        """
        cnt = self.count.reshape(-1)
        if self.checksum is None:
            idx = np.nonzero(cnt == 1)[0]
            ks = self.key_sum.reshape(-1)[idx]
            vs = self.value_sum.reshape(-1)[idx]
            ok = ks < np.uint64(MERSENNE61)   # a multi-key residue can leave the domain
            return {(int(k), int(v)) for k, v in zip(ks[ok], vs[ok])}
        idx = np.nonzero(np.abs(cnt) == 1)[0]
        ks = self.key_sum.reshape(-1)[idx]
        vs = self.value_sum.reshape(-1)[idx]
        hs = self.hash_sum.reshape(-1)[idx]
        neg = cnt[idx] < 0
        kk = np.where(neg, np.uint64(0) - ks, ks)
        vv = np.where(neg, np.uint64(0) - vs, vs)
        g = self.checksum
        if g_cache is None:
            g_cache = {}
        plus, minus = set(), set()
        for j in range(idx.size):
            key = int(kk[j])
            if key >= g.key_bound:
                continue
            want = int(hs[j]) if not neg[j] else (g.modulus - int(hs[j])) % g.modulus
            got = g_cache.get(key)
            if got is None:
                got = g_cache[key] = g.eval(key)
            if got == want:
                (minus if neg[j] else plus).add((key, int(vv[j])))
        return plus, minus

    def subtract(self, other: "BasicTable") -> "BasicTable":
        """Cell-wise difference; both tables must be built compatibly."""
        self._check_compatible(other)
        out = BasicTable(self.rows, self.cols, self.hashes, self.checksum)
        out.key_sum = self.key_sum - other.key_sum
        out.value_sum = self.value_sum - other.value_sum
        out.count = self.count - other.count
        if self.checksum is not None:
            out.hash_sum = (self.hash_sum - other.hash_sum) % self.checksum.modulus
        return out

    def _check_compatible(self, other: "BasicTable") -> None:
        if not isinstance(other, BasicTable):
            raise TypeError("expected a BasicTable")
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("table dimensions differ")
        if self.hashes != other.hashes:
            raise ValueError("row hashes differ; tables were not built compatibly")
        if self.checksum != other.checksum:
            raise ValueError("checksum parameters differ")

    def is_zero(self) -> bool:
        if self.key_sum.any() or self.value_sum.any() or self.count.any():
            return False
        return self.hash_sum is None or not self.hash_sum.any()

    def copy(self) -> "BasicTable":
        out = BasicTable(self.rows, self.cols, self.hashes, self.checksum)
        out.key_sum = self.key_sum.copy()
        out.value_sum = self.value_sum.copy()
        out.count = self.count.copy()
        if self.hash_sum is not None:
            out.hash_sum = self.hash_sum.copy()
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, BasicTable):
            return NotImplemented
        if (self.rows, self.cols, self.hashes, self.checksum) != \
                (other.rows, other.cols, other.hashes, other.checksum):
            return False
        same = (np.array_equal(self.key_sum, other.key_sum)
                and np.array_equal(self.value_sum, other.value_sum)
                and np.array_equal(self.count, other.count))
        if not same:
            return False
        if self.hash_sum is None:
            return other.hash_sum is None
        return bool((self.hash_sum == other.hash_sum).all())

    def __repr__(self):
        return f"BasicTable({self.rows}x{self.cols}, mode={self.mode})"


def _pairs_to_arrays(pairs):
    items = list(pairs)
    if not items:
        return np.empty(0, dtype=np.uint64), np.empty(0, dtype=np.uint64)
    keys = np.array([k for k, _ in items], dtype=np.uint64)
    values = np.array([v for _, v in items], dtype=np.uint64)
    return keys, values


def _signed_to_arrays(signed_pairs):
    items = list(signed_pairs)
    if not items:
        z = np.empty(0, dtype=np.uint64)
        return np.empty(0, dtype=np.int64), z, z.copy()
    signs = np.array([s for s, _, _ in items], dtype=np.int64)
    if not np.isin(signs, (1, -1)).all():
        raise ValueError("signs must be +1 or -1")
    keys = np.array([k for _, k, _ in items], dtype=np.uint64)
    values = np.array([v for _, _, v in items], dtype=np.uint64)
    return signs, keys, values
