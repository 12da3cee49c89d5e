"""Packed storage for batches of syndromes.

Syndromes are stored detector-major: row ``i`` of ``packed`` holds detector
``i`` for every shot, eight shots per byte, shot ``k`` in bit ``k % 8`` of
byte ``k // 8``.  Subset moments and parities then reduce to AND / XOR of a
few rows followed by a population count.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

_CHUNK_SHOTS = 1 << 16


def _pack_columns(dense: np.ndarray) -> np.ndarray:
    """(N, n) 0/1 array -> (n, ceil(N/8)) little-endian packed rows."""
    dense = np.asarray(dense)
    return np.packbits(dense.astype(bool, copy=False).T, axis=1, bitorder="little")


@dataclass(frozen=True, eq=False)
class SyndromeBatch:
    """``num_shots`` syndromes of ``num_detectors`` bits each.

    ``detectors_per_round`` records round framing when the detectors are laid
    out round by round (``num_detectors`` is then a multiple of it).
    ``basis`` is an optional free-form label such as ``"X"`` or ``"Z"``.
    """

    packed: np.ndarray
    num_shots: int
    detectors_per_round: int | None = None
    basis: str | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        packed = np.ascontiguousarray(self.packed, dtype=np.uint8)
        if packed.ndim != 2:
            raise DimensionError("packed syndromes must be a 2-d array")
        if packed.shape[1] != (self.num_shots + 7) // 8:
            raise DimensionError(
                f"packed rows hold {packed.shape[1]} bytes, expected {(self.num_shots + 7) // 8}"
            )
        tail = self.num_shots % 8
        if tail and packed.shape[0]:
            packed = packed.copy()
            packed[:, -1] &= np.uint8((1 << tail) - 1)
        packed.setflags(write=False)
        object.__setattr__(self, "packed", packed)
        dpr = self.detectors_per_round
        if dpr is not None and (dpr < 1 or packed.shape[0] % dpr):
            raise DimensionError(
                f"{packed.shape[0]} detectors are not a whole number of {dpr}-detector rounds"
            )

    @classmethod
    def from_dense(cls, dense, detectors_per_round=None, basis=None) -> "SyndromeBatch":
        dense = np.asarray(dense)
        if dense.ndim != 2:
            raise DimensionError("dense syndromes must have shape (shots, detectors)")
        if dense.size and not np.isin(dense, (0, 1)).all():
            raise ValueError("syndrome entries must be 0 or 1")
        return cls(_pack_columns(dense), dense.shape[0], detectors_per_round, basis)

    @classmethod
    def empty(cls, num_detectors: int, **kw) -> "SyndromeBatch":
        return cls(np.zeros((num_detectors, 0), dtype=np.uint8), 0, **kw)

    @classmethod
    def concatenate(cls, batches: Sequence["SyndromeBatch"]) -> "SyndromeBatch":
        batches = list(batches)
        if not batches:
            raise ValueError("nothing to concatenate")
        n = batches[0].num_detectors
        if any(b.num_detectors != n for b in batches):
            raise DimensionError("cannot concatenate batches with different detector counts")
        dense = np.concatenate([b.to_dense() for b in batches], axis=0)
        first = batches[0]
        bases = {b.basis for b in batches}
        return cls.from_dense(
            dense, first.detectors_per_round, first.basis if len(bases) == 1 else None
        )

    @property
    def num_detectors(self) -> int:
        return self.packed.shape[0]

    @property
    def num_rounds(self) -> int | None:
        if self.detectors_per_round is None:
            return None
        return self.num_detectors // self.detectors_per_round

    def __len__(self) -> int:
        return self.num_shots

    def to_dense(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Shots ``start:stop`` as an (shots, detectors) uint8 array."""
        stop = self.num_shots if stop is None else min(stop, self.num_shots)
        if start >= stop:
            return np.zeros((0, self.num_detectors), dtype=np.uint8)
        b0, b1 = start // 8, (stop + 7) // 8
        bits = np.unpackbits(self.packed[:, b0:b1], axis=1, bitorder="little")
        off = start - 8 * b0
        return np.ascontiguousarray(bits[:, off : off + stop - start].T)

    def iter_dense(self, chunk: int = _CHUNK_SHOTS):
        """Yield ``(start, dense_chunk)`` over the batch."""
        for s in range(0, self.num_shots, chunk):
            yield s, self.to_dense(s, s + chunk)

    def shot(self, k: int) -> np.ndarray:
        if not 0 <= k < self.num_shots:
            raise IndexError(k)
        return ((self.packed[:, k // 8] >> (k % 8)) & 1).astype(np.uint8)

    def select(self, start: int, stop: int) -> "SyndromeBatch":
        """Contiguous range of shots as a new batch."""
        stop = min(stop, self.num_shots)
        start = max(0, min(start, stop))
        if start % 8 == 0:
            packed = self.packed[:, start // 8 : (stop + 7) // 8]
            return SyndromeBatch(packed, stop - start, self.detectors_per_round, self.basis)
        return SyndromeBatch.from_dense(
            self.to_dense(start, stop), self.detectors_per_round, self.basis
        )

    def _rows(self, subset: Iterable[int]) -> list[int]:
        idx = [int(i) for i in subset]
        for i in idx:
            if not 0 <= i < self.num_detectors:
                raise DimensionError(f"detector {i} out of range for {self.num_detectors} detectors")
        return idx

    def count_all(self, subset: Iterable[int]) -> int:
        """Number of shots in which every detector of ``subset`` fired."""
        idx = self._rows(subset)
        if not idx:
            return self.num_shots
        acc = self.packed[idx[0]].copy()
        for i in idx[1:]:
            np.bitwise_and(acc, self.packed[i], out=acc)
        return int(np.bitwise_count(acc).sum(dtype=np.int64))

    def parity_row(self, subset: Iterable[int]) -> np.ndarray:
        """Packed per-shot parity of ``subset``."""
        idx = self._rows(subset)
        acc = np.zeros(self.packed.shape[1], dtype=np.uint8)
        for i in idx:
            np.bitwise_xor(acc, self.packed[i], out=acc)
        return acc

    def count_odd(self, subset: Iterable[int]) -> int:
        """Number of shots with odd parity over ``subset``."""
        return int(np.bitwise_count(self.parity_row(subset)).sum(dtype=np.int64))

    def detector_counts(self) -> np.ndarray:
        """Per-detector firing counts."""
        return np.bitwise_count(self.packed).sum(axis=1, dtype=np.int64)

    def pair_counts(self) -> np.ndarray:
        """(n, n) matrix of joint firing counts; the diagonal holds singles."""
        if "pair_counts" in self._cache:
            return self._cache["pair_counts"]
        n = self.num_detectors
        acc = np.zeros((n, n), dtype=np.int64)
        for _, dense in self.iter_dense():
            x = dense.astype(np.float32)
            acc += np.rint(x.T @ x).astype(np.int64)
        self._cache["pair_counts"] = acc
        return acc

    def hamming_weights(self) -> np.ndarray:
        """Per-shot number of fired detectors."""
        out = np.zeros(self.num_shots, dtype=np.int64)
        for s, dense in self.iter_dense():
            out[s : s + dense.shape[0]] = dense.sum(axis=1)
        return out

    def syndrome_integers(self) -> np.ndarray:
        """Per-shot little-endian integer view of the whole syndrome."""
        if self.num_detectors > 62:
            raise DimensionError("integer views need at most 62 detectors")
        out = np.zeros(self.num_shots, dtype=np.int64)
        for s, dense in self.iter_dense():
            weights = np.left_shift(np.int64(1), np.arange(self.num_detectors, dtype=np.int64))
            out[s : s + dense.shape[0]] = dense.astype(np.int64) @ weights
        return out

    def with_framing(self, detectors_per_round=None, basis=None) -> "SyndromeBatch":
        return SyndromeBatch(
            self.packed,
            self.num_shots,
            detectors_per_round if detectors_per_round is not None else self.detectors_per_round,
            basis if basis is not None else self.basis,
        )

    def equals(self, other: "SyndromeBatch") -> bool:
        return (
            self.num_shots == other.num_shots
            and self.packed.shape == other.packed.shape
            and bool(np.array_equal(self.packed, other.packed))
        )
