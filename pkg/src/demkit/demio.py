"""Reading and writing DEM text and syndrome files, and frame pooling.

DEM text uses a small subset of the usual stabilizer-simulator syntax::

    # num_detectors 4
    detector(0, 0, 0) D0
    error(0.01) D0 D1 L0

``L`` targets are accepted and ignored.  ``shift_detectors``, ``repeat``
blocks, ``logical_observable`` and ``^`` separators are rejected.
"""
from __future__ import annotations

import math
import os
import re
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demmodel import Dem, DetectorCoords, combine_rates
from .errors import DemParseError, SyndromeFormatError
from .syndromes import SyndromeBatch

__all__ = [
    "DetectorCoords",
    "FrameSpec",
    "parse_dem",
    "read_dem",
    "write_dem",
    "read_syndromes",
    "write_syndromes",
    "pool_frames",
]

_UNSUPPORTED = ("shift_detectors", "repeat", "logical_observable", "}")
_HEADER = re.compile(r"#\s*num_detectors\s+(\d+)\s*$")
_INSTR = re.compile(r"^([a-z_]+)\s*(?:\(([^()]*)\))?\s*(.*)$")


def _parse_floats(arg: str, lineno: int) -> list[float]:
    if arg is None or not arg.strip():
        return []
    try:
        return [float(x) for x in arg.split(",")]
    except ValueError:
        raise DemParseError(f"bad numeric arguments ({arg})", lineno) from None


def _parse_targets(rest: str, lineno: int, allow_obs: bool) -> list[int]:
    dets = []
    for tok in rest.split():
        if tok == "^":
            raise DemParseError("unsupported instruction: '^' separators", lineno)
        if tok[0] == "D" and tok[1:].isdigit():
            dets.append(int(tok[1:]))
        elif allow_obs and tok[0] == "L" and tok[1:].isdigit():
            continue
        else:
            raise DemParseError(f"bad target {tok!r}", lineno)
    return dets


def parse_dem(text: str) -> Dem:
    """Parse DEM text into a ``Dem`` (coordinates attached when present).

    Repeated hyperedges are merged by attenuation summation.  The detector
    count is the ``# num_detectors`` header when given, otherwise one more
    than the largest index mentioned.
    """
    declared = None
    records: dict[tuple, float] = {}
    coords: dict[int, tuple] = {}
    mentioned = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                declared = int(m.group(1))
            continue
        line = line.split("#", 1)[0].strip()
        m = _INSTR.match(line)
        if not m:
            raise DemParseError(f"cannot parse {raw!r}", lineno)
        name, arg, rest = m.groups()
        if name in _UNSUPPORTED or line.startswith("}") or rest.endswith("{"):
            raise DemParseError(f"unsupported instruction: {name}", lineno)
        if name == "error":
            args = _parse_floats(arg, lineno)
            if len(args) != 1:
                raise DemParseError("error() takes exactly one probability", lineno)
            p = args[0]
            if not 0.0 <= p <= 1.0 or math.isnan(p):
                raise DemParseError(f"probability {p!r} outside [0, 1]", lineno)
            dets = _parse_targets(rest, lineno, allow_obs=True)
            if len(set(dets)) != len(dets):
                raise DemParseError(f"repeated detector in {raw.strip()!r}", lineno)
            if not dets:
                continue
            key = tuple(sorted(dets))
            mentioned = max(mentioned, key[-1])
            records[key] = combine_rates(records[key], p) if key in records else p
        elif name == "detector":
            vals = _parse_floats(arg, lineno)
            dets = _parse_targets(rest, lineno, allow_obs=False)
            if len(dets) != 1:
                raise DemParseError("detector takes exactly one D target", lineno)
            mentioned = max(mentioned, dets[0])
            if vals:
                coords[dets[0]] = tuple(vals)
        else:
            raise DemParseError(f"unsupported instruction: {name}", lineno)
    n = mentioned + 1 if declared is None else declared
    if mentioned >= n:
        raise DemParseError(f"detector D{mentioned} exceeds declared count {n}")
    dc = None
    if coords:
        try:
            dc = DetectorCoords.from_mapping(coords, n)
        except Exception as exc:
            raise DemParseError(f"incomplete detector coordinates: {exc}") from None
    return Dem(n, list(records), list(records.values()), dc)


def read_dem(path) -> Dem:
    with open(path, encoding="utf-8") as fh:
        return parse_dem(fh.read())


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dem(dem: Dem) -> str:
    """DEM text with a detector-count header, sorted by edge integer view."""
    lines = [f"# num_detectors {dem.n}"]
    if dem.coords is not None:
        for d, row in enumerate(dem.coords.values):
            lines.append(f"detector({', '.join(_fmt(v) for v in row)}) D{d}")
    s = dem.sorted()
    for e, r in zip(s.edges, s.rates):
        lines.append(f"error({_fmt(r)}) " + " ".join(f"D{d}" for d in e))
    return "\n".join(lines) + "\n"


def save_dem(dem: Dem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_dem(dem))


# ------------------------------------------------------------- syndromes

_READ_CHUNK = 1 << 16


def read_syndromes(path, format: str, n: int, detectors_per_round=None, basis=None) -> SyndromeBatch:
    """Load a syndrome file written in ``b8`` or ``01`` layout."""
    if format == "b8":
        stride = (n + 7) // 8
        size = os.path.getsize(path)
        if n == 0:
            if size:
                raise SyndromeFormatError(f"{path}: nonempty file for zero detectors")
            return SyndromeBatch.empty(0)
        if size % stride:
            raise SyndromeFormatError(
                f"{path}: size {size} bytes is not a multiple of the {stride}-byte shot stride"
            )
        raw = np.fromfile(path, dtype=np.uint8).reshape(-1, stride)
        N = raw.shape[0]
        if n % 8:
            pad = raw[:, -1] >> (n % 8)
            bad = np.flatnonzero(pad)
            if bad.size:
                k = int(bad[0])
                raise SyndromeFormatError(
                    f"{path}: shot {k} (byte {k * stride + stride - 1}) sets padding bits beyond detector {n - 1}"
                )
        packed = np.zeros((n, (N + 7) // 8), dtype=np.uint8)
        for s in range(0, N, _READ_CHUNK):
            bits = np.unpackbits(raw[s : s + _READ_CHUNK], axis=1, bitorder="little")[:, :n]
            packed[:, s // 8 : (s + bits.shape[0] + 7) // 8] = np.packbits(
                bits.T, axis=1, bitorder="little"
            )
        return SyndromeBatch(packed, N, detectors_per_round, basis)
    if format == "01":
        rows = []
        with open(path, "rb") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip(b"\r\n")
                if len(line) != n:
                    raise SyndromeFormatError(
                        f"{path}: line {lineno} has {len(line)} characters, expected {n}"
                    )
                arr = np.frombuffer(line, dtype=np.uint8) - ord("0")
                if n and arr.max() > 1:
                    col = int(np.flatnonzero(arr > 1)[0])
                    raise SyndromeFormatError(
                        f"{path}: line {lineno} column {col + 1}: character {chr(line[col])!r} is not 0 or 1"
                    )
                rows.append(arr)
        dense = np.array(rows, dtype=np.uint8).reshape(len(rows), n)
        return SyndromeBatch.from_dense(dense, detectors_per_round, basis)
    raise ValueError(f"unknown syndrome format {format!r}; expected 'b8' or '01'")


def write_syndromes(batch: SyndromeBatch, path, format: str) -> None:
    if format not in ("b8", "01"):
        raise ValueError(f"unknown syndrome format {format!r}; expected 'b8' or '01'")
    with open(path, "wb") as fh:
        for _, dense in batch.iter_dense(_READ_CHUNK):
            if format == "b8":
                fh.write(np.packbits(dense, axis=1, bitorder="little").tobytes())
            else:
                txt = (dense + ord("0")).astype(np.uint8)
                txt = np.hstack([txt, np.full((dense.shape[0], 1), ord("\n"), dtype=np.uint8)])
                fh.write(txt.tobytes())


# --------------------------------------------------------------- pooling


@dataclass(frozen=True)
class FrameSpec:
    """How to cut shots into non-overlapping frames of ``rounds_per_frame`` rounds."""

    rounds_per_frame: int
    detectors_per_round: int
    rounds_to_discard_head: int = 1
    rounds_to_discard_tail: int = 1

    def __post_init__(self):
        if self.rounds_per_frame < 1:
            raise ValueError("rounds_per_frame must be at least 1")
        if self.detectors_per_round < 1:
            raise ValueError("detectors_per_round must be at least 1")
        if self.rounds_to_discard_head < 0 or self.rounds_to_discard_tail < 0:
            raise ValueError("discard counts must be nonnegative")

    def frames_per_shot(self, total_rounds: int) -> int:
        bulk = total_rounds - self.rounds_to_discard_head - self.rounds_to_discard_tail
        return max(bulk, 0) // self.rounds_per_frame


def pool_frames(batches, spec: FrameSpec) -> SyndromeBatch:
    """Cut every shot of one or more batches into frames and stack them.

    Frame ``f`` of a shot holds detectors
    ``(head + f * r) * per_round .. (head + (f + 1) * r) * per_round - 1``.
    Frames from one shot are consecutive in the output.
    """
    if isinstance(batches, SyndromeBatch):
        batches = [batches]
    batches = list(batches)
    dpr = spec.detectors_per_round
    r = spec.rounds_per_frame
    width = r * dpr
    labels = {b.basis for b in batches if b.basis is not None}
    if len(labels) > 1:
        warnings.warn(f"pooling syndromes from different bases {sorted(labels)}", stacklevel=2)
    chunks = []
    for b in batches:
        if b.num_detectors % dpr:
            raise SyndromeFormatError(
                f"{b.num_detectors} detectors are not a whole number of {dpr}-detector rounds"
            )
        F = spec.frames_per_shot(b.num_detectors // dpr)
        if F == 0:
            continue
        lo = spec.rounds_to_discard_head * dpr
        for _, dense in b.iter_dense():
            frames = dense[:, lo : lo + F * width].reshape(-1, width)
            chunks.append(frames)
    if not chunks:
        warnings.warn("no frame fits in the bulk rounds; pooled batch is empty", stacklevel=2)
        return SyndromeBatch.empty(width, detectors_per_round=dpr)
    basis = labels.pop() if len(labels) == 1 else None
    return SyndromeBatch.from_dense(np.concatenate(chunks, axis=0), dpr, basis)
