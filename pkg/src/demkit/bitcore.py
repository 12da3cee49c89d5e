"""Subset algebra and the dense transforms between probabilities and rates.

Every length-``2**n`` vector in this module is indexed by the little-endian
integer view of a detector subset: entry ``a`` belongs to the set of bit
positions that are one in ``a``.  With that indexing the unnormalized
Walsh-Hadamard matrix ``H`` satisfies ``H @ H == 2**n * I`` and

* polarizations are ``H @ p`` for a probability vector ``p``,
* depolarizations are ``-log`` of polarizations,
* attenuations are ``-2 / 2**n * H @ depolarizations``,
* rates are ``(1 - exp(-attenuation)) / 2``.

Dense vectors are capped at ``MAX_DENSE_DETECTORS`` detectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, PoleError, SizeGuardError

MAX_DENSE_DETECTORS = 24

VECTOR_KINDS = ("probability", "polarization", "depolarization", "attenuation", "rate")


def popcount(x):
    """Number of set bits of a Python int or an integer array."""
    if isinstance(x, (int, np.integer)):
        return int(x).bit_count()
    return np.bitwise_count(np.asarray(x, dtype=np.uint64)).astype(np.int64)


def mask_of(indices: Iterable[int]) -> int:
    m = 0
    for i in indices:
        m |= 1 << int(i)
    return m


def indices_of(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def iter_submasks(mask: int):
    """Yield every submask of ``mask``, including 0 and ``mask`` itself.

    Submasks come out in decreasing integer order.
    """
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


@dataclass(frozen=True)
class DetectorSet:
    """A subset of ``range(n)`` with integer, bit-vector and set views.

    The integer view is ``sum(2**i for i in members)``, so ``A <= B`` as sets
    implies ``A.integer <= B.integer``.
    """

    mask: int
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise DimensionError("detector count must be nonnegative")
        if self.mask < 0 or self.mask >> self.n:
            raise DimensionError(f"mask {self.mask} does not fit in {self.n} detectors")

    @classmethod
    def from_indices(cls, indices: Iterable[int], n: int) -> "DetectorSet":
        idx = list(indices)
        if any(i < 0 or i >= n for i in idx):
            raise DimensionError(f"detector index out of range for n={n}: {idx}")
        return cls(mask_of(idx), n)

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "DetectorSet":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(mask_of(np.flatnonzero(bits)), len(bits))

    @property
    def integer(self) -> int:
        return self.mask

    @property
    def indices(self) -> tuple[int, ...]:
        return indices_of(self.mask)

    @property
    def bits(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=np.uint8)
        out[list(self.indices)] = 1
        return out

    def __len__(self) -> int:
        return self.mask.bit_count()

    def __contains__(self, i) -> bool:
        return bool((self.mask >> int(i)) & 1)

    def __iter__(self):
        return iter(self.indices)

    def issubset(self, other: "DetectorSet") -> bool:
        return self.mask & ~other.mask == 0


def _as_set(x, n=None) -> DetectorSet:
    if isinstance(x, DetectorSet):
        return x
    if n is None:
        raise DimensionError("detector count needed to interpret a plain index list")
    return DetectorSet.from_indices(x, n)


def bitdot(a: DetectorSet, b: DetectorSet) -> int:
    """``|A & B| mod 2``."""
    if a.n != b.n:
        raise DimensionError(f"bitdot of sets over {a.n} and {b.n} detectors")
    return (a.mask & b.mask).bit_count() & 1


def _check_length(length: int) -> int:
    if length < 1 or length & (length - 1):
        raise DimensionError(f"length {length} is not a power of two")
    return length.bit_length() - 1


def hadamard_transform(v: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform, in place.

    ``out[y] = sum_x (-1)**popcount(x & y) * v[x]``.  A contiguous float64
    array is transformed in place and returned; anything else is copied
    first.
    """
    if not (isinstance(v, np.ndarray) and v.dtype == np.float64 and v.flags.c_contiguous):
        v = np.array(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError("hadamard_transform expects a 1-d vector")
    n = _check_length(v.shape[0])
    h = 1
    for _ in range(n):
        x = v.reshape(-1, 2, h)
        lo = x[:, 0, :].copy()
        x[:, 0, :] += x[:, 1, :]
        np.subtract(lo, x[:, 1, :], out=x[:, 1, :])
        h *= 2
    return v


@dataclass(frozen=True)
class SubsetVector:
    """A real vector of length ``2**n`` indexed by subset integer."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        _check_length(vals.shape[0])
        if self.kind not in VECTOR_KINDS:
            raise ValueError(f"unknown vector kind {self.kind!r}")
        if self.kind == "probability":
            if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
                raise DomainError("probability entries must lie in [0, 1]")
            if abs(vals.sum() - 1.0) > 1e-9:
                raise DomainError(f"probabilities sum to {vals.sum()!r}, not 1")
        elif self.kind == "polarization" and vals[0] != 1.0:
            raise DomainError("polarization of the empty set must be exactly 1")
        elif self.kind == "depolarization" and vals[0] != 0.0:
            raise DomainError("depolarization of the empty set must be exactly 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0].bit_length() - 1

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, item):
        return self.values[item]


def _values(v) -> np.ndarray:
    if isinstance(v, SubsetVector):
        return np.array(v.values, dtype=np.float64)
    return np.array(v, dtype=np.float64)


def _guard(n: int):
    if n > MAX_DENSE_DETECTORS:
        raise SizeGuardError(
            f"dense subset vectors support at most {MAX_DENSE_DETECTORS} detectors, got {n}"
        )


def polarizations(p) -> np.ndarray:
    """``H @ p`` with the empty-set entry pinned to exactly one."""
    pi = hadamard_transform(_values(p))
    pi[0] = 1.0
    return pi


def probs_to_attenuations(p) -> np.ndarray:
    """Attenuations of the DEM reproducing ``p``; entry 0 is ``-sum(rest)``."""
    vals = _values(p)
    _guard(_check_length(vals.shape[0]))
    pi = polarizations(vals)
    bad = np.flatnonzero(pi <= 0.0)
    if bad.size:
        raise PoleError(
            f"polarization of subset {int(bad[0])} is {pi[bad[0]]!r}; "
            "depolarization is undefined",
            subset=int(bad[0]),
        )
    omega = -np.log(pi)
    psi = hadamard_transform(omega)
    psi *= -2.0 / psi.shape[0]
    return psi


def probs_to_rates(p) -> SubsetVector:
    """Excitation-rate vector of the (possibly nonphysical) DEM matching ``p``.

    Raises ``PoleError`` naming the first subset whose polarization is not
    strictly positive.
    """
    psi = probs_to_attenuations(p)
    theta = 0.5 - 0.5 * np.exp(-psi)
    return SubsetVector(theta, "rate")


def attenuations_to_probs(psi) -> np.ndarray:
    """Dense probability vector from attenuations; entry 0 is recomputed."""
    psi = _values(psi)
    _guard(_check_length(psi.shape[0]))
    psi[0] = -psi[1:].sum()
    x = hadamard_transform(psi)
    np.exp(0.5 * x, out=x)
    x = hadamard_transform(x)
    x /= x.shape[0]
    return x


def rates_to_probs(theta) -> SubsetVector:
    """Probability vector generated by the dense rate vector ``theta``.

    Entry 0 of ``theta`` is ignored; the matching attenuation is fixed to
    minus the total attenuation.
    """
    theta = _values(theta)
    rest = theta[1:]
    if np.any(rest >= 0.5):
        i = int(np.flatnonzero(rest >= 0.5)[0]) + 1
        raise DomainError(f"rate of subset {i} is {theta[i]!r}; rates must be below 1/2")
    if np.any(rest < 0.0):
        i = int(np.flatnonzero(rest < 0.0)[0]) + 1
        raise DomainError(f"rate of subset {i} is {theta[i]!r}; rates must be nonnegative")
    psi = np.empty_like(theta)
    psi[1:] = -np.log1p(-2.0 * rest)
    p = attenuations_to_probs(psi)
    # roundoff can leave entries like -1e-17 where the true value is zero
    np.clip(p, 0.0, 1.0, out=p)
    return SubsetVector(p, "probability")


def dense_attenuations(edges_masks: Sequence[int], rates: Sequence[float], n: int) -> np.ndarray:
    """Scatter per-edge attenuations into a dense vector, summing collisions."""
    _guard(n)
    psi = np.zeros(1 << n)
    rates = np.asarray(rates, dtype=np.float64)
    if np.any(rates >= 0.5):
        raise DomainError("rates must be below 1/2 for a dense likelihood")
    np.add.at(psi, np.asarray(edges_masks, dtype=np.int64), -np.log1p(-2.0 * rates))
    psi[0] = 0.0
    return psi


def marginal_prob(dem, subset, pattern) -> float:
    """``Pr(x_S == pattern)`` under ``dem`` without densifying all detectors.

    Each hyperedge is projected onto ``subset``; attenuations of edges with
    the same projection add, and the ``|S|``-dimensional inverse transform
    gives the marginal.  ``pattern[k]`` is the value of the k-th smallest
    detector in ``subset``.
    """
    if isinstance(subset, DetectorSet):
        members = subset.indices
    else:
        members = tuple(sorted(int(i) for i in subset))
    k = len(members)
    _guard(k)
    pattern = np.asarray(pattern, dtype=np.int64).ravel()
    if pattern.shape[0] != k:
        raise DimensionError(f"pattern has {pattern.shape[0]} bits for a {k}-detector subset")
    pos = {d: j for j, d in enumerate(members)}
    psi = np.zeros(1 << k)
    rates = np.asarray(dem.rates, dtype=np.float64)
    for edge, rate in zip(dem.edges, rates):
        b = 0
        for d in edge:
            j = pos.get(d)
            if j is not None:
                b |= 1 << j
        if b:
            if rate >= 0.5:
                raise DomainError(f"edge {edge} has rate {rate!r} >= 1/2")
            psi[b] += -np.log1p(-2.0 * rate)
    p = attenuations_to_probs(psi)
    a = int(np.sum(pattern << np.arange(k)))
    return float(min(max(p[a], 0.0), 1.0))


def _popcounts(n: int) -> np.ndarray:
    return popcount(np.arange(1 << n))


def _matrix_entries(name: str, n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    i = idx[:, None]
    j = idx[None, :]
    pc = _popcounts(n)
    if name == "G":
        return np.diag(-(2.0 ** pc) / 2.0)
    if name == "Z":
        return ((i & ~j) == 0).astype(np.float64)
    if name == "L":
        return np.where((j & ~i) == 0, (-1.0) ** pc[None, :], 0.0)
    if name == "H":
        return (-1.0) ** pc[i & j]
    if name == "W":
        return (pc[i & j] & 1).astype(np.float64)
    raise ValueError(f"unknown matrix {name!r}; expected one of G, Z, L, H, W")


_BASE = {"G": -0.5, "Z": 1.0, "L": 1.0, "H": 1.0, "W": 0.0}


def _matrix_recursion(name: str, n: int) -> np.ndarray:
    if name not in _BASE:
        raise ValueError(f"unknown matrix {name!r}; expected one of G, Z, L, H, W")
    x = np.array([[_BASE[name]]])
    for _ in range(n):
        zero = np.zeros_like(x)
        if name == "G":
            x = np.block([[x, zero], [zero, 2 * x]])
        elif name == "Z":
            x = np.block([[x, x], [zero, x]])
        elif name == "L":
            x = np.block([[x, zero], [x, -x]])
        elif name == "H":
            x = np.block([[x, x], [x, -x]])
        else:
            x = np.block([[x, x], [x, 1 - x]])
    return x


def matrix_oracle(name: str, n: int, method: str = "entries") -> np.ndarray:
    """Dense ``2**n`` square matrix G, Z, L, H or W.

    ``method="entries"`` evaluates the closed-form entry of every cell;
    ``method="recursion"`` builds the block recursion up from ``n = 0``.
    Both must agree; they exist so tests can check one against the other.
    """
    if n < 0 or n > 12:
        raise SizeGuardError(f"matrix_oracle supports 0 <= n <= 12, got {n}")
    if method == "entries":
        return _matrix_entries(name, n)
    if method == "recursion":
        return _matrix_recursion(name, n)
    raise ValueError(f"unknown method {method!r}")


def aggregated_sums(psi: np.ndarray) -> np.ndarray:
    """``sum_{A >= S} psi[A]`` for every ``S``, by brute force over supersets."""
    psi = np.asarray(psi, dtype=np.float64)
    size = psi.shape[0]
    out = np.zeros(size)
    for s in range(size):
        out[s] = psi[(np.arange(size) & s) == s].sum()
    return out


def superset_sum_sides(psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of the superset-sum / signed-subset-sum identity.

    With ``omega = W @ psi``, returns ``lhs[S] = 2**|S| / -2 * sum_{A>=S} psi[A]``
    and ``rhs[S] = sum_{B<=S} (-1)**|B| * omega[B]``, each evaluated with
    explicit set loops.  Entry 0 of ``psi`` is replaced by minus the sum of
    the others; the ``S = {}`` case of the identity holds only under that
    convention.
    """
    psi = np.array(psi, dtype=np.float64)
    psi[0] = -psi[1:].sum()
    size = psi.shape[0]
    n = _check_length(size)
    pc = _popcounts(n)
    idx = np.arange(size)
    omega = np.array([np.sum((pc[idx & y] & 1) * psi) for y in range(size)])
    lhs = (2.0 ** pc) / -2.0 * aggregated_sums(psi)
    rhs = np.zeros(size)
    for s in range(size):
        subs = idx[(idx & ~s) == 0]
        rhs[s] = np.sum((-1.0) ** pc[subs] * omega[subs])
    return lhs, rhs


def signed_subset_count(u: int) -> int:
    """``sum_{A <= U} (-1)**|A|`` for the set with integer view ``u``."""
    return sum((-1) ** sub.bit_count() for sub in iter_submasks(u))


def check_identities(n: int, atol: float = 1e-10, seed: int = 0) -> dict[str, float]:
    """Maximum absolute deviation of each matrix identity at size ``n``.

    Keys: ``LL=I``, ``-2LGZ=H``, ``HH=2^nI``, ``entries=recursion``,
    ``superset-sum``, ``W=-H/2`` (on the dependent-entry convention).
    """
    out = {}
    mats = {k: matrix_oracle(k, n) for k in "GZLHW"}
    eye = np.eye(1 << n)
    out["LL=I"] = float(np.max(np.abs(mats["L"] @ mats["L"] - eye)))
    out["-2LGZ=H"] = float(np.max(np.abs(-2 * mats["L"] @ mats["G"] @ mats["Z"] - mats["H"])))
    out["HH=2^nI"] = float(np.max(np.abs(mats["H"] @ mats["H"] - (1 << n) * eye)))
    out["entries=recursion"] = max(
        float(np.max(np.abs(mats[k] - matrix_oracle(k, n, "recursion")))) for k in "GZLHW"
    )
    rng = np.random.default_rng(seed)
    psi = rng.random(1 << n)
    lhs, rhs = superset_sum_sides(psi)
    out["superset-sum"] = float(np.max(np.abs(lhs - rhs)))
    psi[0] = -psi[1:].sum()
    out["W=-H/2"] = float(np.max(np.abs(mats["W"] @ psi + 0.5 * mats["H"] @ psi)))
    return out
