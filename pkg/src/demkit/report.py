"""Per-hyperedge estimate containers shared by the estimators."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class EstimateReport:
    """Rate estimates for a list of hyperedges.

    Attributes
    ----------
    edges : list of tuple of int
        Hyperedges as sorted detector-index tuples.
    theta : ndarray
        Estimated excitation rate per edge (may be negative or otherwise
        nonphysical).
    sigma : ndarray
        Standard error per edge.
    algorithm : str
        Short tag of the estimator that produced the numbers.
    num_shots : int
    n : int
        Detector count of the underlying syndromes.
    meta : dict
        Estimator-specific diagnostics (residuals, convergence, ...).
    """

    edges: list
    theta: np.ndarray
    sigma: np.ndarray
    algorithm: str
    num_shots: int
    n: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.edges = [tuple(sorted(int(i) for i in e)) for e in self.edges]
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if not (len(self.edges) == self.theta.shape[0] == self.sigma.shape[0]):
            raise ValueError("edges, theta and sigma must have the same length")

    def __len__(self):
        return len(self.edges)

    @property
    def psi(self) -> np.ndarray:
        """Attenuations implied by the rates (nan where ``theta >= 1/2``)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return -np.log1p(-2.0 * self.theta)

    @property
    def physical(self) -> bool:
        return bool(np.all((self.theta >= 0) & (self.theta < 0.5)))

    def index(self) -> dict:
        return {e: k for k, e in enumerate(self.edges)}

    def rate_of(self, edge) -> float:
        return float(self.theta[self.index()[tuple(sorted(edge))]])

    def to_dem(self, coords=None):
        """A Dem carrying these rates; nonphysical rates are kept as-is."""
        from .demmodel import Dem

        return Dem(self.n, self.edges, self.theta.copy(), coords=coords)

    def with_theta(self, theta, **meta) -> "EstimateReport":
        return replace(self, theta=np.asarray(theta, dtype=np.float64), meta={**self.meta, **meta})

    def subset(self, keep) -> "EstimateReport":
        """Report restricted to the edges at positions ``keep``."""
        keep = np.asarray(keep, dtype=np.int64)
        out = replace(
            self,
            edges=[self.edges[k] for k in keep],
            theta=self.theta[keep],
            sigma=self.sigma[keep],
            meta=dict(self.meta),
        )
        for key, val in self.meta.items():
            if isinstance(val, np.ndarray) and val.shape[:1] == (len(self.edges),):
                out.meta[key] = val[keep]
        return out


@dataclass
class AttenuationReport(EstimateReport):
    """Estimates produced through attenuations.

    ``theta`` is derived from ``psi_hat`` as ``(1 - exp(-psi_hat)) / 2``,
    which is always below one half.
    """

    psi_hat: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.psi_hat is None:
            self.psi_hat = -np.log1p(-2.0 * self.theta)
        self.psi_hat = np.asarray(self.psi_hat, dtype=np.float64).reshape(-1)

    @property
    def psi(self) -> np.ndarray:
        return self.psi_hat

    @classmethod
    def from_psi(cls, edges, psi, sigma, algorithm, num_shots, n, meta=None):
        psi = np.asarray(psi, dtype=np.float64)
        theta = 0.5 - 0.5 * np.exp(-psi)
        return cls(edges, theta, sigma, algorithm, num_shots, n, meta or {}, psi_hat=psi)

    def subset(self, keep) -> "AttenuationReport":
        out = super().subset(keep)
        out.psi_hat = self.psi_hat[np.asarray(keep, dtype=np.int64)]
        return out

    def with_theta(self, theta, **meta) -> "AttenuationReport":
        theta = np.asarray(theta, dtype=np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            psi = -np.log1p(-2.0 * theta)
        return replace(self, theta=theta, psi_hat=psi, meta={**self.meta, **meta})
