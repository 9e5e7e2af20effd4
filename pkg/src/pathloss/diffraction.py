"""Knife-edge diffraction (ITU-R P.526 single edge, Deygout for multiple edges)."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import List

import numpy as np

from .exceptions import DegenerateProfile, NonPositiveGeometry
from .raster import Profile

SPEED_OF_LIGHT = 299792458.0
NU_CUTOFF = -0.78
DEFAULT_MAX_EDGES = 3


@dataclass(frozen=True)
class EdgeObstruction:
    index: int
    d1: float
    d2: float
    h: float
    nu: float

    @property
    def loss_db(self) -> float:
        return knife_edge_loss(self.nu)


@dataclass(frozen=True)
class DiffractionResult:
    loss_db: float
    edges: List[EdgeObstruction]


def fresnel_nu(h: float, d1: float, d2: float, freq: float) -> float:
    """Fresnel-Kirchhoff parameter for an edge ``h`` meters above the ray."""
    if d1 <= 0 or d2 <= 0 or freq <= 0:
        raise NonPositiveGeometry(f"d1={d1}, d2={d2}, freq={freq}")
    lam = SPEED_OF_LIGHT / freq
    return h * math.sqrt((2.0 / lam) * (1.0 / d1 + 1.0 / d2))


def knife_edge_loss(nu):
    """J(nu) in dB; zero at and below nu = -0.78. Accepts scalars or arrays."""
    nu_arr = np.asarray(nu, dtype=float)
    v = nu_arr - 0.1
    j = 6.9 + 20.0 * np.log10(np.sqrt(v * v + 1.0) + v)
    out = np.where(nu_arr > NU_CUTOFF, j, 0.0)
    return float(out) if out.ndim == 0 else out


def _segment_nu(d, s, i0, h0, i1, h1, lam):
    idx = np.arange(i0 + 1, i1)
    span = d[i1] - d[i0]
    d1 = d[idx] - d[i0]
    d2 = d[i1] - d[idx]
    ray = h0 + (h1 - h0) * d1 / span
    h = s[idx] - ray
    nu = h * np.sqrt((2.0 / lam) * (1.0 / d1 + 1.0 / d2))
    return idx, d1, d2, h, nu


def deygout_loss(
    profile: Profile,
    freq: float,
    tx_h_agl: float,
    rx_h_agl: float,
    max_edges: int = DEFAULT_MAX_EDGES,
) -> DiffractionResult:
    """Multiple knife-edge loss by principal-edge recursion.

    Terminals sit ``tx_h_agl`` / ``rx_h_agl`` above the first / last ground
    sample; obstacles are the surface (DSM) heights. Sub-paths are expanded
    breadth-first until ``max_edges`` edges have been selected.
    """
    if len(profile) < 3:
        raise DegenerateProfile("diffraction needs at least 3 profile samples")
    if max_edges < 1:
        raise ValueError("max_edges must be >= 1")
    if freq <= 0:
        raise NonPositiveGeometry("frequency must be positive")
    lam = SPEED_OF_LIGHT / freq
    d = profile.distances
    s = profile.surface
    n = len(d)

    edges: List[EdgeObstruction] = []
    queue = deque([(0, profile.ground[0] + tx_h_agl, n - 1, profile.ground[-1] + rx_h_agl)])
    while queue and len(edges) < max_edges:
        i0, h0, i1, h1 = queue.popleft()
        if i1 - i0 < 2:
            continue
        idx, d1, d2, h, nu = _segment_nu(d, s, i0, h0, i1, h1, lam)
        k = int(np.argmax(nu))
        if nu[k] <= NU_CUTOFF:
            continue
        edge = EdgeObstruction(int(idx[k]), float(d1[k]), float(d2[k]), float(h[k]), float(nu[k]))
        edges.append(edge)
        queue.append((i0, h0, edge.index, s[edge.index]))
        queue.append((edge.index, s[edge.index], i1, h1))

    loss = float(sum(knife_edge_loss(e.nu) for e in edges))
    return DiffractionResult(loss, edges)
