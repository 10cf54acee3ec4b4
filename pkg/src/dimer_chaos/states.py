"""Locating the representative 'chaotic', 'regular 1' and 'regular 2' initial states.

The chaotic sea is the connected set of above-threshold Lyapunov nodes
around the unstable fixed point at ``(0, pi)``. Each pick is scored on
``maximum_filter(lambda)`` so that a regular node must have regular
neighbours too.

* chaotic: largest exponent inside the sea, near ``(0, pi)``.
* regular 1: most regular node among the holes of the sea (KAM islands),
  re-examined on a finer grid with a longer fit window because the
  islands can be narrower than a coarse cell.
* regular 2: most regular node outside the (dilated) sea within a window
  that selects large tunnelling oscillations about the stable point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .model import SystemParams
from .semiclassical import (
    GridSpec,
    LyapunovMap,
    lyapunov_map,
    lyapunov_map_at,
    regular_threshold,
    wrap_phase,
)

NAMES = ("regular-1", "regular-2", "chaotic")


@dataclass(frozen=True)
class LocatorSpec:
    grid: GridSpec = GridSpec(61, 61, -0.45, 0.45, phi_center=np.pi)
    chaotic_z: float = 0.1          # |z|/N window around the unstable point
    chaotic_phi: float = 0.6        # |phi - pi| window
    regular2_z: tuple = (0.15, 0.25)
    regular2_phi: float = 0.5       # |phi| window around the stable point
    dilation: int = 2
    refine: int = 41                # fine grid side over the islands
    refine_periods: int = 80


@dataclass(frozen=True)
class RepresentativeStates:
    points: dict                    # name -> (z, phi)
    exponents: dict                 # name -> lambda at the node
    threshold: float
    sea: np.ndarray                 # boolean mask on the map grid
    islands: np.ndarray
    lyapunov: LyapunovMap = field(repr=False)

    def __getitem__(self, name):
        return self.points[name]


def _phase_gap(phi, centre):
    return np.abs(wrap_phase(np.asarray(phi) - centre))


def _argmin_masked(score, mask):
    if not np.any(mask):
        return None
    return np.unravel_index(np.argmin(np.where(mask, score, np.inf)), score.shape)


def chaotic_sea(lmap: LyapunovMap, threshold: float, spec: LocatorSpec = LocatorSpec()):
    """Connected chaotic component near ``(0, pi)`` and the regular holes inside it."""
    N = lmap.params.N
    chaotic = np.nan_to_num(lmap.exponent, nan=-np.inf) > threshold
    labels, _ = ndimage.label(chaotic)
    window = (np.abs(lmap.z) <= spec.chaotic_z * N) & (_phase_gap(lmap.phi, np.pi) <= spec.chaotic_phi)
    hits = labels[window & chaotic]
    if hits.size == 0:
        empty = np.zeros_like(chaotic)
        return empty, empty
    sea = labels == np.bincount(hits).argmax()
    islands = ndimage.binary_fill_holes(sea) & ~sea
    return sea, islands


def _coarse_index(lmap: LyapunovMap, z, phi):
    """Nearest coarse-grid node of arbitrary points."""
    g, N = lmap.grid, lmap.params.N
    zf = g.z_fractions()
    dz = zf[1] - zf[0] if len(zf) > 1 else 1.0
    i = np.clip(np.rint((np.asarray(z) / N - zf[0]) / dz).astype(int), 0, len(zf) - 1)
    first = g.phis()[0]
    j = np.rint(wrap_phase(np.asarray(phi) - first) / (2 * np.pi / g.n_phi)).astype(int) % g.n_phi
    return i, j


def refine_island(lmap: LyapunovMap, islands: np.ndarray, spec: LocatorSpec = LocatorSpec(),
                  threads: int = 1):
    """Most regular point of the islands on a finer, longer-window map.

    Returns ``(z, phi, lambda)``.
    """
    N = lmap.params.N
    zs, ps = lmap.z[islands], lmap.phi[islands]
    g = lmap.grid
    dz = (g.z_max - g.z_min) / max(g.n_z - 1, 1) * N
    dphi = 2 * np.pi / g.n_phi
    centre = float(np.angle(np.mean(np.exp(1j * ps))))
    offs = wrap_phase(ps - centre)
    z_ax = np.linspace(zs.min() - dz, zs.max() + dz, spec.refine)
    p_ax = centre + np.linspace(offs.min() - dphi, offs.max() + dphi, spec.refine)
    Z, P = np.meshgrid(z_ax, wrap_phase(p_ax), indexing="ij")
    i, j = _coarse_index(lmap, Z, P)
    inside = islands[i, j] & (np.abs(Z) < 0.5 * N * (1 - 1e-6))
    lam = np.full(Z.shape, np.inf)
    lam[inside] = lyapunov_map_at(lmap.params, Z[inside], P[inside], lmap.delta0,
                                  spec.refine_periods, lmap.period, threads=threads)[0]
    lam = np.nan_to_num(lam, nan=np.inf)
    score = ndimage.maximum_filter(lam, size=3, mode="nearest")
    idx = _argmin_masked(score, inside & np.isfinite(score))
    if idx is None:
        idx = _argmin_masked(lam, inside)
    return float(Z[idx]), float(P[idx]), float(lam[idx])


def locate_representative_states(params: SystemParams, spec: LocatorSpec = LocatorSpec(),
                                 threads: int = 1, reference: LyapunovMap | None = None,
                                 lmap: LyapunovMap | None = None) -> RepresentativeStates:
    """Pick the three representative phase points from a Lyapunov map.

    Raises ``ValueError`` when the parameters produce no chaotic sea (for
    instance ``mu = 0``) or no candidate for one of the regular states.
    """
    if params.mu == 0:
        raise ValueError("the representative states need a driven system (mu != 0)")
    if reference is None:
        reference = regular_threshold(params, threads=threads)
    threshold = reference.max_exponent
    if lmap is None:
        lmap = lyapunov_map(params, spec.grid, threads=threads)
    N = params.N
    lam = np.nan_to_num(lmap.exponent, nan=np.inf)
    sea, islands = chaotic_sea(lmap, threshold, spec)
    if not np.any(sea):
        raise ValueError("no chaotic sea around (0, pi) at these parameters")
    # wrap along phi so that edge nodes see their true neighbours
    score = ndimage.maximum_filter(lam, size=3, mode=("nearest", "wrap"))

    near = (np.abs(lmap.z) <= spec.chaotic_z * N) & (_phase_gap(lmap.phi, np.pi) <= spec.chaotic_phi)
    chaos_idx = _argmin_masked(-lam, sea & near)
    if not np.any(islands):
        raise ValueError("the chaotic sea encloses no regular island")
    reg1 = refine_island(lmap, islands, spec, threads)
    outside = ~ndimage.binary_dilation(ndimage.binary_fill_holes(sea), iterations=spec.dilation)
    zf = lmap.z / N
    band = ((zf >= spec.regular2_z[0]) & (zf <= spec.regular2_z[1])
            & (_phase_gap(lmap.phi, 0.0) <= spec.regular2_phi))
    reg2_idx = _argmin_masked(score, outside & band & (lam <= threshold))
    if reg2_idx is None:
        raise ValueError("no regular node in the regular-2 window")

    points = {"regular-1": reg1[:2]}
    exps = {"regular-1": reg1[2]}
    for name, idx in (("regular-2", reg2_idx), ("chaotic", chaos_idx)):
        points[name] = (float(lmap.z[idx]), float(lmap.phi[idx]))
        exps[name] = float(lmap.exponent[idx])
    return RepresentativeStates(points, exps, threshold, sea, islands, lmap)
