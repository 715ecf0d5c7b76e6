"""Cartesian undersampling patterns for 2-D phase-encode grids.

All generators return a SamplingMask over an (ny, nx) grid of k-space
locations. For line patterns axis 0 indexes the phase-encode lines (each
selected line samples the full axis 1 readout).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MaskGenerationError(RuntimeError):
    """Target acceleration could not be met."""

    def __init__(self, msg, closest_af=None):
        super().__init__(msg)
        self.closest_af = closest_af


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Boolean sampling pattern plus how it was made."""

    array: np.ndarray
    kind: str
    target_acceleration: float
    acs: tuple | None = None
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.array, dtype=bool)
        object.__setattr__(self, "array", arr)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if not arr.any():
            raise ValueError("mask selects no samples")

    @property
    def shape(self):
        return self.array.shape

    @property
    def n_sampled(self) -> int:
        return int(self.array.sum())

    @property
    def acceleration(self) -> float:
        """Achieved acceleration factor (grid size over sampled count)."""
        return self.array.size / self.n_sampled


def mask_even(shape, rx: int, ry: int = 1) -> SamplingMask:
    """Evenly spaced sampling anchored at index 0 in each direction."""
    ny, nx = shape
    if not (1 <= rx <= ny) or not (1 <= ry <= nx):
        raise ValueError(f"acceleration ({rx}, {ry}) out of range for shape {shape}")
    arr = np.zeros((ny, nx), dtype=bool)
    arr[::rx, ::ry] = True
    return SamplingMask(arr, "even", float(rx * ry), params={"rx": rx, "ry": ry})


def mask_caipirinha(shape, ry: int, rz: int, shift: int | None = None) -> SamplingMask:
    """Sheared lattice: row y sampled at columns z with (z - shift*(y/ry)) % rz == 0.

    Exactly one in ry*rz locations is sampled when both factors divide the
    extents. shift defaults to rz // 2.
    """
    ny, nx = shape
    if ry < 1 or rz < 1 or ry > ny or rz > nx:
        raise ValueError(f"factors ({ry}, {rz}) out of range for shape {shape}")
    if shift is None:
        shift = rz // 2
    if not (0 <= shift < rz):
        raise ValueError(f"shift must be in [0, {rz}), got {shift}")
    ys = np.arange(ny)[:, None]
    zs = np.arange(nx)[None, :]
    arr = (ys % ry == 0) & ((zs - shift * (ys // ry)) % rz == 0)
    return SamplingMask(arr, "caipirinha", float(ry * rz), params={"ry": ry, "rz": rz, "shift": shift})


def mask_lines_uniform(shape, target_af: float, seed: int = 0, acs_lines: int = 0) -> SamplingMask:
    """Uniformly random full-readout lines along axis 0, no replacement.

    ceil(ny / target_af) lines are kept in total; ``acs_lines`` centered
    lines are always included and count toward the total.
    """
    ny, nx = shape
    if target_af < 1:
        raise ValueError("acceleration must be >= 1")
    n_lines = math.ceil(ny / target_af)
    if n_lines < 1 or n_lines > ny:
        raise ValueError(f"{n_lines} lines infeasible for {ny} rows")
    if acs_lines > n_lines:
        raise ValueError("ACS block larger than the line budget")
    rng = np.random.default_rng(seed)
    chosen = np.zeros(ny, dtype=bool)
    acs = None
    if acs_lines > 0:
        lo = (ny - acs_lines) // 2
        chosen[lo : lo + acs_lines] = True
        acs = (acs_lines, nx)
    remaining = np.flatnonzero(~chosen)
    extra = n_lines - int(chosen.sum())
    if extra > 0:
        chosen[rng.choice(remaining, size=extra, replace=False)] = True
    arr = np.zeros((ny, nx), dtype=bool)
    arr[chosen, :] = True
    return SamplingMask(arr, "lines", float(target_af), acs=acs, seed=seed, params={"acs_lines": acs_lines})


def poisson_radius(points: np.ndarray, shape, r0: float, alpha: float = 2.0) -> np.ndarray:
    """Local exclusion radius r0 * (1 + alpha * |k| / |k|_max) per point."""
    ny, nx = shape
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0
    kmax = math.hypot(cy, cx)
    d = np.hypot(points[..., 0] - cy, points[..., 1] - cx)
    return r0 * (1.0 + alpha * d / kmax)


def _poisson_throw(shape, r0: float, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Dart throwing over all grid points in random order.

    A candidate is rejected if some accepted point q is closer than
    min(r(candidate), r(q)); a spatial hash over cells of size r0 keeps
    neighbourhood queries local.
    """
    ny, nx = shape
    order = rng.permutation(ny * nx)
    pts = np.stack(np.unravel_index(order, (ny, nx)), axis=1).astype(np.float64)
    radii = poisson_radius(pts, shape, r0, alpha)
    cell = max(r0, 1.0)
    buckets: dict = {}
    acc_y, acc_x, acc_r = [], [], []
    arr = np.zeros((ny, nx), dtype=bool)
    for (py, px), rp in zip(pts, radii):
        reach = int(rp / cell) + 1
        by, bx = int(py / cell), int(px / cell)
        ok = True
        for cy in range(by - reach, by + reach + 1):
            for cx in range(bx - reach, bx + reach + 1):
                for qi in buckets.get((cy, cx), ()):
                    dy = acc_y[qi] - py
                    dx = acc_x[qi] - px
                    dist = math.hypot(dy, dx)
                    if dist < rp and dist < acc_r[qi]:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            idx = len(acc_y)
            acc_y.append(py)
            acc_x.append(px)
            acc_r.append(rp)
            buckets.setdefault((by, bx), []).append(idx)
            arr[int(py), int(px)] = True
    return arr


def audit_poisson_spacing(mask: SamplingMask) -> float:
    """Worst pair-rule margin of a Poisson-disc mask, brute force.

    Returns min over sample pairs of dist(p, q) - min(r(p), r(q)); a
    non-negative value means no pair violates the local radius rule.
    Points inside the ACS block are exempt (the block is unioned in after
    thinning).
    """
    if mask.kind != "poisson" or "r0" not in mask.params:
        raise ValueError("audit applies to poisson masks")
    pts = np.argwhere(mask.array).astype(np.float64)
    if mask.acs is not None:
        ny, nx = mask.shape
        ch, cw = mask.acs
        lo_y, lo_x = (ny - ch) // 2, (nx - cw) // 2
        inside = (
            (pts[:, 0] >= lo_y)
            & (pts[:, 0] < lo_y + ch)
            & (pts[:, 1] >= lo_x)
            & (pts[:, 1] < lo_x + cw)
        )
        pts = pts[~inside]
    radii = poisson_radius(pts, mask.shape, mask.params["r0"], mask.params["alpha"])
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    pair_rule = np.minimum(radii[:, None], radii[None, :])
    np.fill_diagonal(dist, np.inf)
    return float((dist - pair_rule).min())


def mask_poisson_disk(
    shape,
    target_af: float,
    seed: int = 0,
    calib: tuple | None = None,
    alpha: float = 2.0,
    tol: float = 0.05,
    max_iter: int = 30,
) -> SamplingMask:
    """Variable-density Poisson-disc mask hitting a target acceleration.

    The base radius r0 is bisected until the achieved acceleration is
    within ``tol`` of the target; the same seed is reused per attempt so
    the search is deterministic. A centered ``calib`` block is added after
    thinning (it tightens the achieved AF and is part of the target).
    """
    ny, nx = shape
    if target_af <= 1:
        raise ValueError("acceleration must be > 1")

    def build(r0: float) -> np.ndarray:
        rng = np.random.default_rng(seed)
        arr = _poisson_throw(shape, r0, alpha, rng)
        if calib is not None:
            ch, cw = calib
            lo_y, lo_x = (ny - ch) // 2, (nx - cw) // 2
            arr[lo_y : lo_y + ch, lo_x : lo_x + cw] = True
        return arr

    def af_of(arr) -> float:
        return arr.size / max(int(arr.sum()), 1)

    lo, hi = 0.25, 1.0
    arr_hi = build(hi)
    guard = 0
    while af_of(arr_hi) < target_af:
        hi *= 2.0
        arr_hi = build(hi)
        guard += 1
        if guard > 20:
            raise MaskGenerationError(
                f"cannot reach AF {target_af} on shape {shape}", closest_af=af_of(arr_hi)
            )

    best_arr, best_af = arr_hi, af_of(arr_hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        arr = build(mid)
        af = af_of(arr)
        if abs(af - target_af) < abs(best_af - target_af):
            best_arr, best_af = arr, af
        if abs(af - target_af) / target_af <= tol:
            return SamplingMask(
                arr,
                "poisson",
                float(target_af),
                acs=calib,
                seed=seed,
                params={"alpha": alpha, "r0": mid},
            )
        if af > target_af:
            hi = mid
        else:
            lo = mid
    raise MaskGenerationError(
        f"acceleration {target_af} not reached within {max_iter} bisections "
        f"(closest achieved {best_af:.3f})",
        closest_af=best_af,
    )
