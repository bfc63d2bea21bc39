"""Voxel-access locality of a trace, per grid level."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..trace import AccessTrace


@dataclass
class LocalityProfile:
    resolutions: tuple[int, ...]
    inter_ray: np.ndarray  # (L,) mean repetition rate vs left neighbour; NaN if undefined
    intra_ray_max: np.ndarray  # (L,) max points of one ray in one voxel
    intra_ray_mean: np.ndarray  # (L,) mean over rays of that per-ray maximum
    rays_compared: int

    def rows(self) -> list[dict]:
        out = []
        for l, n in enumerate(self.resolutions):
            rate = self.inter_ray[l]
            out.append({"level": l, "resolution": n,
                        "inter_ray_rate": "" if np.isnan(rate) else f"{rate:.6f}",
                        "intra_ray_max": int(self.intra_ray_max[l]),
                        "intra_ray_mean": f"{self.intra_ray_mean[l]:.6f}"})
        return out


@numba.njit(cache=True)
def _profile_kernel(base, res, rstart, rend, ray_of_seg, width, seg_of_ray):
    nseg = rstart.shape[0]
    L = res.shape[0]
    inter_sum = np.zeros(L)
    compared = 0
    imax = np.zeros(L, np.int64)
    isum = np.zeros(L)
    for s in range(nseg):
        a, b = rstart[s], rend[s]
        r = ray_of_seg[s]
        left = seg_of_ray[r - 1] if r % width != 0 else -1
        if left >= 0:
            compared += 1
        for l in range(L):
            n1 = np.int64(res[l]) + 1
            keys = np.empty(b - a, np.int64)
            for i in range(a, b):
                keys[i - a] = np.int64(base[i, l, 0]) + n1 * (np.int64(base[i, l, 1])
                                                            + n1 * np.int64(base[i, l, 2]))
            srt = np.sort(keys)
            best = 1
            run = 1
            for i in range(1, srt.shape[0]):
                run = run + 1 if srt[i] == srt[i - 1] else 1
                if run > best:
                    best = run
            if best > imax[l]:
                imax[l] = best
            isum[l] += best
            if left >= 0:
                la, lb = rstart[left], rend[left]
                lk = np.empty(lb - la, np.int64)
                for i in range(la, lb):
                    lk[i - la] = np.int64(base[i, l, 0]) + n1 * (np.int64(base[i, l, 1])
                                                               + n1 * np.int64(base[i, l, 2]))
                lk = np.sort(lk)
                hit = 0
                for i in range(keys.shape[0]):
                    j = np.searchsorted(lk, keys[i])
                    if j < lk.shape[0] and lk[j] == keys[i]:
                        hit += 1
                inter_sum[l] += hit / keys.shape[0]
    return inter_sum, compared, imax, isum


def profile_locality(trace: AccessTrace) -> LocalityProfile:
    """Inter-ray repetition (against the left-neighbour ray) and intra-ray occupancy.

    Each ray's points are taken as one contiguous run of the trace. A ray in
    the first image column has no left neighbour and is skipped for the
    inter-ray rate, as is any ray whose neighbour is absent from the trace.
    """
    L = trace.levels
    res = np.array(trace.resolutions, np.int64)
    P = len(trace)
    if P == 0:
        return LocalityProfile(trace.resolutions, np.full(L, np.nan), np.zeros(L, np.int64),
                               np.zeros(L), 0)
    cut = np.nonzero(trace.ray[1:] != trace.ray[:-1])[0] + 1
    rstart = np.concatenate([[0], cut]).astype(np.int64)
    rend = np.concatenate([cut, [P]]).astype(np.int64)
    ray_of_seg = trace.ray[rstart].astype(np.int64)
    seg_of_ray = -np.ones(trace.width * trace.height, np.int64)
    # if a ray occurs in several runs, the last one represents it
    seg_of_ray[ray_of_seg] = np.arange(len(rstart))
    inter, compared, imax, isum = _profile_kernel(np.ascontiguousarray(trace.base), res, rstart,
                                                  rend, ray_of_seg, trace.width, seg_of_ray)
    rate = inter / compared if compared else np.full(L, np.nan)
    return LocalityProfile(trace.resolutions, rate, imax, isum / len(rstart), int(compared))
