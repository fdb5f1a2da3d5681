"""Independent straight-line reference implementations used as test oracles.

Everything here is deliberately naive (explicit loops, BFS, pair counting)
and shares no code with the package paths it checks.
"""

from collections import deque

import numpy as np


# --- metric oracles ---

def pair_count_auc(pos_scores, neg_scores) -> float:
    """Brute-force Mann-Whitney: count wins over all pos/neg pairs."""
    wins = 0.0
    for p in pos_scores:
        for n in neg_scores:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos_scores) * len(neg_scores))


def rank_desc_by_counting(values) -> list[float]:
    """Average rank after descending sort via per-element comparison counts."""
    ranks = []
    for v in values:
        greater = sum(1 for u in values if u > v)
        equal = sum(1 for u in values if u == v)
        ranks.append(greater + (equal + 1) / 2.0)
    return ranks


def pearson_plain(x, y) -> float:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / (sxx ** 0.5 * syy ** 0.5)


def spearman_by_ranks(y_true, y_pred) -> float:
    return pearson_plain(rank_desc_by_counting(list(y_true)),
                         rank_desc_by_counting(list(y_pred)))


def dice_by_sets(a: np.ndarray, b: np.ndarray) -> float:
    sa = {tuple(i) for i in np.argwhere(np.asarray(a) != 0)}
    sb = {tuple(i) for i in np.argwhere(np.asarray(b) != 0)}
    if not sa and not sb:
        return 1.0
    return 2.0 * len(sa & sb) / (len(sa) + len(sb))


# --- geometry oracles ---

def brute_force_box(mask: np.ndarray):
    """Bounding box by scanning every voxel."""
    lo = [None, None, None]
    hi = [None, None, None]
    for idx in np.ndindex(mask.shape):
        if mask[idx]:
            for a in range(3):
                if lo[a] is None or idx[a] < lo[a]:
                    lo[a] = idx[a]
                if hi[a] is None or idx[a] >= hi[a]:
                    hi[a] = idx[a] + 1
    if lo[0] is None:
        return tuple((0, s) for s in mask.shape)
    return tuple((lo[a], hi[a]) for a in range(3))


def _neighbor_offsets(connectivity: int):
    offsets = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dz, dy, dx) == (0, 0, 0):
                    continue
                if connectivity == 6 and abs(dz) + abs(dy) + abs(dx) != 1:
                    continue
                offsets.append((dz, dy, dx))
    return offsets


def flood_fill_components(mask: np.ndarray, connectivity: int = 26):
    """BFS connected components; returns a list of voxel-index sets."""
    mask = np.asarray(mask) != 0
    offsets = _neighbor_offsets(connectivity)
    seen = np.zeros(mask.shape, dtype=bool)
    components = []
    nz, ny, nx = mask.shape
    for start in np.argwhere(mask):
        start = tuple(start)
        if seen[start]:
            continue
        queue = deque([start])
        seen[start] = True
        comp = set()
        while queue:
            z, y, x = queue.popleft()
            comp.add((z, y, x))
            for dz, dy, dx in offsets:
                nz_, ny_, nx_ = z + dz, y + dy, x + dx
                if 0 <= nz_ < nz and 0 <= ny_ < ny and 0 <= nx_ < nx:
                    if mask[nz_, ny_, nx_] and not seen[nz_, ny_, nx_]:
                        seen[nz_, ny_, nx_] = True
                        queue.append((nz_, ny_, nx_))
        components.append(comp)
    return components


# --- blur / threshold reference ---

def gaussian_weights(sigma: float):
    """Normalized kernel under the package's stated blur convention:
    radius int(4*sigma + 0.5), symmetric boundary."""
    radius = int(4.0 * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum(), radius


def naive_gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable blur as explicit shifted adds over the kernel taps."""
    w, radius = gaussian_weights(sigma)
    out = np.asarray(field, dtype=np.float64)
    for axis in range(out.ndim):
        if radius == 0:
            continue
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="symmetric")
        acc = np.zeros_like(out)
        n = out.shape[axis]
        for j, wj in enumerate(w):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(j, j + n)
            acc += wj * padded[tuple(sl)]
        out = acc
    return out


def reference_threshold_segment(hu: np.ndarray, lungs: np.ndarray,
                                hu_min: float, hu_max: float, sigma: float,
                                v_min_fraction: float) -> np.ndarray:
    """The three steps, written out naively."""
    lungs = np.asarray(lungs) != 0
    step1 = (hu >= hu_min) & (hu <= hu_max) & lungs
    step2 = naive_gaussian_blur(step1.astype(np.float64), sigma) > 0.5
    v_min = v_min_fraction * lungs.sum()
    out = np.zeros(hu.shape, dtype=np.uint8)
    for comp in flood_fill_components(step2, connectivity=26):
        if len(comp) >= v_min:
            for idx in comp:
                out[idx] = 1
    return out


# --- pyramid pooling oracle ---

def pyramid_bins(n_slices: int, k: int):
    """Slice bins for level k under the ceil-split rule with the last-slice
    fallback for bins the rule leaves empty."""
    import math

    bins = []
    for b in range(k):
        start = math.ceil(b * n_slices / k)
        end = math.ceil((b + 1) * n_slices / k)
        start = min(start, n_slices - 1)
        end = max(end, start + 1)
        bins.append(list(range(start, end)))
    return bins


def pyramid_pool_enumerated(per_slice: np.ndarray, levels=(1, 2, 4)) -> np.ndarray:
    """Exhaustive max over enumerated bins; per_slice is (S, C)."""
    parts = []
    S = per_slice.shape[0]
    for k in levels:
        for indices in pyramid_bins(S, k):
            parts.append(np.max(per_slice[indices], axis=0))
    return np.concatenate(parts)
