"""From an inference trace to a symbolic controller trace.

Peaks of the effective sample size mark stretches where one controller
explains the motion well.  The MAP controller at each peak is taken, and the
collected goals are clustered with k-means; cluster ids become symbols.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .programs import ControllerLibrary, ControllerParams


@dataclass(frozen=True)
class PeakConfig:
    smoothing_window: int = 5
    min_distance: int = 6
    min_prominence: float = 0.1   # fraction of the particle count

    def __post_init__(self):
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise InvalidArgumentError("smoothing_window must be a positive odd integer")
        if self.min_distance < 1:
            raise InvalidArgumentError("min_distance must be >= 1")
        if not 0 <= self.min_prominence < 1:
            raise InvalidArgumentError("min_prominence must lie in [0, 1)")


@dataclass
class SymbolTrace:
    symbols: list[int]
    peak_times: list[int]

    def __post_init__(self):
        if len(self.symbols) != len(self.peak_times):
            raise InvalidArgumentError("symbols and peak_times differ in length")
        if any(b <= a for a, b in zip(self.peak_times, self.peak_times[1:])):
            raise InvalidArgumentError("peak times must be strictly increasing")


def smooth(series, window: int) -> np.ndarray:
    """Centred moving average; windows are truncated (not zero-padded) at the ends."""
    x = np.asarray(series, dtype=float)
    if window == 1:
        return x.copy()
    k = np.ones(window)
    num = np.convolve(x, k, mode="same")
    den = np.convolve(np.ones_like(x), k, mode="same")
    return num / den


def _local_maxima(x) -> list[int]:
    """Interior maxima; a flat top counts once, at its middle (rounded down)."""
    peaks = []
    n = len(x)
    i = 1
    while i < n - 1:
        if x[i - 1] < x[i]:
            j = i
            while j + 1 < n - 1 and x[j + 1] == x[i]:
                j += 1
            if x[j + 1] < x[i]:
                peaks.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return peaks


def prominence(x, i) -> float:
    """Height of peak ``i`` above the higher of its two bases."""
    h = x[i]
    left = i
    left_min = h
    while left > 0 and x[left - 1] <= h:
        left -= 1
        left_min = min(left_min, x[left])
    right = i
    right_min = h
    n = len(x)
    while right < n - 1 and x[right + 1] <= h:
        right += 1
        right_min = min(right_min, x[right])
    return float(h - max(left_min, right_min))


def detect_peaks(neff_series, cfg: PeakConfig = PeakConfig(), n_particles=None) -> list[int]:
    """Prominent, well-separated maxima of the smoothed series.

    The prominence threshold is ``cfg.min_prominence * n_particles``; when the
    particle count is not given the series maximum stands in for it.
    """
    x = smooth(neff_series, cfg.smoothing_window)
    if len(x) < 3:
        return []
    scale = float(n_particles) if n_particles is not None else float(np.max(x))
    threshold = cfg.min_prominence * scale
    cands = [i for i in _local_maxima(x) if prominence(x, i) >= threshold]
    cands.sort(key=lambda i: (-x[i], i))
    kept: list[int] = []
    for i in cands:
        if all(abs(i - j) >= cfg.min_distance for j in kept):
            kept.append(i)
    return sorted(kept)


def detect_switches(neff_series, cfg: PeakConfig = PeakConfig(smoothing_window=1, min_distance=5,
                                                               min_prominence=0.3),
                    n_particles=None) -> list[int]:
    """Local minima of the raw series, found as peaks of its negation."""
    x = np.asarray(neff_series, dtype=float)
    scale = float(n_particles) if n_particles is not None else float(np.max(x))
    return detect_peaks(scale - x, cfg, n_particles=scale)


def extract_map_controllers(trace, peaks) -> list[ControllerParams]:
    T = len(trace)
    out = []
    for t in peaks:
        if not 0 <= t < T:
            raise InvalidArgumentError(f"peak {t} outside trace of length {T}")
        out.append(trace.map_params(t))
    return out


# ------------------------------------------------------------------ clustering

def _kmeans(X, k, max_iter=100):
    """Lloyd iterations from farthest-point seeds; X must already be canonically ordered."""
    n = len(X)
    d0 = np.sum((X - X.mean(axis=0)) ** 2, axis=1)
    seeds = [int(np.argmax(d0))]
    dmin = np.sum((X - X[seeds[0]]) ** 2, axis=1)
    while len(seeds) < k:
        nxt = int(np.argmax(dmin))
        seeds.append(nxt)
        dmin = np.minimum(dmin, np.sum((X - X[nxt]) ** 2, axis=1))
    centers = X[seeds].copy()
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
    wcss = float(np.sum((X - centers[labels]) ** 2))
    return labels, wcss


def elbow_k(wcss, floor) -> int:
    """Cluster count at the largest second difference of ``log(wcss + floor)``.

    ``wcss[k-1]`` is the within-cluster sum of squares for ``k`` clusters. The
    curve is held flat beyond both ends, and ties go to the smaller k.
    """
    L = np.log(np.asarray(wcss, dtype=float) + floor)
    padded = np.concatenate([[L[0]], L, [L[-1]]])
    d2 = padded[:-2] - 2 * padded[1:-1] + padded[2:]
    # round away float noise so exact ties resolve to the smaller k
    d2 = np.round(d2, 12)
    return int(np.argmax(d2)) + 1


def cluster_controllers(map_params, k_max=10, peak_times=None, noise_floor=0.02):
    """k-means on controller goals with an elbow choice of k.

    ``noise_floor`` (radians) is the goal scatter treated as irreducible when
    comparing within-cluster sums of squares across k.  Returns
    ``(library, symbol_trace)``; symbol ids follow order of first appearance.
    """
    lib, st, _ = _cluster(map_params, k_max, peak_times, noise_floor)
    return lib, st


def _cluster(map_params, k_max, peak_times, noise_floor):
    if k_max < 1:
        raise InvalidArgumentError("k_max must be >= 1")
    params = list(map_params)
    if not params:
        raise InvalidArgumentError("no controllers to cluster")
    k_max = min(k_max, len(params))
    X = np.array([p.goal for p in params])
    gains = np.array([p.gain for p in params])
    n, J = X.shape
    # canonical ordering makes seeding independent of input order
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    runs = [_kmeans(Xs, k) for k in range(1, k_max + 1)]
    wcss = [w for _, w in runs]
    k_star = elbow_k(wcss, n * J * noise_floor ** 2)
    labels_sorted = runs[k_star - 1][0]
    labels = np.empty(n, dtype=int)
    labels[order] = labels_sorted
    remap: dict[int, int] = {}
    for lab in labels:
        remap.setdefault(int(lab), len(remap))
    symbols = [remap[int(lab)] for lab in labels]
    lib = {}
    for raw, sym in remap.items():
        members = labels == raw
        lib[sym] = ControllerParams(X[members].mean(axis=0), float(np.median(gains[members])))
    times = list(range(n)) if peak_times is None else [int(t) for t in peak_times]
    return ControllerLibrary(lib), SymbolTrace(symbols, times), wcss


@dataclass
class Symbolization:
    peaks: list[int]
    map_params: list[ControllerParams]
    library: ControllerLibrary
    trace: SymbolTrace
    wcss: list[float]


def merge_repeats(st: SymbolTrace) -> SymbolTrace:
    """Collapse runs of one symbol to their first occurrence.

    A controller cannot follow itself in a demonstration (the second copy
    starts converged and produces no motion), so repeated consecutive symbols
    are two peaks inside one segment.
    """
    syms, times = [], []
    for s, t in zip(st.symbols, st.peak_times):
        if not syms or syms[-1] != s:
            syms.append(s)
            times.append(t)
    return SymbolTrace(syms, times)


def symbolize(trace, cfg: PeakConfig = PeakConfig(), k_max=10, noise_floor=0.02,
              close_at_end=True, merge=True) -> Symbolization:
    """Peaks, MAP controllers at the peaks, and their clustering.

    With ``close_at_end`` the end of the recording counts as a controller
    switch: one minimum-N_eff sample is appended before peak detection, so the
    last segment's rise can register as a peak.  With ``merge`` repeated
    consecutive symbols are collapsed; ``peaks`` and ``map_params`` keep every
    detected peak.
    """
    series = np.asarray(trace.neff, dtype=float)
    if close_at_end and len(series):
        series = np.append(series, 1.0)
    peaks = [p for p in detect_peaks(series, cfg, n_particles=trace.n_particles or None)
             if p < len(trace)]
    params = extract_map_controllers(trace, peaks)
    if not params:
        return Symbolization(peaks, params, ControllerLibrary({}), SymbolTrace([], []), [])
    lib, st, wcss = _cluster(params, min(k_max, len(params)), peaks, noise_floor)
    if merge:
        st = merge_repeats(st)
    return Symbolization(peaks, params, lib, st, wcss)


# ------------------------------------------------------------------ export

def write_symbols_csv(st: SymbolTrace, path) -> None:
    with open(path, "w") as fh:
        fh.write("symbol,peak_time\n")
        for s, t in zip(st.symbols, st.peak_times):
            fh.write(f"{s},{t}\n")


def read_symbols_csv(path) -> SymbolTrace:
    syms, times = [], []
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("symbol"):
            raise InvalidArgumentError(f"{path}: missing symbol header")
        for line in fh:
            line = line.strip()
            if line:
                s, t = line.split(",")[:2]
                syms.append(int(s))
                times.append(int(t))
    return SymbolTrace(syms, times)


def write_library_csv(lib: ControllerLibrary, path) -> None:
    J = len(lib[0].goal) if len(lib) else 0
    with open(path, "w") as fh:
        fh.write("id," + ",".join(f"goal_{j}" for j in range(J)) + ",gain\n")
        for i in range(len(lib)):
            c = lib[i]
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in c.goal) + f",{c.gain!r}\n")


def read_library_csv(path) -> ControllerLibrary:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ControllerLibrary({int(row[0]): ControllerParams(row[1:-1], row[-1]) for row in data})

