import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demo2prog import smc
from demo2prog.errors import InvalidArgumentError
from demo2prog.programs import ControllerParams, Exec, generate_demonstration
from demo2prog.symbolizer import (PeakConfig, SymbolTrace, cluster_controllers, detect_peaks,
                                  detect_switches, elbow_k, extract_map_controllers, merge_repeats,
                                  prominence, read_library_csv, read_symbols_csv, smooth, symbolize,
                                  write_library_csv, write_symbols_csv)

RAW = PeakConfig(smoothing_window=1, min_distance=2, min_prominence=0.0)


def test_peak_examples():
    assert detect_peaks([10, 30, 45, 30, 10, 35, 48, 20], RAW) == [2, 6]
    assert detect_peaks(np.arange(20.0), RAW) == []
    assert detect_peaks(np.full(20, 3.0), RAW) == []
    assert detect_peaks([1.0, 2.0], RAW) == []


def test_peak_suppression_and_ties():
    x = [0, 5, 0, 6, 0, 5, 0]
    assert detect_peaks(x, PeakConfig(1, 3, 0.0)) == [3]
    # equal heights: the earlier one wins
    assert detect_peaks([0, 5, 0, 5, 0], PeakConfig(1, 3, 0.0)) == [1]
    # flat top reported at its middle
    assert detect_peaks([0, 4, 4, 4, 0], RAW) == [2]


def test_prominence_threshold():
    x = [0, 10, 8, 9, 0]
    assert prominence(np.array(x, float), 3) == 1.0
    assert detect_peaks(x, PeakConfig(1, 1, 0.2), n_particles=10) == [1]
    assert detect_peaks(x, PeakConfig(1, 1, 0.05), n_particles=10) == [1, 3]


def test_smoothing_truncates_at_ends():
    np.testing.assert_allclose(smooth([3.0, 0.0, 0.0, 0.0, 3.0], 3), [1.5, 1.0, 0.0, 1.0, 1.5])


def test_peak_config_validation():
    for args in ((2, 1, 0.1), (0, 1, 0.1), (1, 0, 0.1), (1, 1, 1.0), (1, 1, -0.1)):
        with pytest.raises(InvalidArgumentError):
            PeakConfig(*args)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 50), min_size=3, max_size=200), st.integers(1, 12))
def test_peaks_increasing_and_separated(x, d):
    peaks = detect_peaks(x, PeakConfig(3, d, 0.05))
    assert all(b - a >= d for a, b in zip(peaks, peaks[1:]))


def test_detect_switches_finds_dips():
    x = np.full(60, 40.0)
    x[[15, 33, 50]] = [5.0, 8.0, 3.0]
    assert detect_switches(x) == [15, 33, 50]


def _fake_trace(goals, gains):
    T = len(goals)
    return smc.InferenceTrace(np.full((T, 1), 1.0), np.asarray(goals)[:, None], np.asarray(gains)[:, None],
                              np.ones(T), np.asarray(goals, float), np.asarray(gains, float))


def test_extract_map_controllers():
    tr = _fake_trace([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]], [1.0, 2.0, 3.0])
    assert extract_map_controllers(tr, []) == []
    out = extract_map_controllers(tr, [0, 2])
    np.testing.assert_array_equal(out[1].goal, [4.0, 5.0])
    assert out[1].gain == 3.0
    with pytest.raises(InvalidArgumentError):
        extract_map_controllers(tr, [3])


def _groups(rng, centres, per, jitter):
    params = []
    truth = []
    for _ in range(per):
        for i, c in enumerate(centres):
            params.append(ControllerParams(np.asarray(c) + rng.normal(0, jitter, len(c)), 1.0 + i))
            truth.append(i)
    return params, truth


def _same_partition(a, b):
    pairs = set(zip(a, b))
    return len(pairs) == len(set(a)) == len(set(b))


def test_three_groups_recovered_exactly():
    rng = np.random.default_rng(0)
    params, truth = _groups(rng, [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.5, 0.0]], 8, 0.05)
    lib, trace = cluster_controllers(params)
    assert len(lib) == 3
    assert _same_partition(trace.symbols, truth)
    # cluster gain is the member median
    assert sorted(lib[s].gain for s in range(3)) == [1.0, 2.0, 3.0]


def test_identical_params_one_cluster():
    lib, trace = cluster_controllers([ControllerParams([0.3, 0.2], 2.0)] * 6)
    assert len(lib) == 1 and trace.symbols == [0] * 6


def test_cluster_errors_and_clamp():
    with pytest.raises(InvalidArgumentError):
        cluster_controllers([ControllerParams([0.0], 1.0)], k_max=0)
    with pytest.raises(InvalidArgumentError):
        cluster_controllers([])
    lib, _ = cluster_controllers([ControllerParams([0.0], 1.0), ControllerParams([5.0], 1.0)], k_max=10)
    assert len(lib) == 2


def test_clustering_permutation_invariant():
    rng = np.random.default_rng(1)
    params, _ = _groups(rng, [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], 6, 0.02)
    lib, tr = cluster_controllers(params)
    perm = rng.permutation(len(params))
    lib2, tr2 = cluster_controllers([params[i] for i in perm])
    assert len(lib) == len(lib2) == 5
    assert _same_partition(np.array(tr.symbols)[perm].tolist(), tr2.symbols)
    assert max(tr.symbols) < len(lib)


def test_elbow_on_log_curve():
    # sharp drop to the noise level at k = 3
    assert elbow_k([100.0, 50.0, 0.1, 0.09, 0.08], 0.01) == 3
    assert elbow_k([0.0, 0.0, 0.0], 0.01) == 1


def test_merge_repeats():
    st_ = merge_repeats(SymbolTrace([0, 0, 1, 1, 1, 0, 2], [1, 4, 9, 12, 15, 20, 30]))
    assert st_.symbols == [0, 1, 0, 2] and st_.peak_times == [1, 9, 20, 30]
    with pytest.raises(InvalidArgumentError):
        SymbolTrace([0, 1], [3, 3])


def test_one_segment_goal_recovered(arm, camera, scene, library):
    demo = generate_demonstration(Exec(4), library, arm, scene, camera)
    cfg = smc.GenerativeModelConfig()
    tr = smc.run_inference(demo, cfg, smc.BaselinePrior(demo, cfg), np.random.default_rng(0))
    res = symbolize(tr)
    assert res.trace.symbols == [0]
    assert np.max(np.abs(res.library[0].goal - library[4].goal)) < 0.05


def test_patrol_demo_gives_65_controllers(patrol_demo, library):
    cfg = smc.GenerativeModelConfig()
    tr = smc.run_inference(patrol_demo, cfg, smc.BaselinePrior(patrol_demo, cfg), np.random.default_rng(0))
    res = symbolize(tr)
    assert len(res.trace.symbols) == 65
    assert len(res.library) == 5


def test_csv_roundtrip(tmp_path):
    st_ = SymbolTrace([0, 1, 0], [3, 10, 20])
    write_symbols_csv(st_, tmp_path / "s.csv")
    assert read_symbols_csv(tmp_path / "s.csv") == st_
    lib, _ = cluster_controllers([ControllerParams([0.1, 0.2], 1.5), ControllerParams([3.0, 0.0], 2.5)])
    write_library_csv(lib, tmp_path / "l.csv")
    back = read_library_csv(tmp_path / "l.csv")
    for i in range(2):
        assert np.array_equal(back[i].goal, lib[i].goal) and back[i].gain == lib[i].gain
