import numpy as np
import pytest

from cluttertrack.domain import CLUTTER, CapacityError, five_crossing_targets
from cluttertrack.scenario import (
    SCANS_CSV_HEADER,
    TRUTH_CSV_HEADER,
    generate_scans,
    generate_truth,
    make_training_set,
    read_scans_csv,
    read_truth_states,
    seeded_variants,
    write_scans_csv,
    write_truth_csv,
)


def test_truth_first_step_matches_hand_values(reference_config):
    truth = generate_truth(reference_config)
    assert np.allclose(truth.states[0, 0], [5.0, 1.0, 11.0, 0.4])
    assert np.allclose(truth.states[1, 0], [6.0, 1.0, 11.4, 0.4])


def test_truth_zero_velocity_component(reference_config):
    truth = generate_truth(reference_config)
    # target 3 has vy = 0
    assert np.allclose(truth.states[:, 2, 2], 15.0)


def test_truth_crossing_near_scan_ten(reference_config):
    truth = generate_truth(reference_config)
    y1 = truth.states[10, 0, 2]
    y5 = truth.states[10, 4, 2]
    assert y1 == pytest.approx(15.0, abs=1e-9)
    assert y5 == pytest.approx(15.0, abs=1e-9)


def test_truth_is_pure(reference_config):
    a = generate_truth(reference_config)
    b = generate_truth(reference_config)
    assert np.array_equal(a.states, b.states)


def test_scans_degenerate_noise_free(clean_config):
    truth = generate_truth(clean_config)
    scans = generate_scans(truth, 7)
    for k, scan in enumerate(scans):
        assert scan.num_measurements == 5
        order = np.argsort(scan.origins)
        assert np.array_equal(scan.measurements[order], truth.positions(k))


def test_scans_bit_reproducible(reference_config):
    truth = generate_truth(reference_config)
    a = generate_scans(truth, 99)
    b = generate_scans(truth, 99)
    for s1, s2 in zip(a, b):
        assert np.array_equal(s1.measurements, s2.measurements)
        assert s1.origins == s2.origins


def test_scans_differ_across_seeds(reference_config):
    truth = generate_truth(reference_config)
    a = generate_scans(truth, 1)
    b = generate_scans(truth, 2)
    assert not np.array_equal(a[0].measurements, b[0].measurements)


def test_scans_detection_and_clutter_statistics(reference_config):
    truth = generate_truth(reference_config)
    detections = clutter = scans_total = 0
    for seed in range(50):
        for scan in generate_scans(truth, seed):
            labels = [o for o in scan.origins if o != CLUTTER]
            detections += len(labels)
            clutter += scan.num_measurements - len(labels)
            scans_total += 1
    # loose 4-sigma bands; the tight 3-sigma version runs in acceptance
    det_rate = detections / (scans_total * 5)
    se = np.sqrt(0.9 * 0.1 / (scans_total * 5))
    assert abs(det_rate - 0.9) < 4 * se
    clutter_rate = clutter / scans_total
    assert abs(clutter_rate - 20.0) < 4 * np.sqrt(20.0 / scans_total)


def test_scans_labels_point_at_targets(reference_config):
    truth = generate_truth(reference_config)
    for scan in generate_scans(truth, 5):
        for i, origin in enumerate(scan.origins):
            if origin == CLUTTER:
                continue
            err = np.linalg.norm(scan.measurements[i] - truth.positions(scan.k)[origin])
            assert err < 6 * 0.3162


def test_scan_order_is_shuffled(reference_config):
    truth = generate_truth(reference_config)
    scans = generate_scans(truth, 3)
    unsorted = 0
    for scan in scans:
        labels = [o for o in scan.origins if o != CLUTTER]
        if labels != sorted(labels):
            unsorted += 1
    assert unsorted > 0


def test_training_set_one_hot_layout(clean_config):
    ds = make_training_set([clean_config], m_max=6)
    assert ds.m_max == 6
    group = ds.groups[0]
    rows = ds.truth_rows(group)
    assert rows.shape == (5, 7)
    assert np.allclose(rows.sum(axis=1), 1.0)
    for t, label in enumerate(group.labels):
        assert label >= 0
        assert rows[t, label] == 1.0


def test_training_set_miss_row():
    cfg = five_crossing_targets(p_d=0.9, e_lambda=0.0, seed=4)
    ds = make_training_set([cfg])
    miss_rows = 0
    for g in ds.groups:
        rows = ds.truth_rows(g)
        for t, label in enumerate(g.labels):
            if label < 0:
                miss_rows += 1
                assert rows[t, ds.m_max] == 1.0
                assert rows[t, : ds.m_max].sum() == 0.0
    assert miss_rows > 0


def test_training_set_capacity_guard(reference_config):
    with pytest.raises(CapacityError):
        make_training_set([reference_config], m_max=3)


def test_training_set_group_count(reference_config):
    ds = make_training_set(seeded_variants(reference_config, 3))
    assert len(ds) == 3 * (reference_config.num_scans - 1)


def test_csv_round_trip(tmp_path, reference_config):
    truth = generate_truth(reference_config)
    scans = generate_scans(truth, 11)
    scans_path = tmp_path / "scans.csv"
    truth_path = tmp_path / "truth.csv"
    write_scans_csv(scans, scans_path)
    write_truth_csv(truth, truth_path)

    header = scans_path.read_text().splitlines()[0]
    assert header == ",".join(SCANS_CSV_HEADER)
    assert truth_path.read_text().splitlines()[0] == ",".join(TRUTH_CSV_HEADER)

    restored = read_scans_csv(scans_path)
    assert len(restored) == len(scans)
    for a, b in zip(scans, restored):
        assert a.k == b.k
        assert np.array_equal(a.measurements, b.measurements)
        assert a.origins == b.origins

    states = read_truth_states(truth_path)
    assert np.array_equal(states, truth.states)
