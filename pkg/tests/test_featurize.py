"""Epoch assignment, per-epoch statistics and day-instance construction."""

import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import local_ms, make_record, random_landmarks
from facepheno.data_model import AU_NAMES, DEFAULT_LANDMARK_MAP
from facepheno.errors import DataError
from facepheno.featurize import (
    EPOCH_NAMES,
    STAT_NAMES,
    ChannelInventory,
    DEFAULT_INVENTORY,
    aggregate_epoch,
    aggregate_groups,
    assign_epoch,
    base_channel_matrix,
    build_day_instances,
    epoch_of_hour,
    export_instances_csv,
    import_instances_csv,
)
from facepheno.geometry import compute_ear, compute_iva_raw_batch, fit_pca


# ---------------------------------------------------------------------------
# epochs

@pytest.mark.parametrize("hour,idx", [
    (0.0, 0), (5.999, 0), (6.0, 1), (11.999, 1),
    (12.0, 2), (17.999, 2), (18.0, 3), (23.999, 3),
])
def test_epoch_boundaries_are_left_closed(hour, idx):
    assert epoch_of_hour(hour) == idx


def test_epoch_of_hour_rejects_out_of_range():
    with pytest.raises(DataError):
        epoch_of_hour(24.0)
    with pytest.raises(DataError):
        epoch_of_hour(-0.001)


def test_assign_epoch_uses_local_wall_clock():
    at = local_ms(2024, 3, 10, 7, 30, tz_offset_minutes=540)
    assert assign_epoch(at, 540) == "morning"
    # same instant, zone two hours west: 05:30 local
    assert assign_epoch(at, 540 - 120) == "midnight"
    at_utc_evening = local_ms(2024, 3, 10, 22, 0, tz_offset_minutes=0)
    assert assign_epoch(at_utc_evening, 0) == "evening"
    assert assign_epoch(at_utc_evening, 180) == "midnight"


# ---------------------------------------------------------------------------
# the eight statistics

def test_statistics_of_one_two_three_four():
    # By hand: mean 2.5, population variance ((1.5^2 + .5^2) * 2) / 4 = 1.25,
    # quartiles interpolate at rank q * 3, so q1 = 1 + 0.75 and q3 = 3 + 0.25.
    got = aggregate_epoch([1.0, 2.0, 3.0, 4.0])
    expected = [1.0, 4.0, 2.5, 2.5, 10.0, math.sqrt(1.25), 1.75, 3.25]
    np.testing.assert_allclose(got, expected, atol=1e-15)
    assert got[5] == pytest.approx(1.118033988749895, abs=1e-15)


def test_statistics_of_a_singleton():
    got = aggregate_epoch([7.5])
    np.testing.assert_allclose(got, [7.5, 7.5, 7.5, 7.5, 7.5, 0.0, 7.5, 7.5])


def test_statistics_skip_missing_values():
    np.testing.assert_array_equal(aggregate_epoch([1.0, np.nan, 3.0]),
                                  aggregate_epoch([1.0, 3.0]))
    assert np.isnan(aggregate_epoch([])).all()
    assert np.isnan(aggregate_epoch([np.nan, np.nan])).all()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_sum_equals_mean_times_count(values):
    got = aggregate_epoch(values)
    assert got[4] == pytest.approx(got[2] * len(values), rel=1e-9, abs=1e-6)
    assert got[0] <= got[6] <= got[3] <= got[7] <= got[1]


def test_grouped_aggregation_matches_the_scalar_path():
    rng = np.random.default_rng(13)
    values = rng.normal(size=500)
    values[rng.random(500) < 0.2] = np.nan
    groups = rng.integers(0, 7, size=500)
    groups[groups == 5] = 4  # leave group 5 empty on purpose
    table = aggregate_groups(values, groups, 8)
    for g in range(8):
        np.testing.assert_allclose(table[g], aggregate_epoch(values[groups == g]),
                                    rtol=1e-12, atol=1e-12, equal_nan=True)
    assert np.isnan(table[5]).all() and np.isnan(table[7]).all()


def test_grouped_aggregation_is_permutation_invariant_bitwise():
    rng = np.random.default_rng(17)
    values = rng.normal(size=400)
    values[::11] = np.nan
    groups = rng.integers(0, 5, size=400)
    base = aggregate_groups(values, groups, 5)
    for seed in range(5):
        perm = np.random.default_rng(seed).permutation(400)
        shuffled = aggregate_groups(values[perm], groups[perm], 5)
        assert np.array_equal(base, shuffled, equal_nan=True)


# ---------------------------------------------------------------------------
# inventory

def test_default_inventory_shape_and_names():
    inv = DEFAULT_INVENTORY
    assert inv.n_channels == 40
    assert inv.n_features == 1280
    names = inv.feature_names()
    assert len(names) == len(set(names)) == 1280
    assert names[0] == "AU01_min_midnight"
    assert names[7] == "AU01_q3_midnight"
    # epoch-major: morning block starts after 40 channels x 8 stats
    assert names[320] == "AU01_min_morning"
    assert names.index("smilingProbability_sum_morning") == 320 + 12 * 8 + 4
    assert names[-1] == "iva_vel10_q3_evening"


def test_acceleration_extends_the_inventory():
    inv = ChannelInventory.default(acceleration=True)
    assert inv.n_channels == 50
    assert inv.n_features == 1600
    assert "iva_acc10_std_evening" in inv.feature_names()


# ---------------------------------------------------------------------------
# building day instances

def _tiny_setup(rng, tz=120):
    """Two participants; one session straddles midnight."""
    lm_map = DEFAULT_LANDMARK_MAP
    pairs = np.array([(0, lm_map.range("left_eye")[0]),
                      (0, lm_map.range("upper_lip_top")[0]),
                      (3, lm_map.range("right_eye")[2])], dtype=np.int64)
    fit_frames = np.stack([random_landmarks(rng) for _ in range(8)])
    pca = fit_pca(compute_iva_raw_batch(fit_frames, pairs), 2)
    inventory = ChannelInventory.default(n_iva_pcs=2)

    records = [
        # p01 session s1: evening frame, then one 20 minutes later just past
        # midnight local time
        make_record(session="s1", at=local_ms(2024, 3, 10, 23, 50, tz), tz=tz,
                    rng=rng, smile_prob=0.2),
        make_record(session="s1", at=local_ms(2024, 3, 11, 0, 10, tz), tz=tz,
                    rng=rng, smile_prob=0.4),
        # p01 session s2: three morning frames on the 10th
        make_record(session="s2", at=local_ms(2024, 3, 10, 8, 0, tz), tz=tz,
                    rng=rng, smile_prob=0.1),
        make_record(session="s2", at=local_ms(2024, 3, 10, 8, 0, tz, second=1), tz=tz,
                    rng=rng, smile_prob=0.2),
        make_record(session="s2", at=local_ms(2024, 3, 10, 8, 0, tz, second=2), tz=tz,
                    rng=rng, smile_prob=0.6),
        # p02: two afternoon frames
        make_record(pid="p02", session="s9", at=local_ms(2024, 3, 10, 13, 0, tz),
                    tz=tz, rng=rng),
        make_record(pid="p02", session="s9", at=local_ms(2024, 3, 10, 13, 0, tz, second=1),
                    tz=tz, rng=rng),
    ]
    return records, pca, pairs, inventory


def test_instances_split_by_local_date_and_count_frames():
    rng = np.random.default_rng(29)
    records, pca, pairs, inventory = _tiny_setup(rng)
    instances = build_day_instances(records, pca, pairs, inventory)

    keys = [(i.participant_id, i.local_date) for i in instances]
    assert keys == [
        ("p01", dt.date(2024, 3, 10)),
        ("p01", dt.date(2024, 3, 11)),
        ("p02", dt.date(2024, 3, 10)),
    ]
    np.testing.assert_array_equal(instances[0].frame_counts, [0, 3, 0, 1])
    np.testing.assert_array_equal(instances[1].frame_counts, [1, 0, 0, 0])
    np.testing.assert_array_equal(instances[2].frame_counts, [0, 0, 2, 0])

    names = inventory.feature_names()
    smile_mean_morning = instances[0].features[names.index("smilingProbability_mean_morning")]
    assert smile_mean_morning == pytest.approx((0.1 + 0.2 + 0.6) / 3.0, abs=1e-12)
    smile_sum_evening = instances[0].features[names.index("smilingProbability_sum_evening")]
    assert smile_sum_evening == pytest.approx(0.2, abs=1e-15)

    # The midnight-straddling session keeps its velocity: the 00:10 frame has
    # a predecessor, so the following day's midnight epoch sees one velocity,
    # while the first session frame on the 10th has none.
    vel_mean_midnight = instances[1].features[names.index("iva_vel1_mean_midnight")]
    assert np.isfinite(vel_mean_midnight)
    vel_mean_evening = instances[0].features[names.index("iva_vel1_mean_evening")]
    assert np.isnan(vel_mean_evening)

    # EAR columns agree with the scalar computation on the raw contour
    eye = DEFAULT_LANDMARK_MAP.indices("left_eye")
    expected_ear = compute_ear(records[5].landmarks[eye])
    ear_min = instances[2].features[names.index("ear_left_min_afternoon")]
    ear_other = compute_ear(records[6].landmarks[eye])
    assert ear_min == pytest.approx(min(expected_ear, ear_other), abs=1e-12)


def test_instances_are_invariant_to_record_order():
    rng = np.random.default_rng(29)
    records, pca, pairs, inventory = _tiny_setup(rng)
    base = build_day_instances(records, pca, pairs, inventory)
    for seed in (1, 2):
        perm = np.random.default_rng(seed).permutation(len(records))
        other = build_day_instances([records[i] for i in perm], pca, pairs, inventory)
        assert [(i.participant_id, i.local_date) for i in base] == \
               [(i.participant_id, i.local_date) for i in other]
        for a, b in zip(base, other):
            assert np.array_equal(a.features, b.features, equal_nan=True)
            assert np.array_equal(a.frame_counts, b.frame_counts)


def test_missing_blocks_produce_missing_channels():
    rec = make_record()  # no landmarks, no AU block
    mat = base_channel_matrix([rec])
    assert np.isnan(mat[0, :12]).all()        # AU columns
    assert np.isnan(mat[0, 18:]).all()        # EAR columns
    np.testing.assert_allclose(mat[0, 12:18], [0.5, 0.8, 0.7, -2.0, 1.0, 0.5])


def test_instance_csv_round_trip(tmp_path):
    rng = np.random.default_rng(29)
    records, pca, pairs, inventory = _tiny_setup(rng)
    instances = build_day_instances(records, pca, pairs, inventory)
    path = tmp_path / "features.csv"
    meta = {"seed": 7, "config_hash": "abc"}
    export_instances_csv(instances, inventory, path, meta=meta)
    back, back_meta = import_instances_csv(path, inventory)

    assert back_meta == meta
    assert len(back) == len(instances)
    for a, b in zip(instances, back):
        assert (a.participant_id, a.local_date) == (b.participant_id, b.local_date)
        assert np.array_equal(a.features, b.features, equal_nan=True)
        assert np.array_equal(a.frame_counts, b.frame_counts)


def test_instance_csv_refuses_inventory_drift(tmp_path):
    rng = np.random.default_rng(29)
    records, pca, pairs, inventory = _tiny_setup(rng)
    instances = build_day_instances(records, pca, pairs, inventory)
    path = tmp_path / "features.csv"
    export_instances_csv(instances, inventory, path)
    with pytest.raises(DataError, match="inventory"):
        import_instances_csv(path, ChannelInventory.default(n_iva_pcs=3))
