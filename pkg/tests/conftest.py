"""Shared builders for the synthetic frames used across test modules."""

import datetime as dt

import numpy as np
import pytest

from facepheno.data_model import AU_NAMES, FrameRecord


def utc_ms(year, month, day, hour=0, minute=0, second=0):
    t = dt.datetime(year, month, day, hour, minute, second, tzinfo=dt.timezone.utc)
    return int(t.timestamp() * 1000)


def local_ms(year, month, day, hour, minute, tz_offset_minutes, second=0):
    """UTC capture time whose local wall clock reads the given instant."""
    return utc_ms(year, month, day, hour, minute, second) - tz_offset_minutes * 60_000


def random_landmarks(rng, spread=10.0):
    # A generic cloud is enough: eye widths and nose offsets are nonzero
    # almost surely, and nothing downstream assumes face-like geometry.
    return rng.normal(loc=50.0, scale=spread, size=(133, 2))


def make_record(pid="p01", session="s01", at=None, tz=0, rng=None, **over):
    fields = dict(
        participant_id=pid,
        session_id=session,
        captured_at=at if at is not None else utc_ms(2024, 3, 10, 12, 0),
        tz_offset_minutes=tz,
        trigger="unlock",
        smile_prob=0.5,
        eye_open_left=0.8,
        eye_open_right=0.7,
        head_yaw=1.0,
        head_pitch=-2.0,
        head_roll=0.5,
    )
    if rng is not None:
        fields["landmarks"] = random_landmarks(rng)
        fields["au"] = rng.random(len(AU_NAMES))
    fields.update(over)
    return FrameRecord(**fields)


# ---------------------------------------------------------------------------
# one small generated cohort, shared by the modules that exercise the full
# pipeline; session scope because generation plus dataset assembly costs
# seconds

@pytest.fixture(scope="session")
def small_config():
    from facepheno.synth import SynthConfig
    return SynthConfig(n_participants=5, study_days=10, seed=11)


@pytest.fixture(scope="session")
def small_cohort(small_config):
    from facepheno.synth import generate_cohort
    return generate_cohort(small_config)


@pytest.fixture(scope="session")
def small_dataset(small_cohort):
    from facepheno.cohort import build_dataset
    records, admins, _ = small_cohort
    return build_dataset(records, admins)


@pytest.fixture(scope="session")
def cohort_dir(small_config, tmp_path_factory):
    """The same cohort written to disk through the public writer."""
    from facepheno.synth import write_cohort
    out = tmp_path_factory.mktemp("cohort")
    write_cohort(small_config, out)
    return out
