import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trr_snn.autograd import Tensor
from trr_snn.data import (
    EVENT_DTYPE, HEADER, MOVING_BAR_SPEEDS, EventStream, SyntheticDatasetSpec, deserialize_events,
    downsample_spatial, encode_static, fixed_count_sizes, frames_to_events, generate_synthetic, integrate_frames,
    load_dataset, moving_bar_class, parse_event_file, render_moving_bar, save_dataset, serialize_events,
    write_event_csv, write_event_file,
)
from trr_snn.errors import ContractError, DataError, DimensionError, ParseError


def random_stream(n, width=34, height=34, seed=0):
    rng = np.random.default_rng(seed)
    events = np.zeros(n, dtype=EVENT_DTYPE)
    events["t"] = np.sort(rng.integers(0, 2 ** 32 - 1, size=n, dtype=np.uint64)).astype(np.uint32)
    events["p"] = rng.integers(0, 2, size=n)
    events["x"] = rng.integers(0, width, size=n)
    events["y"] = rng.integers(0, height, size=n)
    return EventStream(width, height, events)


@st.composite
def streams(draw, max_events=200):
    width = draw(st.integers(1, 300))
    height = draw(st.integers(1, 300))
    n = draw(st.integers(0, max_events))
    ts = sorted(draw(st.lists(st.integers(0, 2 ** 32 - 1), min_size=n, max_size=n)))
    records = [(t, draw(st.integers(0, 1)), draw(st.integers(0, width - 1)), draw(st.integers(0, height - 1)))
               for t in ts]
    return EventStream.from_records(records, width, height)


def test_binary_round_trip_on_10k_records(tmp_path):
    stream = random_stream(10_000)
    blob = serialize_events(stream)
    assert len(blob) == HEADER.size + 9 * 10_000
    assert deserialize_events(blob) == stream
    write_event_file(stream, tmp_path / "s.evt")
    assert parse_event_file(tmp_path / "s.evt") == stream
    assert serialize_events(parse_event_file(tmp_path / "s.evt")) == blob


def test_csv_round_trip(tmp_path):
    stream = random_stream(500, seed=1)
    write_event_csv(stream, tmp_path / "s.csv")
    assert parse_event_file(tmp_path / "s.csv") == stream


@given(streams())
@settings(max_examples=80, deadline=None)
def test_round_trip_property(stream):
    assert deserialize_events(serialize_events(stream)) == stream
    assert deserialize_events(serialize_events(stream)).records() == stream.records()


def test_record_layout_is_packed_little_endian():
    stream = EventStream.from_records([(0x01020304, 1, 0x0506, 0x0007)], width=0x0600, height=8)
    blob = serialize_events(stream)
    assert blob[:6] == b"TRREVT" and blob[6] == 1
    assert blob[16:] == bytes([4, 3, 2, 1, 1, 6, 5, 7, 0])


def test_parse_errors_report_offsets():
    blob = serialize_events(random_stream(3))
    with pytest.raises(ParseError, match="offset 0"):
        deserialize_events(b"XXXXXX" + blob[6:])
    with pytest.raises(ParseError, match="offset 10"):
        deserialize_events(blob[:10])
    with pytest.raises(ParseError, match=f"offset {16 + 9 * 2}"):
        deserialize_events(blob[:-4])
    corrupt = bytearray(blob)
    corrupt[16 + 9 + 4] = 7  # polarity of record 1
    with pytest.raises(ParseError, match=f"offset {16 + 9}"):
        deserialize_events(bytes(corrupt))


def test_csv_errors(tmp_path):
    (tmp_path / "a.csv").write_text("t,p,x,y\n1,0,0,0\nbad,row\n")
    with pytest.raises(ParseError, match="offset 16"):
        parse_event_file(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("x,y\n")
    with pytest.raises(ParseError):
        parse_event_file(tmp_path / "b.csv")


def test_validation_catches_regressions_and_bounds():
    with pytest.raises(DataError, match="regression at record 2"):
        EventStream.from_records([(5, 0, 0, 0), (6, 0, 0, 0), (4, 0, 0, 0)], 2, 2)
    with pytest.raises(DataError, match="outside"):
        EventStream.from_records([(0, 0, 2, 0)], 2, 2)
    with pytest.raises(DataError, match="polarity"):
        EventStream(2, 2, np.array([(0, 2, 0, 0)], dtype=EVENT_DTYPE)).validate()


@pytest.mark.parametrize("policy", ["fixed_count", "fixed_duration"])
@given(stream=streams(max_events=300), T=st.integers(1, 9))
@settings(max_examples=60, deadline=None)
def test_integration_conserves_counts(policy, stream, T):
    if policy == "fixed_count" and len(stream) == 0:
        with pytest.raises(DataError):
            integrate_frames(stream, T, policy)
        return
    frames = integrate_frames(stream, T, policy)
    assert frames.shape == (T, 2, stream.height, stream.width)
    assert frames.sum(dtype=np.float64) == len(stream)
    for p in (0, 1):
        assert frames[:, p].sum(dtype=np.float64) == int((stream.events["p"] == p).sum())


def test_fixed_count_slice_sizes():
    assert fixed_count_sizes(10, 4) == [3, 3, 2, 2]
    assert fixed_count_sizes(11, 5) == [3, 2, 2, 2, 2]
    for n in range(0, 60):
        for T in range(1, 9):
            sizes = fixed_count_sizes(n, T)
            assert sum(sizes) == n and max(sizes) - min(sizes) <= 1


def test_fixed_count_frames_follow_sizes():
    stream = random_stream(11, seed=2)
    frames = integrate_frames(stream, 5)
    assert [int(frames[t].sum()) for t in range(5)] == [3, 2, 2, 2, 2]


def test_fixed_duration_bins_by_time():
    stream = EventStream.from_records([(0, 0, 0, 0), (49, 1, 0, 0), (50, 0, 1, 0), (100, 0, 1, 1)], 2, 2)
    frames = integrate_frames(stream, 2, "fixed_duration")
    assert frames[0].sum() == 2 and frames[1].sum() == 2
    with pytest.raises(ContractError):
        integrate_frames(stream, 2, "adaptive")


def test_downsample_and_frame_expansion_conserve_counts():
    rng = np.random.default_rng(3)
    frames = rng.integers(0, 3, size=(3, 2, 8, 8)).astype(np.float32)
    assert downsample_spatial(frames, 4).sum() == frames.sum()
    with pytest.raises(DimensionError):
        downsample_spatial(frames, 3)
    stream = frames_to_events(frames)
    stream.validate()
    np.testing.assert_array_equal(integrate_frames(stream, 3, "fixed_duration"), frames)


def test_encode_static_repeats():
    x = np.arange(8.0).reshape(1, 2, 2, 2)
    out = encode_static(Tensor(x), 3).data
    assert out.shape == (3, 1, 2, 2, 2)
    for t in range(3):
        np.testing.assert_array_equal(out[t], x)
    with pytest.raises(ContractError):
        encode_static(Tensor(x), 0)


def test_reversed_bar_is_the_opposite_direction():
    angle, speed = moving_bar_class(3, 10)
    assert speed == MOVING_BAR_SPEEDS[1]
    forward = render_moving_bar(angle, 1, speed, (8.0, 8.0), 5, 16, 16, 1.5, 8.0)
    backward = render_moving_bar(angle, -1, speed, (8.0, 8.0), 5, 16, 16, 1.5, 8.0)
    np.testing.assert_array_equal(forward[::-1], backward)
    assert forward.sum() > 0 and not np.array_equal(forward[0], forward[-1])


def test_synthetic_dataset_is_seeded_balanced_and_split(tmp_path):
    spec = SyntheticDatasetSpec(samples_per_class=8, test_fraction=0.25, seed=5)
    train, test = generate_synthetic(spec)
    again, _ = generate_synthetic(spec)
    assert train.x.tobytes() == again.x.tobytes()
    assert train.x.shape == (60, 5, 2, 16, 16) and test.x.shape == (20, 5, 2, 16, 16)
    assert np.bincount(test.y).tolist() == [2] * 10
    assert train.batch_input(np.arange(4)).shape == (5, 4, 2, 16, 16)
    save_dataset(test, tmp_path / "t.npz")
    loaded = load_dataset(tmp_path / "t.npz")
    assert loaded.mode == "temporal" and np.array_equal(loaded.x, test.x)


def test_static_dataset_and_spec_validation():
    train, _ = generate_synthetic(SyntheticDatasetSpec(kind="static_blobs", samples_per_class=4))
    assert train.mode == "static" and train.x.ndim == 4
    with pytest.raises(ContractError):
        SyntheticDatasetSpec(kind="moving_bar", num_classes=5).validate()
    with pytest.raises(ContractError):
        SyntheticDatasetSpec(test_fraction=1.0).validate()
