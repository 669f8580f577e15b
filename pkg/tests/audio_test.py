import json
import logging
import struct

import numpy as np
import pytest

from mcreplay.detector.audio import (
    frame,
    load_manifest,
    load_record,
    load_wav,
    make_clip,
    records_for,
    replicate_channels,
    select_channels,
    select_segment,
    split_core,
    write_manifest,
    write_wav,
)
from mcreplay.detector.errors import InputError, ParseError, UnsupportedFormatError
from mcreplay.detector.wav import decode_wav, encode_wav, read_wav_file

_LOGGER = logging.getLogger(__name__)


def pcm_bytes(tag: int, channels: int, rate: int, bits: int, payload: bytes) -> bytes:
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def test_decode_full_scale_stereo():
    fmt, samples = decode_wav(pcm_bytes(1, 2, 44100, 16, struct.pack("<hh", 32767, -32768)))
    assert (fmt.channels, fmt.sample_rate, fmt.bit_depth) == (2, 44100, 16)
    assert samples.shape == (2, 1)
    assert samples[0, 0] == pytest.approx(0.99997, abs=1e-5)
    assert samples[1, 0] == -1.0


def test_load_mono_file(tmp_path):
    path = tmp_path / "mono.wav"
    path.write_bytes(pcm_bytes(1, 1, 16000, 16, struct.pack("<3h", 0, 100, -100)))
    clip = load_wav(path)
    assert clip.channels == 1 and clip.length == 3 and clip.sample_rate == 16000


def test_six_channel_32_bit_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    samples = rng.uniform(-1, 1 - 2**-31, size=(6, 500))
    path = tmp_path / "six.wav"
    write_wav(path, make_clip(samples, 44100, 32))
    fmt, decoded = read_wav_file(path)
    assert (fmt.channels, fmt.bit_depth) == (6, 32)
    np.testing.assert_allclose(decoded, samples, atol=2**-31, rtol=0)


def test_float_wav_is_unsupported():
    with pytest.raises(UnsupportedFormatError):
        decode_wav(pcm_bytes(3, 1, 44100, 32, np.zeros(4, "<f4").tobytes()))


def test_unsupported_bit_depth():
    with pytest.raises(UnsupportedFormatError):
        decode_wav(pcm_bytes(1, 1, 44100, 24, bytes(6)))
    with pytest.raises(UnsupportedFormatError):
        encode_wav(np.zeros((1, 4)), 44100, 8)


def test_malformed_headers():
    good = pcm_bytes(1, 1, 44100, 16, bytes(4))
    with pytest.raises(ParseError):
        decode_wav(b"RIFX" + good[4:])
    with pytest.raises(ParseError):
        decode_wav(good[:10])
    with pytest.raises(ParseError):
        decode_wav(good[:12])  # no chunks at all


def test_odd_sized_chunk_is_skipped_with_padding():
    data = pcm_bytes(1, 1, 44100, 16, struct.pack("<2h", 1000, -1000))
    # splice a 3-byte LIST chunk (plus its pad byte) before fmt
    extra = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    spliced = data[:12] + extra + data[12:]
    _, samples = decode_wav(spliced)
    np.testing.assert_array_equal(samples, [[1000 / 32768, -1000 / 32768]])


def clip_of(seconds: float, rate: int = 44100, channels: int = 1):
    n = int(round(seconds * rate))
    ramp = np.arange(n) / (2 * n)
    return make_clip(np.tile(ramp, (channels, 1)), rate)


def test_select_segment_beginning():
    clip = clip_of(3.0)
    segment = select_segment(clip, 1.0, "beginning")
    assert segment.length == 44100
    np.testing.assert_array_equal(segment.samples, clip.samples[:, :44100])


def test_select_segment_pads_short_clip():
    clip = clip_of(0.6)
    segment = select_segment(clip, 1.0)
    assert segment.length == 44100
    np.testing.assert_array_equal(segment.samples[:, :26460], clip.samples)
    assert not segment.samples[:, 26460:].any()


def test_select_segment_middle():
    clip = clip_of(3.0)
    segment = select_segment(clip, 1.0, "middle")
    np.testing.assert_array_equal(segment.samples, clip.samples[:, 44100:88200])


def test_select_segment_errors():
    with pytest.raises(InputError):
        select_segment(make_clip(np.zeros((1, 0)), 44100), 1.0)
    with pytest.raises(InputError):
        select_segment(clip_of(1.0), 0.0)
    with pytest.raises(InputError):
        select_segment(clip_of(1.0), 0.5, "end")


def test_frame_counts():
    batch = frame(clip_of(1.0, 44100, 2))
    assert batch.frames.shape == (50, 2, 882)
    assert frame(clip_of(1.0, 16000)).frames.shape == (50, 1, 320)
    assert frame(make_clip(np.zeros((1, 882)), 44100)).count == 1
    with pytest.raises(InputError):
        frame(make_clip(np.zeros((1, 881)), 44100))


def test_frame_layout():
    clip = make_clip(np.arange(2 * 1800).reshape(2, 1800) / 4000, 44100)
    batch = frame(clip)
    assert batch.count == 2
    np.testing.assert_array_equal(batch.frames[1, 0], clip.samples[0, 882:1764])
    np.testing.assert_array_equal(batch.frames[0, 1], clip.samples[1, :882])


def test_replicate_channels():
    clip = make_clip(np.random.default_rng(1).uniform(-0.5, 0.5, (3, 100)), 44100)
    one = replicate_channels(clip, 1)
    np.testing.assert_array_equal(one.samples, clip.samples[:1])
    four = replicate_channels(clip, 4)
    assert four.channels == 4
    for c in range(4):
        assert four.samples[c].tobytes() == clip.samples[0].tobytes()
    with pytest.raises(InputError):
        replicate_channels(clip, 0)


def test_select_channels():
    samples = np.random.default_rng(2).uniform(-0.5, 0.5, (4, 50))
    clip = make_clip(samples, 44100)
    np.testing.assert_array_equal(select_channels(clip, [1, 4, 2, 3][:3]).samples, samples[[0, 3, 1]])
    np.testing.assert_array_equal(select_channels(clip, [1, 2, 3, 4]).samples, samples)
    np.testing.assert_array_equal(select_channels(clip, [1]).samples, samples[:1])
    with pytest.raises(InputError):
        select_channels(clip, [5])
    with pytest.raises(InputError):
        select_channels(clip, [])


def test_make_clip_rejects_full_scale_and_channel_counts():
    with pytest.raises(InputError):
        make_clip(np.full((1, 4), 1.5), 44100)
    with pytest.raises(InputError):
        make_clip(np.zeros((9, 4)), 44100)


def write_records(tmp_path, labels_splits):
    records = []
    for i, (label, split) in enumerate(labels_splits):
        name = f"clip{i}.wav"
        write_wav(tmp_path / name, make_clip(np.full((2, 882), 0.01 * i), 44100))
        records.append(
            {"path": name, "label": label, "device": "d2", "speaker": f"s{i % 3}", "environment": "lab", "split": split}
        )
    write_manifest(tmp_path / "manifest.jsonl", records)
    return records


def test_manifest_round_trip_resolves_relative_paths(tmp_path):
    write_records(tmp_path, [("genuine", "train"), ("replayed", "eval")])
    records = load_manifest(tmp_path / "manifest.jsonl")
    assert [r["label"] for r in records] == ["genuine", "replayed"]
    assert records[0]["path"] == str(tmp_path / "clip0.wav")
    clip = load_record(records[1])
    assert clip.label == "replayed" and clip.device_id == "d2" and clip.channels == 2


def test_manifest_rejects_bad_rows(tmp_path):
    path = tmp_path / "manifest.jsonl"
    row = {"path": "a.wav", "label": "spoof", "device": "", "speaker": "", "environment": "", "split": "train"}
    path.write_text(json.dumps(row) + "\n")
    with pytest.raises(ParseError):
        load_manifest(path)
    path.write_text("{not json\n")
    with pytest.raises(ParseError):
        load_manifest(path)
    del row["split"]
    row["label"] = "genuine"
    path.write_text(json.dumps(row) + "\n")
    with pytest.raises(ParseError):
        load_manifest(path)


def core_records(n):
    return [
        {"path": f"{i}.wav", "label": "genuine" if i % 2 else "replayed", "device": "", "speaker": "", "environment": "", "split": "train"}
        for i in range(n)
    ] + [{"path": "e.wav", "label": "genuine", "device": "", "speaker": "", "environment": "", "split": "eval"}]


def test_split_core_is_seeded():
    records = core_records(40)
    first = split_core(records, 0.1, seed=3)
    assert len(records_for(first, "dev")) == 4
    assert len(records_for(first, "train")) == 36
    assert records_for(first, "eval") == records_for(records, "eval")
    assert first == split_core(records, 0.1, seed=3)
    assert all(r["split"] == "train" for r in records[:40])  # input untouched


def test_split_core_keeps_existing_dev():
    records = core_records(4)
    records[0]["split"] = "dev"
    assert split_core(records, 0.5, seed=1) == records
    with pytest.raises(InputError):
        split_core(core_records(1), 0.1)
