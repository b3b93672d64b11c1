"""Time-tagged photon streams and the PTAG interchange format.

A stream holds the arrival times of photons on the two detectors of a
Hanbury-Brown and Twiss setup, grouped into repeated experimental shots.
Timestamps are integer picoseconds measured from the shot trigger.

PTAG layout (little-endian)::

    header   b"PTAG" | u32 version | u64 shot_count | u64 shot_duration_ps
             | u64 bin_width_ps | u64 clock_resolution_ps           (40 bytes)
    per shot u64 tag_count, then tag_count records of
             u8 channel | u64 time_ps                             (9 bytes each)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    ConfigError,
    CorruptionError,
    FormatError,
    TimestampRangeError,
    ValidationError,
)

MAGIC = b"PTAG"
VERSION = 1
HEADER = struct.Struct("<4sIQQQQ")
COUNT = struct.Struct("<Q")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("time_ps", "<u8")])

__all__ = [
    "TagRecord",
    "TagStream",
    "BinnedCounts",
    "read_stream",
    "write_stream",
    "bin_counts",
]


@dataclass(frozen=True)
class TagRecord:
    channel: int
    time_ps: int


@dataclass(eq=False)
class TagStream:
    """Two-channel photon record segmented into shots.

    Tags are stored flat: ``channels[i]``, ``times[i]`` for
    ``offsets[s] <= i < offsets[s + 1]`` belong to shot ``s``.
    """

    shot_duration_ps: int
    bin_width_ps: int
    channels: np.ndarray
    times: np.ndarray
    offsets: np.ndarray
    clock_resolution_ps: int = 1
    version: int = VERSION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        self.times = np.ascontiguousarray(self.times, dtype=np.uint64)
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.shot_duration_ps = int(self.shot_duration_ps)
        self.bin_width_ps = int(self.bin_width_ps)
        self.clock_resolution_ps = int(self.clock_resolution_ps)

    # construction -------------------------------------------------------

    @classmethod
    def empty(cls, shot_duration_ps, bin_width_ps=1000, clock_resolution_ps=1, shots=0):
        return cls(
            shot_duration_ps,
            bin_width_ps,
            np.zeros(0, np.uint8),
            np.zeros(0, np.uint64),
            np.zeros(shots + 1, np.int64),
            clock_resolution_ps,
        )

    @classmethod
    def from_shots(
        cls,
        shots: Sequence[Iterable[tuple[int, int]]],
        shot_duration_ps: int,
        bin_width_ps: int = 1000,
        clock_resolution_ps: int = 1,
    ) -> "TagStream":
        """Build a stream from per-shot sequences of ``(channel, time_ps)``."""
        chans, times, counts = [], [], []
        for shot in shots:
            recs = list(shot)
            counts.append(len(recs))
            for rec in recs:
                ch, t = (rec.channel, rec.time_ps) if isinstance(rec, TagRecord) else rec
                chans.append(ch)
                times.append(t)
        offsets = np.concatenate([[0], np.cumsum(counts, dtype=np.int64)])
        stream = cls(
            shot_duration_ps,
            bin_width_ps,
            np.asarray(chans, dtype=np.uint8),
            np.asarray(times, dtype=np.uint64),
            offsets,
            clock_resolution_ps,
        )
        stream.validate()
        return stream

    @classmethod
    def from_arrays(cls, shot_index, channels, times, shot_count, shot_duration_ps,
                    bin_width_ps=1000, clock_resolution_ps=1, sort=True):
        """Build a stream from flat per-tag arrays; tags are sorted per shot."""
        shot_index = np.asarray(shot_index, dtype=np.int64)
        channels = np.asarray(channels, dtype=np.uint8)
        times = np.asarray(times, dtype=np.uint64)
        if sort and len(times):
            order = np.lexsort((channels, times, shot_index))
            shot_index, channels, times = shot_index[order], channels[order], times[order]
        counts = np.bincount(shot_index, minlength=shot_count) if len(shot_index) else np.zeros(shot_count, np.int64)
        if len(counts) > shot_count:
            raise ValidationError("shot index out of range")
        offsets = np.concatenate([[0], np.cumsum(counts)])
        stream = cls(shot_duration_ps, bin_width_ps, channels, times, offsets, clock_resolution_ps)
        stream.validate()
        return stream

    # access -------------------------------------------------------------

    @property
    def shot_count(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_tags(self) -> int:
        return len(self.times)

    @property
    def n_bins(self) -> int:
        return self.shot_duration_ps // self.bin_width_ps

    def shot(self, i: int) -> np.ndarray:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        rec = np.empty(hi - lo, RECORD_DTYPE)
        rec["channel"] = self.channels[lo:hi]
        rec["time_ps"] = self.times[lo:hi]
        return rec

    @property
    def shots(self) -> list[np.ndarray]:
        return [self.shot(i) for i in range(self.shot_count)]

    def shot_index(self) -> np.ndarray:
        """Shot number of every tag."""
        return np.repeat(np.arange(self.shot_count), np.diff(self.offsets))

    def channel_count(self, channel: int) -> int:
        return int(np.count_nonzero(self.channels == channel))

    def select_shots(self, index) -> "TagStream":
        """Sub-stream made of the given shots, in the given order."""
        index = np.asarray(index, dtype=np.int64)
        counts = np.diff(self.offsets)[index]
        starts = self.offsets[index]
        take = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts) + np.arange(counts.sum())
        return TagStream(
            self.shot_duration_ps, self.bin_width_ps,
            self.channels[take], self.times[take],
            np.concatenate([[0], np.cumsum(counts)]),
            self.clock_resolution_ps, self.version, dict(self.metadata),
        )

    def with_channels_swapped(self) -> "TagStream":
        return TagStream(
            self.shot_duration_ps, self.bin_width_ps, 3 - self.channels, self.times.copy(),
            self.offsets.copy(), self.clock_resolution_ps, self.version, dict(self.metadata),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            self.shot_duration_ps == other.shot_duration_ps
            and self.bin_width_ps == other.bin_width_ps
            and self.clock_resolution_ps == other.clock_resolution_ps
            and self.version == other.version
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.times, other.times)
        )

    def __repr__(self) -> str:
        return (f"TagStream(shots={self.shot_count}, tags={self.n_tags}, "
                f"shot_duration_ps={self.shot_duration_ps}, bin_width_ps={self.bin_width_ps})")

    # invariants ---------------------------------------------------------

    def validate(self, order_error=ValidationError, range_error=ValidationError) -> "TagStream":
        _check_header(self.shot_duration_ps, self.bin_width_ps, self.clock_resolution_ps, ValidationError)
        off = self.offsets
        if len(off) < 1 or off[0] != 0 or off[-1] != len(self.times) or np.any(np.diff(off) < 0):
            raise ValidationError("shot offsets inconsistent with tag arrays")
        if len(self.channels) != len(self.times):
            raise ValidationError("channel and time arrays differ in length")
        if len(self.times) == 0:
            return self
        bad = (self.channels != 1) & (self.channels != 2)
        if bad.any():
            raise order_error(f"channel {int(self.channels[bad][0])} not in {{1, 2}}")
        decreasing = self.times[1:] < self.times[:-1]
        if decreasing.any():
            # a decrease is legal only across a shot boundary
            starts = np.zeros(len(self.times), bool)
            starts[off[1:-1][off[1:-1] < len(self.times)]] = True
            if np.any(decreasing & ~starts[1:]):
                raise order_error("tags not sorted by time within a shot")
        if self.times.max() >= np.uint64(self.shot_duration_ps):
            raise range_error(
                f"timestamp {int(self.times.max())} ps >= shot duration {self.shot_duration_ps} ps")
        return self


def _check_header(duration, bin_width, clock, exc):
    if duration <= 0 or bin_width <= 0 or clock <= 0:
        raise exc("shot duration, bin width and clock resolution must be positive")
    if duration % bin_width:
        raise exc(f"bin width {bin_width} ps does not divide shot duration {duration} ps")


def write_stream(stream: TagStream, path) -> None:
    stream.validate()
    rec = np.empty(stream.n_tags, RECORD_DTYPE)
    rec["channel"] = stream.channels
    rec["time_ps"] = stream.times
    raw = rec.tobytes()
    parts = [HEADER.pack(MAGIC, VERSION, stream.shot_count, stream.shot_duration_ps,
                         stream.bin_width_ps, stream.clock_resolution_ps)]
    size = RECORD_DTYPE.itemsize
    off = stream.offsets
    for s in range(stream.shot_count):
        parts.append(COUNT.pack(int(off[s + 1] - off[s])))
        parts.append(raw[off[s] * size: off[s + 1] * size])
    Path(path).write_bytes(b"".join(parts))


def read_stream(path) -> TagStream:
    buf = Path(path).read_bytes()
    if len(buf) < HEADER.size or buf[:4] != MAGIC:
        raise FormatError(f"{path}: not a PTAG file")
    magic, version, n_shots, duration, bin_width, clock = HEADER.unpack_from(buf)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported PTAG version {version}")
    try:
        _check_header(duration, bin_width, clock, FormatError)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None

    size = RECORD_DTYPE.itemsize
    counts = np.empty(n_shots, np.int64)
    starts = np.empty(n_shots, np.int64)
    pos = HEADER.size
    end = len(buf)
    unpack = COUNT.unpack_from
    for s in range(n_shots):
        if pos + 8 > end:
            raise FormatError(f"{path}: truncated at shot {s}")
        n = unpack(buf, pos)[0]
        pos += 8
        starts[s] = pos
        counts[s] = n
        pos += n * size
    if pos != end:
        raise FormatError(f"{path}: {end - pos:+d} bytes of payload mismatch")

    total = int(counts.sum())
    channels = np.empty(total, np.uint8)
    times = np.empty(total, np.uint64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    for s in range(n_shots):
        n = counts[s]
        if n:
            rec = np.frombuffer(buf, RECORD_DTYPE, count=n, offset=starts[s])
            channels[offsets[s]:offsets[s + 1]] = rec["channel"]
            times[offsets[s]:offsets[s + 1]] = rec["time_ps"]
    stream = TagStream(duration, bin_width, channels, times, offsets, clock, version)
    stream.validate(order_error=CorruptionError, range_error=TimestampRangeError)
    return stream


@dataclass
class BinnedCounts:
    bin_width_ps: int
    counts_ch1: np.ndarray
    counts_ch2: np.ndarray

    @property
    def bin_start_ps(self) -> np.ndarray:
        return np.arange(len(self.counts_ch1), dtype=np.int64) * self.bin_width_ps

    def to_csv(self, path) -> None:
        from ._csv import write_columns

        write_columns(path, ["bin_start_ps", "n1", "n2"],
                      [self.bin_start_ps, self.counts_ch1, self.counts_ch2])


def bin_counts(stream: TagStream, bin_width_ps: int | None = None) -> BinnedCounts:
    """Per-bin totals of each channel, summed over shots.

    A tag exactly on a bin edge goes to the later bin.
    """
    w = int(bin_width_ps or stream.bin_width_ps)
    if w <= 0 or stream.shot_duration_ps % w:
        raise ConfigError(f"bin width {w} ps does not divide shot duration {stream.shot_duration_ps} ps")
    n_bins = stream.shot_duration_ps // w
    idx = (stream.times // np.uint64(w)).astype(np.int64)
    ch1 = stream.channels == 1
    return BinnedCounts(
        w,
        np.bincount(idx[ch1], minlength=n_bins).astype(np.int64),
        np.bincount(idx[~ch1], minlength=n_bins).astype(np.int64),
    )
