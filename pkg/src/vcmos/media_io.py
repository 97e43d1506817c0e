"""Uncompressed video access: YUV4MPEG2 streams and PGM frame dumps.

Only 8-bit 4:2:0 is supported. Compressed recordings have to be converted
beforehand, e.g. ``ffmpeg -i call.mp4 -pix_fmt yuv420p call.y4m``.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

SIGNATURE = b"YUV4MPEG2"
FRAME_TAG = b"FRAME"

# Every 8-bit 4:2:0 chroma siting variant is the same layout for our purposes.
_SUPPORTED_COLORSPACES = {"420", "420jpeg", "420paldv", "420mpeg2"}


class VideoFormatError(ValueError):
    """Malformed or unsupported video data."""


@dataclass(frozen=True)
class VideoHeader:
    width: int
    height: int
    fps_num: int = 30
    fps_den: int = 1
    colorspace: str = "YUV420_8bit"
    extra_tags: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise VideoFormatError(f"non-positive dimensions {self.width}x{self.height}")
        if self.width % 2 or self.height % 2:
            raise VideoFormatError(
                f"odd-width-for-420: {self.width}x{self.height} must be even for 4:2:0"
            )
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise VideoFormatError(f"invalid frame rate {self.fps_num}:{self.fps_den}")
        if self.colorspace != "YUV420_8bit":
            raise VideoFormatError(f"unsupported colorspace {self.colorspace!r}")

    @property
    def fps(self) -> Fraction:
        return Fraction(self.fps_num, self.fps_den)

    @property
    def luma_size(self) -> int:
        return self.width * self.height

    @property
    def chroma_shape(self) -> tuple[int, int]:
        return self.height // 2, self.width // 2

    @property
    def frame_size(self) -> int:
        ch, cw = self.chroma_shape
        return self.luma_size + 2 * ch * cw

    def to_bytes(self) -> bytes:
        tags = [f"W{self.width}", f"H{self.height}", f"F{self.fps_num}:{self.fps_den}"]
        tags += [t for t in self.extra_tags if t[:1] not in "WHFC"]
        tags.append("C420jpeg")
        return SIGNATURE + b" " + " ".join(tags).encode("ascii") + b"\n"


@dataclass
class YUVFrame:
    """One 8-bit 4:2:0 frame. ``y`` is (H, W), ``u`` and ``v`` are (H/2, W/2)."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def from_luma(cls, y: np.ndarray) -> "YUVFrame":
        y = np.ascontiguousarray(y, dtype=np.uint8)
        h, w = y.shape
        gray = np.full((h // 2, w // 2), 128, dtype=np.uint8)
        return cls(y, gray, gray.copy())

    def copy(self) -> "YUVFrame":
        return YUVFrame(self.y.copy(), self.u.copy(), self.v.copy())

    def __eq__(self, other):
        if not isinstance(other, YUVFrame):
            return NotImplemented
        return (
            np.array_equal(self.y, other.y)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
        )


def parse_header(stream: BinaryIO) -> VideoHeader:
    """Read the stream header line and leave ``stream`` at the first FRAME marker."""
    line = stream.readline()
    if not line.endswith(b"\n"):
        raise VideoFormatError("truncated or missing YUV4MPEG2 header line")
    parts = line.rstrip(b"\n").split(b" ")
    if parts[0] != SIGNATURE:
        raise VideoFormatError(f"bad signature {parts[0][:16]!r}, expected {SIGNATURE!r}")

    width = height = None
    fps_num, fps_den = 30, 1
    extra = []
    for raw in parts[1:]:
        if not raw:
            continue
        tag = raw.decode("ascii", errors="replace")
        key, value = tag[0], tag[1:]
        try:
            if key == "W":
                width = int(value)
            elif key == "H":
                height = int(value)
            elif key == "F":
                num, den = value.split(":")
                fps_num, fps_den = int(num), int(den)
            elif key == "C":
                if value not in _SUPPORTED_COLORSPACES:
                    raise VideoFormatError(f"unsupported colorspace C{value}; only 8-bit 4:2:0")
            else:
                extra.append(tag)
        except ValueError as exc:
            if isinstance(exc, VideoFormatError):
                raise
            raise VideoFormatError(f"malformed header tag {tag!r}") from exc
    if width is None or height is None:
        raise VideoFormatError("header lacks W or H tag")
    return VideoHeader(width, height, fps_num, fps_den, extra_tags=tuple(extra))


class Y4MReader:
    """Sequential frame reader over an open binary stream or a path."""

    def __init__(self, source):
        if isinstance(source, (str, os.PathLike)):
            self._stream = open(source, "rb")
            self._owns = True
        else:
            self._stream = source
            self._owns = False
        self.header = parse_header(self._stream)
        self.frames_read = 0

    def read_frame(self) -> YUVFrame | None:
        line = self._stream.readline()
        if not line:
            return None
        if not line.startswith(FRAME_TAG) or not line.endswith(b"\n"):
            raise VideoFormatError(f"expected FRAME marker at frame {self.frames_read}")
        h = self.header
        payload = self._stream.read(h.frame_size)
        if len(payload) != h.frame_size:
            raise VideoFormatError(
                f"truncated frame {self.frames_read}: got {len(payload)} of {h.frame_size} bytes"
            )
        buf = np.frombuffer(payload, dtype=np.uint8)
        ch, cw = h.chroma_shape
        n_c = ch * cw
        y = buf[: h.luma_size].reshape(h.height, h.width).copy()
        u = buf[h.luma_size : h.luma_size + n_c].reshape(ch, cw).copy()
        v = buf[h.luma_size + n_c :].reshape(ch, cw).copy()
        self.frames_read += 1
        return YUVFrame(y, u, v)

    def next_frame(self) -> np.ndarray | None:
        """Luma plane of the next frame, or None at end of stream."""
        frame = self.read_frame()
        return None if frame is None else frame.y

    def __iter__(self) -> Iterator[YUVFrame]:
        while (frame := self.read_frame()) is not None:
            yield frame

    def close(self):
        if self._owns:
            self._stream.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _as_yuv(frame) -> YUVFrame:
    if isinstance(frame, YUVFrame):
        return frame
    arr = np.asarray(frame)
    if arr.ndim != 2:
        raise VideoFormatError(f"expected 2-D luma plane, got shape {arr.shape}")
    return YUVFrame.from_luma(arr)


def write_video(header: VideoHeader, frames: Iterable, stream: BinaryIO | None = None) -> bytes | None:
    """Serialize ``frames`` (YUVFrame or 2-D luma arrays) as YUV4MPEG2.

    Luma-only frames get neutral chroma. Returns the bytes when no stream is given.
    """
    out = io.BytesIO() if stream is None else stream
    out.write(header.to_bytes())
    ch_shape = header.chroma_shape
    for i, frame in enumerate(frames):
        f = _as_yuv(frame)
        if f.y.shape != (header.height, header.width) or f.u.shape != ch_shape or f.v.shape != ch_shape:
            raise VideoFormatError(
                f"frame {i} has luma shape {f.y.shape}, header says {(header.height, header.width)}"
            )
        out.write(FRAME_TAG + b"\n")
        for plane in (f.y, f.u, f.v):
            out.write(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())
    if stream is None:
        return out.getvalue()
    return None


def read_video(path) -> tuple[VideoHeader, list[YUVFrame]]:
    """Load a whole Y4M file, or a directory of PGM frames, into memory."""
    path = Path(path)
    if path.is_dir():
        frames = [YUVFrame.from_luma(read_pgm(p)) for p in sorted(path.glob("*.pgm"))]
        if not frames:
            raise VideoFormatError(f"no .pgm frames in {path}")
        h, w = frames[0].y.shape
        return VideoHeader(w, h), frames
    with Y4MReader(path) as reader:
        return reader.header, list(reader)


def save_video(path, header: VideoHeader, frames: Iterable) -> None:
    with open(path, "wb") as fh:
        write_video(header, frames, fh)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    # header: magic, width, height, maxval separated by whitespace, comments allowed
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise VideoFormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise VideoFormatError(f"{path}: only 8-bit PGM supported")
    pos += 1
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise VideoFormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, luma: np.ndarray) -> None:
    luma = np.ascontiguousarray(luma, dtype=np.uint8)
    h, w = luma.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + luma.tobytes())
