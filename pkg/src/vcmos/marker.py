"""Frame-index fiducial markers ("VCMK1" layout).

Each marker is a 12x12 grid of square cells: an outer white quiet zone, a
black sync ring, and 8x8 data cells. The 64 data bits hold a 32-bit payload
(24-bit big-endian frame index followed by its CRC-8) written twice, row
major, MSB first; bit 1 is a black cell. Two identical markers are drawn, at
the top-left and bottom-right corners, each inset by ``margin`` pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAYOUT_VERSION = "VCMK1"
DATA_CELLS = 8
GRID_CELLS = DATA_CELLS + 4  # sync ring + quiet zone on each side
BLACK = 16
WHITE = 235
MAX_INDEX = 1 << 24

# Markers whose quiet-zone/sync-ring contrast falls below this are not read.
MIN_CONTRAST = 32.0
# Fraction of ring cells that must fall on the expected side of the threshold.
MIN_RING_AGREEMENT = 0.85


class MarkerError(ValueError):
    pass


def _make_crc_table(poly=0x07):
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _make_crc_table()


def crc8(data: bytes) -> int:
    """CRC-8 with polynomial 0x07, zero init, no reflection, no final xor."""
    crc = 0
    for b in bytes(data):
        crc = _CRC_TABLE[crc ^ b]
    return crc


@dataclass(frozen=True)
class MarkerConfig:
    cell_size: int = 8
    margin: int = 16

    def __post_init__(self):
        if self.cell_size < 2:
            raise MarkerError(f"cell_size must be >= 2, got {self.cell_size}")
        if self.margin < 0:
            raise MarkerError(f"margin must be >= 0, got {self.margin}")

    @property
    def footprint(self) -> int:
        return GRID_CELLS * self.cell_size

    def origins(self, height: int, width: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """(row, col) of the top-left and bottom-right marker footprints."""
        fp, m = self.footprint, self.margin
        if fp + m > height or fp + m > width:
            raise MarkerError(
                f"footprint-overflow: marker needs {fp + m}px from the corner "
                f"({GRID_CELLS} cells x {self.cell_size}px + {m}px margin), frame is {width}x{height}"
            )
        tl = (m, m)
        br = (height - m - fp, width - m - fp)
        overlap_rows = br[0] < tl[0] + fp
        overlap_cols = br[1] < tl[1] + fp
        if overlap_rows and overlap_cols:
            raise MarkerError(f"footprint-overflow: markers overlap in a {width}x{height} frame")
        return tl, br

    def check_frame(self, height: int, width: int) -> None:
        self.origins(height, width)


def encode_payload(frame_index: int) -> np.ndarray:
    """64 data bits (uint8 0/1), row-major over the 8x8 grid."""
    if not 0 <= frame_index < MAX_INDEX:
        raise MarkerError(f"frame index {frame_index} outside [0, 2^24)")
    index_bytes = int(frame_index).to_bytes(3, "big")
    payload = (int(frame_index) << 8) | crc8(index_bytes)
    word = np.array([(payload >> (31 - k)) & 1 for k in range(32)], dtype=np.uint8)
    return np.concatenate([word, word])


def _payload_from_bits(bits) -> int | None:
    word = 0
    for b in bits:
        word = (word << 1) | int(b)
    index, crc = word >> 8, word & 0xFF
    if crc8(index.to_bytes(3, "big")) != crc:
        return None
    return index


def marker_cells(frame_index: int) -> np.ndarray:
    """Full 12x12 cell grid: True where the cell is black."""
    grid = np.zeros((GRID_CELLS, GRID_CELLS), dtype=bool)
    grid[1:-1, 1:-1] = True
    grid[2:-2, 2:-2] = encode_payload(frame_index).reshape(DATA_CELLS, DATA_CELLS).astype(bool)
    return grid


def render_markers(frame: np.ndarray, frame_index: int, config: MarkerConfig = MarkerConfig()) -> np.ndarray:
    """Return a copy of the luma ``frame`` with both markers stamped in."""
    frame = np.asarray(frame)
    h, w = frame.shape
    origins = config.origins(h, w)
    cells = marker_cells(frame_index)
    block = np.where(cells, BLACK, WHITE).astype(np.uint8)
    block = np.repeat(np.repeat(block, config.cell_size, axis=0), config.cell_size, axis=1)
    out = frame.astype(np.uint8, copy=True)
    fp = config.footprint
    for r, c in origins:
        out[r : r + fp, c : c + fp] = block
    return out


def _sample_cells(frame: np.ndarray, origin, cs: int) -> np.ndarray:
    """3x3 mean around each cell centre, shape (12, 12)."""
    r0, c0 = origin
    half = 1 if cs >= 3 else 0
    centres = np.arange(GRID_CELLS) * cs + cs // 2
    rows = r0 + centres
    cols = c0 + centres
    acc = np.zeros((GRID_CELLS, GRID_CELLS), dtype=np.float64)
    n = 0
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            acc += frame[np.ix_(rows + dr, cols + dc)]
            n += 1
    return acc / n


_RING_SYNC = np.zeros((GRID_CELLS, GRID_CELLS), dtype=bool)
_RING_SYNC[1:-1, 1:-1] = True
_RING_SYNC[2:-2, 2:-2] = False
_RING_QUIET = np.ones((GRID_CELLS, GRID_CELLS), dtype=bool)
_RING_QUIET[1:-1, 1:-1] = False


def _decode_marker(frame: np.ndarray, origin, cs: int) -> int | None:
    samples = _sample_cells(frame, origin, cs)
    black = samples[_RING_SYNC]
    white = samples[_RING_QUIET]
    if white.mean() - black.mean() < MIN_CONTRAST:
        return None
    threshold = 0.5 * (white.mean() + black.mean())
    if (black < threshold).mean() < MIN_RING_AGREEMENT or (white > threshold).mean() < MIN_RING_AGREEMENT:
        return None
    data = samples[2:-2, 2:-2].ravel()
    first, second = data[:32], data[32:]
    # soft vote first, then each repetition on its own
    for values in (0.5 * (first + second), first, second):
        index = _payload_from_bits(values < threshold)
        if index is not None:
            return index
    return None


def decode_frame_index(frame: np.ndarray, config: MarkerConfig = MarkerConfig()):
    """Read the frame index from a (possibly degraded) luma frame.

    Returns ``(index, "both" | "single")`` or ``None`` when neither marker
    decodes or the two markers disagree.
    """
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape
    try:
        origins = config.origins(h, w)
    except MarkerError:
        return None
    found = [_decode_marker(frame, o, config.cell_size) for o in origins]
    hits = [i for i in found if i is not None]
    if len(hits) == 2:
        return (hits[0], "both") if hits[0] == hits[1] else None
    if len(hits) == 1:
        return hits[0], "single"
    return None
