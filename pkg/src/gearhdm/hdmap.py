"""Health data map construction from difference signals.

The map is an N_R x N_P grid (ring tooth x planet tooth) holding the
peak difference-signal amplitude observed while each tooth pair was in
mesh. Meshing event k (1-based) pairs ring tooth ((k-1) mod N_R) + 1
with planet tooth ((k-1) mod N_P) + 1; for coprime tooth counts one
hunting cycle visits every pair exactly once, so the grid fills
completely from a single averaged cycle.

Grids are stored with the ring-tooth axis first, i.e. ``grid[tr-1, tp-1]``
with shape (N_R, N_P) = (95, 31) for the default gear set. Plotted as an
image with the planet axis vertical, a worn planet tooth appears as a
horizontally long-thin band.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .gearsim import FormatError, GearGeometry
from .preprocess import DifferenceSignal

HDM1_MAGIC = b"HDM1"
SIGNATURE_LABEL = 255


class HDMapError(ValueError):
    pass


def hunting_length(ring_teeth: int, planet_teeth: int) -> int:
    """Meshing events before the ring/planet tooth pairing repeats."""
    if ring_teeth < 1 or planet_teeth < 1:
        raise HDMapError("tooth counts must be positive")
    return ring_teeth * planet_teeth // math.gcd(ring_teeth, planet_teeth)


@dataclass(frozen=True)
class MeshingIndex:
    """Tooth pair in mesh at a given meshing event."""

    event: int
    ring_tooth: int
    planet_tooth: int


def meshing_sequence(k: int, ring_teeth: int, planet_teeth: int) -> MeshingIndex:
    """Tooth pair engaged at meshing event ``k`` (1-based)."""
    if k < 1:
        raise HDMapError(f"meshing events are 1-based, got k={k}")
    return MeshingIndex(
        event=k,
        ring_tooth=(k - 1) % ring_teeth + 1,
        planet_tooth=(k - 1) % planet_teeth + 1,
    )


@dataclass
class HDMap:
    """Peak difference-signal amplitude per (ring, planet) tooth pair."""

    grid: np.ndarray            # (ring_teeth, planet_teeth), nonnegative
    geometry: GearGeometry
    provenance: str = ""

    def __post_init__(self):
        expect = (self.geometry.ring_teeth, self.geometry.planet_teeth)
        if self.grid.shape != expect:
            raise HDMapError(f"grid shape {self.grid.shape} != {expect}")


def build_hdmap(dif: DifferenceSignal, geometry: GearGeometry,
                provenance: str = "") -> HDMap:
    """Aggregate one hunting cycle of difference signal into the map.

    Each meshing event contributes the maximum absolute value of its
    ``samples_per_mesh`` window; the absolute value makes fault energy
    sign-independent. ``dif.start_event`` shifts the tooth-pair indexing
    so session slices keep the absolute tooth phase.
    """
    spm = dif.samples_per_mesh
    hl = geometry.hunting_length
    if len(dif.values) != hl * spm:
        raise HDMapError(
            f"difference signal length {len(dif.values)} != one hunting "
            f"cycle ({hl} events x {spm} samples)"
        )
    peaks = np.abs(np.asarray(dif.values)).reshape(hl, spm).max(axis=1)
    events = dif.start_event + np.arange(1, hl + 1, dtype=np.int64)
    rows = (events - 1) % geometry.ring_teeth
    cols = (events - 1) % geometry.planet_teeth
    grid = np.zeros((geometry.ring_teeth, geometry.planet_teeth), dtype=np.float32)
    grid[rows, cols] = peaks
    return HDMap(grid=grid, geometry=geometry, provenance=provenance)


@dataclass
class HDMapDataset:
    """A labelled stack of maps sharing one grid shape.

    Labels: 0 normal, 1 fault level 1, 2 fault level 2, 255 fault
    signature.
    """

    maps: np.ndarray    # (n, rows, cols) float32
    labels: np.ndarray  # (n,) uint8
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.maps = np.ascontiguousarray(self.maps, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.maps.ndim != 3 or len(self.maps) != len(self.labels):
            raise HDMapError("maps must be (n, rows, cols) matching labels")

    def __len__(self) -> int:
        return len(self.maps)

    def select(self, label: int) -> np.ndarray:
        return self.maps[self.labels == label]


def write_hdm1(dataset: HDMapDataset, path) -> None:
    """HDM1 file: magic, u32 rows, u32 cols, u32 count, then per sample a
    u8 label followed by the row-major f32 grid. Bit-exact round trip."""
    n, rows, cols = dataset.maps.shape
    buf = io.BytesIO()
    buf.write(HDM1_MAGIC)
    buf.write(np.asarray([rows, cols, n], dtype="<u4").tobytes())
    for label, grid in zip(dataset.labels, dataset.maps):
        buf.write(np.uint8(label).tobytes())
        buf.write(grid.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_hdm1(path) -> HDMapDataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != HDM1_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0 (want HDM1)")
    header = np.frombuffer(data, "<u4", 3, 4)
    rows, cols, n = (int(v) for v in header)
    stride = 1 + 4 * rows * cols
    if len(data) != 16 + n * stride:
        raise FormatError(
            f"{path}: size {len(data)} != expected {16 + n * stride} "
            f"(mismatch from byte {min(len(data), 16 + n * stride)})"
        )
    maps = np.empty((n, rows, cols), dtype=np.float32)
    labels = np.empty(n, dtype=np.uint8)
    off = 16
    for i in range(n):
        labels[i] = data[off]
        maps[i] = np.frombuffer(data, "<f4", rows * cols, off + 1).reshape(rows, cols)
        off += stride
    return HDMapDataset(maps=maps, labels=labels)
