"""Tachometer-referenced preprocessing of gearbox vibration records.

Three steps turn a raw record into the difference signal that feeds the
health data map: (1) resampling onto a uniform grid of ring-planet
meshing angle using the 1/rev tachometer as phase reference, (2) time
synchronous averaging over hunting tooth cycles, and (3) removal of the
regular gear meshing components (mesh harmonics and their first-order
carrier sidebands) in the angular frequency domain.

Averaging is synchronised to the hunting tooth cycle, so every
(ring tooth, planet tooth) pair appears exactly once per averaged cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .gearsim import GearGeometry, TimeSeriesRecord


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class AngularSeries:
    """Vibration resampled to uniform meshing angle.

    ``start_event`` counts the meshing events that occurred before the
    first sample (0 for a record processed from its own tacho reference);
    it keeps the absolute tooth-pair phase when slicing long sessions.
    """

    values: np.ndarray
    samples_per_mesh: int
    meshes_per_hunting_cycle: int
    cycles: int
    start_event: int = 0

    def __post_init__(self):
        expect = self.cycles * self.meshes_per_hunting_cycle * self.samples_per_mesh
        if len(self.values) != expect:
            raise PreprocessError(
                f"angular series length {len(self.values)} != "
                f"cycles*meshes*spm = {expect}"
            )

    @property
    def cycle_length(self) -> int:
        return self.meshes_per_hunting_cycle * self.samples_per_mesh


@dataclass(frozen=True)
class DifferenceSignal:
    """One hunting cycle with regular meshing components removed."""

    values: np.ndarray
    removal_spec: tuple
    samples_per_mesh: int
    start_event: int = 0


def _upsample2x(x: np.ndarray) -> np.ndarray:
    """Band-limited 2x upsampling (spectral zero padding).

    Odd reflection padding suppresses edge ringing before the FFT. The
    cubic spline that follows then interpolates a signal whose content
    sits at half the relative frequency, which keeps resampling sidelobes
    well under -40 dB even for mesh tones near a fifth of the original
    sample rate.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    pad = min(n // 2, 4096)
    left = 2.0 * x[0] - x[pad:0:-1]
    right = 2.0 * x[-1] - x[-2:-pad - 2:-1]
    xp = np.concatenate([left, x, right])
    m = len(xp)
    spec = np.fft.rfft(xp)
    if m % 2 == 0:
        spec[-1] *= 0.5  # split the old Nyquist bin symmetrically
    y = np.fft.irfft(spec, 2 * m) * 2.0
    return y[2 * pad: 2 * pad + 2 * n]


def _angular_grid(record: TimeSeriesRecord, geometry: GearGeometry,
                  samples_per_mesh: int):
    """Resample a record onto the uniform mesh-angle grid.

    Returns ``(values, revolutions)`` where ``values`` holds
    ``revolutions * ring_teeth * samples_per_mesh`` samples starting at
    the first tacho pulse. Shared by :func:`angular_resample` and the
    dataset builders, which slice sessions at revolution granularity.
    """
    if samples_per_mesh < 4:
        raise PreprocessError(f"samples_per_mesh must be >= 4, got {samples_per_mesh}")
    tacho = np.asarray(record.tacho_events, dtype=np.int64)
    if len(tacho) < 2:
        raise PreprocessError("need at least 2 tacho events to resample")

    fs = record.sample_rate
    anchor_t = tacho / fs
    anchor_angle = 2.0 * np.pi * np.arange(len(tacho), dtype=np.float64)
    # Carrier phase model: cubic through the (angle, time) anchors. Exactly
    # linear anchors (constant speed) reproduce a linear time axis.
    if len(tacho) > 2:
        time_of_angle = CubicSpline(anchor_angle, anchor_t)
    else:
        time_of_angle = lambda a: np.interp(a, anchor_angle, anchor_t)

    revolutions = len(tacho) - 1
    per_rev = geometry.ring_teeth * samples_per_mesh
    target_angle = (2.0 * np.pi / geometry.ring_teeth / samples_per_mesh
                    * np.arange(revolutions * per_rev, dtype=np.float64))
    target_t = np.asarray(time_of_angle(target_angle))

    up = _upsample2x(record.samples)
    signal = CubicSpline(np.arange(len(up)) / (2.0 * fs), up)
    return signal(target_t), revolutions


def angular_resample(record: TimeSeriesRecord, geometry: GearGeometry,
                     samples_per_mesh: int = 32) -> AngularSeries:
    """Resample onto the meshing-angle grid, whole hunting cycles only.

    The output starts at the first tacho pulse and is truncated to an
    integer number of hunting tooth cycles.
    """
    values, revolutions = _angular_grid(record, geometry, samples_per_mesh)
    cycles = revolutions // geometry.hunting_revs
    if cycles < 1:
        raise PreprocessError(
            f"record spans {revolutions} revolutions, shorter than one "
            f"hunting cycle ({geometry.hunting_revs} revolutions)"
        )
    length = cycles * geometry.hunting_length * samples_per_mesh
    return AngularSeries(
        values=values[:length],
        samples_per_mesh=samples_per_mesh,
        meshes_per_hunting_cycle=geometry.hunting_length,
        cycles=cycles,
    )


def tsa(series: AngularSeries) -> AngularSeries:
    """Time synchronous average over the hunting-cycle segments."""
    if series.cycles < 1:
        raise PreprocessError("need at least one cycle to average")
    if series.cycles == 1:
        return series
    folded = series.values.reshape(series.cycles, series.cycle_length)
    return AngularSeries(
        values=folded.mean(axis=0),
        samples_per_mesh=series.samples_per_mesh,
        meshes_per_hunting_cycle=series.meshes_per_hunting_cycle,
        cycles=1,
        start_event=series.start_event,
    )


def regular_mesh_removal(geometry: GearGeometry, harmonics: int = 8) -> tuple:
    """Spectral bins of the regular meshing components over one hunting cycle.

    Mesh harmonic h lies ``h * hunting_length`` cycles per hunting cycle;
    its first-order carrier sidebands sit ``hunting_revs`` bins to either
    side. Eight harmonics cover the classical regular-component set.
    """
    mesh = geometry.hunting_length
    side = geometry.hunting_revs
    bins = []
    for h in range(1, harmonics + 1):
        bins.extend((h * mesh - side, h * mesh, h * mesh + side))
    return tuple(sorted(set(b for b in bins if b > 0)))


def difference_signal(cycle: AngularSeries, removal_spec) -> DifferenceSignal:
    """Zero the removal bins of one averaged cycle in the frequency domain."""
    if cycle.cycles != 1:
        raise PreprocessError("difference_signal expects a single averaged cycle")
    removal = tuple(int(b) for b in removal_spec)
    if not removal:
        raise PreprocessError("removal_spec must name at least one bin")
    n = len(cycle.values)
    top = n // 2
    bad = [b for b in removal if not 0 <= b <= top]
    if bad:
        raise PreprocessError(
            f"removal bins {bad} outside spectral range [0, {top}]"
        )
    spec = np.fft.rfft(np.asarray(cycle.values, dtype=np.float64))
    spec[list(removal)] = 0.0
    values = np.fft.irfft(spec, n)
    return DifferenceSignal(
        values=values,
        removal_spec=removal,
        samples_per_mesh=cycle.samples_per_mesh,
        start_event=cycle.start_event,
    )
