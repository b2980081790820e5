"""Phenomenological planetary-gearbox vibration generator.

Produces labeled, reproducible acceleration records for a single-stage
planetary gearbox with a fixed ring gear, rotating carrier and sun input.
The signal model is deliberately simple (no FEM / lumped-parameter
dynamics): a gear-mesh tone with harmonics, amplitude-modulated by the
planet-pass transmission path to a casing-mounted accelerometer, plus
impact transients whenever a worn planet tooth engages the ring gear,
sensor noise, and a slow lubricant warm-up drift.

Kinematics: with the ring fixed, the planet of interest engages ring
teeth at ``ring_teeth`` events per carrier revolution. Meshing event
``e`` (counted from 1 at carrier angle zero) pairs ring tooth
``((e-1) mod ring_teeth) + 1`` with planet tooth
``((e-1) mod planet_teeth) + 1``; the pair sequence repeats after the
hunting tooth cycle (2945 events for the 95/31 gear set).

Records carry one tachometer pulse per carrier revolution, quantised to
sample indices like a real DAQ counter channel.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

SAMPLE_RATE_HZ = 25600.0

# Impact transient: short structural ring-down excited by a damaged tooth.
IMPACT_RING_HZ = 7800.0
IMPACT_DECAY_S = 2.5e-4
IMPACT_SUPPORT_SAMPLES = 40
IMPACT_WINDOW_FRACTION = 0.35   # engagement instant inside the meshing window
IMPACT_JITTER = 0.30            # uniform +-30% per-event amplitude spread

# Fault severity: impact peak relative to the healthy mesh-tone amplitude.
# Level 1 sits near the detectability margin once transmission, jitter and
# drift are applied; level 2 doubles the peak and spreads wear onto the two
# neighbouring teeth at half amplitude.
FAULT1_IMPACT_SCALE = 3.0
FAULT2_IMPACT_SCALE = 6.0
ADJACENT_TOOTH_FRACTION = 0.5

# Lubricant warm-up attenuates impulsive transmission faster than the mesh
# tone; load-dependent excitation grows with carrier speed.
IMPACT_DRIFT_EXPONENT = 2.0
SPEED_LOAD_EXPONENT = 1.5

GSR1_MAGIC = b"GSR1"


class SimulationError(ValueError):
    """Invalid simulator inputs (durations, domains, health states)."""


@dataclass(frozen=True)
class GearGeometry:
    """Tooth counts of the planetary stage (ring / planet / sun, planets)."""

    ring_teeth: int = 95
    planet_teeth: int = 31
    sun_teeth: int = 31
    planet_count: int = 3

    def __post_init__(self):
        if self.ring_teeth < self.planet_teeth or self.planet_teeth < 1:
            raise SimulationError(
                f"need ring_teeth >= planet_teeth >= 1, got "
                f"{self.ring_teeth}/{self.planet_teeth}"
            )
        if self.planet_count < 1:
            raise SimulationError("planet_count must be >= 1")

    @property
    def hunting_length(self) -> int:
        """Meshing events before the ring/planet tooth pairing repeats."""
        return self.ring_teeth * self.planet_teeth // math.gcd(
            self.ring_teeth, self.planet_teeth
        )

    @property
    def hunting_revs(self) -> int:
        """Carrier revolutions per hunting tooth cycle."""
        return self.hunting_length // self.ring_teeth


@dataclass(frozen=True)
class DomainSpec:
    """One operating-condition/sensor combination (a transfer domain).

    ``sensor`` and ``speed`` follow the four-domain grid: MEMS sensors are
    noisier and couple impacts more weakly than IEPE ones, and are mounted
    at a different casing position; non-stationary operation modulates the
    carrier speed with a slow sinusoid of relative depth
    ``speed_modulation_depth``.

    ``drift_profile`` is a piecewise-linear amplitude factor over the
    record duration (warm-up of the lubricant oil), given as
    ``((fraction, factor), ...)`` breakpoints.
    """

    id: str
    sensor: str                      # "MEMS" | "IEPE"
    speed: str                       # "stationary" | "non-stationary"
    nominal_carrier_hz: float = 52.0
    speed_modulation_depth: float = 0.0
    speed_modulation_hz: float = 0.4
    noise_floor: float = 0.15        # g RMS
    drift_profile: tuple = ((0.0, 1.0), (1.0, 0.8))
    sensor_angle: float = 0.8        # carrier angle of max transmission [rad]
    window_concentration: float = 4.0  # von Mises kappa of the pass window
    impact_transmission: float = 1.0
    mesh_amplitude: float = 1.0      # g
    harmonic_ratios: tuple = (1.0, 0.35)
    tooth_texture: float = 0.06      # per-planet-tooth amplitude spread

    def __post_init__(self):
        if self.sensor not in ("MEMS", "IEPE"):
            raise SimulationError(f"unknown sensor type {self.sensor!r}")
        if self.speed not in ("stationary", "non-stationary"):
            raise SimulationError(f"unknown speed condition {self.speed!r}")
        if self.speed == "stationary" and self.speed_modulation_depth != 0.0:
            raise SimulationError("stationary domains must have zero depth")
        if self.speed == "non-stationary" and self.speed_modulation_depth <= 0.0:
            raise SimulationError("non-stationary domains need depth > 0")

    def drift(self, fraction) -> np.ndarray:
        """Amplitude factor at ``fraction`` in [0, 1] of the record."""
        pts = np.asarray(self.drift_profile, dtype=np.float64)
        return np.interp(fraction, pts[:, 0], pts[:, 1])


def _mems(domain_id: str, speed: str, depth: float, mod_hz: float,
          sensor_angle: float) -> DomainSpec:
    return DomainSpec(
        id=domain_id, sensor="MEMS", speed=speed,
        speed_modulation_depth=depth, speed_modulation_hz=mod_hz,
        noise_floor=0.15, sensor_angle=sensor_angle,
        window_concentration=3.0, impact_transmission=0.65,
    )


def _iepe(domain_id: str, speed: str, depth: float, mod_hz: float,
          sensor_angle: float) -> DomainSpec:
    return DomainSpec(
        id=domain_id, sensor="IEPE", speed=speed,
        speed_modulation_depth=depth, speed_modulation_hz=mod_hz,
        noise_floor=0.047, sensor_angle=sensor_angle,
        window_concentration=5.0, impact_transmission=1.0,
    )


# Domain grid: sensor type x operating condition.
DOMAINS = {
    "A": _mems("A", "stationary", 0.0, 0.4, sensor_angle=0.8),
    "B": _mems("B", "non-stationary", 0.15, 0.40, sensor_angle=1.1),
    "C": _iepe("C", "stationary", 0.0, 0.4, sensor_angle=2.4),
    "D": _iepe("D", "non-stationary", 0.12, 0.33, sensor_angle=2.9),
}


def get_domain(domain_id: str) -> DomainSpec:
    try:
        return DOMAINS[domain_id]
    except KeyError:
        raise SimulationError(
            f"unknown domain id {domain_id!r}; expected one of A-D"
        ) from None


@dataclass(frozen=True)
class HealthState:
    """Gearbox health: normal or one of two planet-tooth wear levels."""

    level: str                          # "normal" | "fault1" | "fault2"
    faulty_planet_tooth: int | None = None

    def __post_init__(self):
        if self.level not in ("normal", "fault1", "fault2"):
            raise SimulationError(f"unknown health level {self.level!r}")
        if self.level == "normal":
            if self.faulty_planet_tooth is not None:
                raise SimulationError("normal state carries no faulty tooth")
        elif self.faulty_planet_tooth is None:
            raise SimulationError(f"{self.level} requires a faulty tooth index")

    @property
    def label(self) -> int:
        return {"normal": 0, "fault1": 1, "fault2": 2}[self.level]

    def impact_teeth(self, planet_teeth: int):
        """(tooth, relative amplitude) pairs that produce impacts."""
        if self.level == "normal":
            return []
        t = self.faulty_planet_tooth
        if not 1 <= t <= planet_teeth:
            raise SimulationError(f"faulty tooth {t} outside [1, {planet_teeth}]")
        if self.level == "fault1":
            return [(t, FAULT1_IMPACT_SCALE)]
        prev = (t - 2) % planet_teeth + 1
        nxt = t % planet_teeth + 1
        return [
            (t, FAULT2_IMPACT_SCALE),
            (prev, FAULT2_IMPACT_SCALE * ADJACENT_TOOTH_FRACTION),
            (nxt, FAULT2_IMPACT_SCALE * ADJACENT_TOOTH_FRACTION),
        ]


NORMAL = HealthState("normal")


def health_state(level: str, faulty_planet_tooth: int | None = 26) -> HealthState:
    """Convenience constructor; fault levels default to tooth 26."""
    if level == "normal":
        return NORMAL
    return HealthState(level, faulty_planet_tooth)


@dataclass(frozen=True)
class SpeedProfile:
    """Analytic carrier angle/rate, constant or sinusoidally modulated.

    angle(t) integrates rate(t) = 2*pi*f0*(1 + depth*sin(2*pi*fm*t + phase))
    in closed form, so tachometer instants can be root-solved to machine
    precision.
    """

    nominal_hz: float
    depth: float = 0.0
    modulation_hz: float = 0.4
    phase: float = 0.0

    def angle(self, t):
        t = np.asarray(t, dtype=np.float64)
        w0 = 2.0 * math.pi * self.nominal_hz
        if self.depth == 0.0:
            return w0 * t
        wm = 2.0 * math.pi * self.modulation_hz
        return w0 * (
            t + self.depth / wm * (math.cos(self.phase) - np.cos(wm * t + self.phase))
        )

    def rate(self, t):
        t = np.asarray(t, dtype=np.float64)
        w0 = 2.0 * math.pi * self.nominal_hz
        if self.depth == 0.0:
            return np.full_like(t, w0)
        wm = 2.0 * math.pi * self.modulation_hz
        return w0 * (1.0 + self.depth * np.sin(wm * t + self.phase))

    def time_at_angle(self, target):
        """Invert angle(t) by Newton iteration (rate is bounded below)."""
        target = np.asarray(target, dtype=np.float64)
        t = target / (2.0 * math.pi * self.nominal_hz)
        for _ in range(6):
            t = t - (self.angle(t) - target) / self.rate(t)
        return t

    def tacho_times(self, revolutions: int) -> np.ndarray:
        return self.time_at_angle(2.0 * math.pi * np.arange(revolutions + 1))


def speed_profile(domain: DomainSpec, duration: float, seed: int) -> SpeedProfile:
    """Carrier angular position profile for one record.

    Stationary domains rotate at exactly the nominal rate; non-stationary
    ones modulate the rate by a low-frequency sinusoid whose phase is
    drawn from ``seed``.
    """
    if duration <= 0:
        raise SimulationError(f"duration must be positive, got {duration}")
    if domain.speed == "stationary":
        return SpeedProfile(domain.nominal_carrier_hz)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5EED])
    return SpeedProfile(
        nominal_hz=domain.nominal_carrier_hz,
        depth=domain.speed_modulation_depth,
        modulation_hz=domain.speed_modulation_hz,
        phase=rng.uniform(0.0, 2.0 * math.pi),
    )


@dataclass(frozen=True)
class ImpactEvent:
    """Bookkeeping for one injected tooth impact (testing/diagnostics)."""

    event: int          # global meshing-event ordinal, 1-based
    ring_tooth: int
    planet_tooth: int
    time: float         # engagement instant [s]
    amplitude: float    # injected peak [g]


@dataclass
class TimeSeriesRecord:
    """Raw simulated vibration + tachometer pulses + provenance."""

    samples: np.ndarray          # float32, acceleration [g]
    sample_rate: float
    tacho_events: np.ndarray     # int64 sample indices, 1/rev
    domain: DomainSpec
    health: HealthState
    seed: int

    def __post_init__(self):
        if len(self.tacho_events) < 2:
            raise SimulationError("record needs at least 2 tacho events")
        if not np.all(np.diff(self.tacho_events) > 0):
            raise SimulationError("tacho events must be strictly increasing")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def min_record_duration(geometry: GearGeometry, domain: DomainSpec,
                        cycles: int = 10) -> float:
    """Duration covering ``cycles`` hunting cycles at nominal speed."""
    return cycles * geometry.hunting_revs / domain.nominal_carrier_hz


def simulate_record(
    geometry: GearGeometry,
    domain: DomainSpec,
    health: HealthState,
    duration: float,
    seed: int,
    return_events: bool = False,
):
    """Simulate one vibration record.

    The signal is the sum of (a) the ring-planet gear-mesh tone and its
    harmonics, amplitude-modulated by each planet's transmission window
    as it sweeps past the sensor, (b) impact transients at every meshing
    event of a worn planet tooth, (c) white sensor noise, and (d) the
    warm-up drift factor applied to the mechanical components.

    Deterministic: equal inputs (including ``seed``) give bit-identical
    records. With ``return_events`` the injected impacts are returned as
    ``ImpactEvent`` tuples for bookkeeping tests.
    """
    min_dur = min_record_duration(geometry, domain)
    if duration < min_dur:
        raise SimulationError(
            f"duration {duration:.3f}s too short: need >= {min_dur:.3f}s "
            f"(10 hunting cycles at nominal speed)"
        )
    profile = speed_profile(domain, duration, seed)
    fs = SAMPLE_RATE_HZ
    n = int(round(duration * fs))
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x51C])

    t = np.arange(n) / fs
    theta = profile.angle(t)
    rel_rate = profile.rate(t) / (2.0 * math.pi * domain.nominal_carrier_hz)
    speed_factor = rel_rate ** SPEED_LOAD_EXPONENT
    drift = domain.drift(t / duration)

    # Per-planet-tooth meshing amplitude texture for the planet of interest.
    texture = 1.0 + rng.normal(0.0, domain.tooth_texture, geometry.planet_teeth)
    nr, npl, pc = geometry.ring_teeth, geometry.planet_teeth, geometry.planet_count
    event_idx = np.floor(nr * theta / (2.0 * math.pi)).astype(np.int64)
    tooth_of_t = event_idx % npl  # 0-based planet tooth in mesh at time t

    harmonic_phases = rng.uniform(0.0, 2.0 * math.pi,
                                  size=(len(domain.harmonic_ratios), pc))
    mesh_phase = nr * theta
    kappa = domain.window_concentration
    fmax = domain.nominal_carrier_hz * (1.0 + domain.speed_modulation_depth)
    signal = np.zeros(n)
    for p in range(pc):
        window = np.exp(kappa * (np.cos(theta + 2.0 * math.pi * p / pc
                                        - domain.sensor_angle) - 1.0))
        planet_gain = window * (texture[tooth_of_t] if p == 0 else 1.0)
        offset = 2.0 * math.pi * nr * p / pc
        for h, ratio in enumerate(domain.harmonic_ratios, start=1):
            if h * nr * fmax >= 0.46 * fs:
                continue  # keep harmonics safely below Nyquist
            signal += (ratio * planet_gain
                       * np.cos(h * (mesh_phase + offset) + harmonic_phases[h - 1, p]))
    signal *= domain.mesh_amplitude * speed_factor

    events: list[ImpactEvent] = []
    impacts = np.zeros(n)
    teeth = health.impact_teeth(npl)
    if teeth:
        total_events = int(nr * theta[-1] / (2.0 * math.pi))
        win0 = lambda ang: np.exp(
            kappa * (np.cos(ang - domain.sensor_angle) - 1.0))
        tau = np.arange(IMPACT_SUPPORT_SAMPLES) / fs
        ring = np.exp(-tau / IMPACT_DECAY_S) * np.sin(2.0 * math.pi * IMPACT_RING_HZ * tau)
        for tooth, scale in teeth:
            ev = np.arange(tooth, total_events + 1, npl)  # events with this tooth
            if len(ev) == 0:
                continue
            ang = 2.0 * math.pi * (ev - 1 + IMPACT_WINDOW_FRACTION) / nr
            te = profile.time_at_angle(ang)
            jitter = rng.uniform(1.0 - IMPACT_JITTER, 1.0 + IMPACT_JITTER, len(ev))
            rr = profile.rate(te) / (2.0 * math.pi * domain.nominal_carrier_hz)
            amp = (scale * domain.mesh_amplitude * domain.impact_transmission
                   * win0(ang) * jitter
                   * domain.drift(te / duration) ** IMPACT_DRIFT_EXPONENT
                   * rr ** SPEED_LOAD_EXPONENT)
            base = np.round(te * fs).astype(np.int64)
            keep = (base >= 0) & (base + IMPACT_SUPPORT_SAMPLES < n)
            idx = base[keep, None] + np.arange(IMPACT_SUPPORT_SAMPLES)[None, :]
            np.add.at(impacts, idx.ravel(), (amp[keep, None] * ring[None, :]).ravel())
            events.extend(
                ImpactEvent(int(e), int((e - 1) % nr + 1), tooth, float(ti), float(a))
                for e, ti, a, k in zip(ev, te, amp, keep) if k
            )

    noise = rng.normal(0.0, domain.noise_floor, n)
    samples = (drift * (signal + impacts) + noise).astype(np.float32)

    revolutions = int(theta[-1] / (2.0 * math.pi))
    tacho_t = profile.tacho_times(revolutions)
    tacho = np.round(tacho_t * fs).astype(np.int64)
    tacho = tacho[tacho < n]

    record = TimeSeriesRecord(
        samples=samples, sample_rate=fs, tacho_events=tacho,
        domain=domain, health=health, seed=int(seed),
    )
    if return_events:
        events.sort(key=lambda e: e.event)
        return record, events
    return record


# ---------------------------------------------------------------------------
# GSR1 record file format: magic, little-endian u32 sample count, f64 sample
# rate, u32 tacho count, f32 samples, u64 tacho indices, then a trailing
# structured-text metadata block (utf-8 "key=value" lines).
# ---------------------------------------------------------------------------

class FormatError(ValueError):
    """Malformed binary file; message names the failing byte offset."""


def _meta_lines(record: TimeSeriesRecord) -> str:
    d, h = record.domain, record.health
    pairs = [("schema", "gearhdm-record-1"), ("seed", record.seed),
             ("health.level", h.level),
             ("health.faulty_planet_tooth",
              "" if h.faulty_planet_tooth is None else h.faulty_planet_tooth)]
    for f in fields(DomainSpec):
        pairs.append((f"domain.{f.name}", getattr(d, f.name)))
    return "".join(f"{k}={v}\n" for k, v in pairs)


def _parse_meta(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line and "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def write_gsr1(record: TimeSeriesRecord, path) -> None:
    buf = io.BytesIO()
    buf.write(GSR1_MAGIC)
    buf.write(np.uint32(len(record.samples)).tobytes())
    buf.write(np.float64(record.sample_rate).tobytes())
    buf.write(np.uint32(len(record.tacho_events)).tobytes())
    buf.write(record.samples.astype("<f4").tobytes())
    buf.write(record.tacho_events.astype("<u8").tobytes())
    buf.write(_meta_lines(record).encode("utf-8"))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_gsr1(path) -> TimeSeriesRecord:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != GSR1_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0 (want GSR1)")
    off = 4
    try:
        n = int(np.frombuffer(data, "<u4", 1, off)[0]); off += 4
        fs = float(np.frombuffer(data, "<f8", 1, off)[0]); off += 8
        nt = int(np.frombuffer(data, "<u4", 1, off)[0]); off += 4
        samples = np.frombuffer(data, "<f4", n, off).copy(); off += 4 * n
        tacho = np.frombuffer(data, "<u8", nt, off).astype(np.int64); off += 8 * nt
    except ValueError as exc:
        raise FormatError(f"{path}: truncated payload at byte {off}") from exc
    meta = _parse_meta(data[off:].decode("utf-8", errors="replace"))
    if meta.get("schema") != "gearhdm-record-1":
        raise FormatError(f"{path}: missing metadata block at byte {off}")

    def conv(f, raw):
        if f.type in ("float", float):
            return float(raw)
        if f.type in ("int", int):
            return int(raw)
        if f.name in ("drift_profile", "harmonic_ratios"):
            vals = raw.strip("()").replace("(", "").replace(")", "")
            nums = [float(x) for x in vals.split(",") if x.strip()]
            if f.name == "drift_profile":
                return tuple((nums[i], nums[i + 1]) for i in range(0, len(nums), 2))
            return tuple(nums)
        return raw

    kwargs = {f.name: conv(f, meta[f"domain.{f.name}"]) for f in fields(DomainSpec)}
    domain = DomainSpec(**kwargs)
    tooth = meta.get("health.faulty_planet_tooth", "")
    health = HealthState(meta["health.level"], int(tooth) if tooth else None)
    return TimeSeriesRecord(
        samples=samples, sample_rate=fs, tacho_events=tacho,
        domain=domain, health=health, seed=int(meta["seed"]),
    )
