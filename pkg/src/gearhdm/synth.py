"""Controlled synthesis of faulty health data maps from healthy ones.

Two families: CutPaste adds a rectangular patch copied from the same map
(kept horizontally long-thin along the ring-tooth axis to mimic a worn
planet tooth), optionally peak-normalised and scaled by a random severity
factor; FaultPaste adds an autoencoder-extracted fault signature from the
source domain, scaled the same way. With scale 0 both return the input
unchanged, so the scale doubles as a severity regression target.

Grids follow the hdmap convention: axis 0 = ring tooth (patch *width*,
the long direction), axis 1 = planet tooth (patch *height*).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hdmap import HDMapDataset, SIGNATURE_LABEL

PATCH_RETRY_CAP = 16


class SynthesisError(ValueError):
    pass


class DegeneratePatchError(SynthesisError):
    """Sampled patch was all-zero after the retry cap."""


class DegenerateSignatureError(SynthesisError):
    """Autoencoder reconstruction was exact; no residual to extract."""


@dataclass(frozen=True)
class SynthesisConfig:
    """Patch geometry and severity-scale ranges for both methods."""

    method: str = "scaled_cutpaste"   # cutpaste | scaled_cutpaste | faultpaste
    a_cp_max: float = 30.0
    a_fp_max: float = 30.0
    width_range: tuple = (16, 48)     # ring-axis extent, inclusive
    height_range: tuple = (1, 3)      # planet-axis extent, inclusive

    def __post_init__(self):
        if self.method not in ("cutpaste", "scaled_cutpaste", "faultpaste"):
            raise SynthesisError(f"unknown synthesis method {self.method!r}")
        if self.a_cp_max < 0 or self.a_fp_max < 0:
            raise SynthesisError("maximum scales must be nonnegative")
        for lo, hi in (self.width_range, self.height_range):
            if not 1 <= lo <= hi:
                raise SynthesisError("patch ranges must satisfy 1 <= lo <= hi")


@dataclass(frozen=True)
class PatchSpec:
    """One sampled cut/paste rectangle (centres in grid coordinates)."""

    width: int
    height: int
    source_center: tuple
    paste_center: tuple

    def source_slices(self):
        return _rect(self.source_center, self.width, self.height)

    def paste_slices(self):
        return _rect(self.paste_center, self.width, self.height)


def _rect(center, w, h):
    r0 = center[0] - w // 2
    c0 = center[1] - h // 2
    return slice(r0, r0 + w), slice(c0, c0 + h)


@dataclass(frozen=True)
class FaultSignature:
    """Normalised nonnegative residual of a source-domain faulty map."""

    grid: np.ndarray
    source_domain: str = ""
    source_sample: int = -1

    def __post_init__(self):
        if np.any(self.grid < 0):
            raise SynthesisError("signature entries must be nonnegative")
        if not np.isclose(float(self.grid.max()), 1.0):
            raise SynthesisError("signature must be normalised to peak 1")


def _clamped_center(rng, n, extent) -> int:
    # Centre drawn from Uniform(0, n - extent/2) and clamped so the
    # rectangle lies fully inside the axis.
    center = rng.uniform(0.0, n - extent / 2.0)
    lo = extent // 2
    hi = n - extent + extent // 2
    return int(min(max(int(round(center)), lo), hi))


def sample_patch(x: np.ndarray, config: SynthesisConfig, rng):
    """Sample a long-thin rectangle: cut values and a paste location.

    The source rectangle is uniform over all legal placements; the paste
    centre follows the Uniform(0, N - extent/2) rule, clamped so the
    rectangle fits.
    """
    nr, npl = x.shape
    w_lo, w_hi = config.width_range
    h_lo, h_hi = config.height_range
    if w_hi > nr or h_hi > npl:
        raise SynthesisError(
            f"patch ranges {config.width_range}x{config.height_range} exceed "
            f"grid {x.shape}"
        )
    w = int(rng.integers(w_lo, w_hi + 1))
    h = int(rng.integers(h_lo, h_hi + 1))
    sr = int(rng.integers(0, nr - w + 1))
    sc = int(rng.integers(0, npl - h + 1))
    spec = PatchSpec(
        width=w, height=h,
        source_center=(sr + w // 2, sc + h // 2),
        paste_center=(_clamped_center(rng, nr, w), _clamped_center(rng, npl, h)),
    )
    patch = x[spec.source_slices()].copy()
    return spec, patch


def _sample_nonzero_patch(x, config, rng):
    spec, patch = sample_patch(x, config, rng)
    for _ in range(PATCH_RETRY_CAP):
        if np.abs(patch).max() > 0:
            return spec, patch
        # degenerate cut: re-draw the source location only
        nr, npl = x.shape
        sr = int(rng.integers(0, nr - spec.width + 1))
        sc = int(rng.integers(0, npl - spec.height + 1))
        spec = PatchSpec(
            width=spec.width, height=spec.height,
            source_center=(sr + spec.width // 2, sc + spec.height // 2),
            paste_center=spec.paste_center,
        )
        patch = x[spec.source_slices()].copy()
    if np.abs(patch).max() > 0:
        return spec, patch
    raise DegeneratePatchError(
        f"all-zero patch after {PATCH_RETRY_CAP} source re-draws"
    )


def cutpaste(x: np.ndarray, config: SynthesisConfig, rng):
    """Plain CutPaste: add the raw patch at the paste rectangle."""
    spec, patch = sample_patch(x, config, rng)
    out = x.copy()
    out[spec.paste_slices()] += patch
    return out, spec


def scaled_cutpaste(x: np.ndarray, config: SynthesisConfig, rng):
    """Scaled CutPaste: add the peak-normalised patch times a ~ U(0, A).

    Outside the paste rectangle the output equals the input exactly; with
    a == 0 the input is returned unchanged (bit-identical copy).
    """
    spec, patch = _sample_nonzero_patch(x, config, rng)
    a = float(rng.uniform(0.0, config.a_cp_max))
    out = x.copy()
    if a != 0.0:
        out[spec.paste_slices()] += (a / np.abs(patch).max()) * patch
    return out, a, spec


def faultpaste(x: np.ndarray, signature: FaultSignature | np.ndarray, config, rng):
    """FaultPaste: add a normalised source signature times a ~ U(0, A)."""
    grid = signature.grid if isinstance(signature, FaultSignature) else signature
    if grid.shape != x.shape:
        raise SynthesisError(f"signature shape {grid.shape} != map shape {x.shape}")
    a = float(rng.uniform(0.0, config.a_fp_max))
    if a == 0.0:
        return x.copy(), a
    return x + a * grid, a


def extract_fault_signature(x_sf: np.ndarray, autoencoder,
                            source_domain: str = "",
                            source_sample: int = -1) -> FaultSignature:
    """Squared reconstruction residual of a faulty map, peak-normalised.

    ``autoencoder`` must reconstruct only healthy patterns (trained on
    source-domain normals); the squared residual then isolates the fault
    and is nonnegative by construction.
    """
    recon = autoencoder.reconstruct(x_sf[None])[0]
    residual = (np.asarray(x_sf, dtype=np.float64) - recon) ** 2
    peak = float(residual.max())
    if peak <= 0.0:
        raise DegenerateSignatureError(
            "reconstruction is exact; skip this sample"
        )
    return FaultSignature(
        grid=(residual / peak).astype(np.float32),
        source_domain=source_domain,
        source_sample=source_sample,
    )


# ---------------------------------------------------------------------------
# Batch helpers for self-supervised training loops.
# ---------------------------------------------------------------------------

def cutpaste_batch(maps: np.ndarray, config: SynthesisConfig, rng,
                   scaled: bool = True):
    """Synthesise one faulty counterpart per input map.

    Returns ``(out, scales)``; plain CutPaste reports the raw patch peak
    as its (untrained) scale so callers can log severity uniformly.
    """
    out = np.empty_like(maps)
    scales = np.empty(len(maps), dtype=np.float64)
    for i, x in enumerate(maps):
        if scaled:
            out[i], scales[i], _ = scaled_cutpaste(x, config, rng)
        else:
            y, spec = cutpaste(x, config, rng)
            out[i] = y
            scales[i] = float(np.abs(x[spec.source_slices()]).max())
    return out, scales


def faultpaste_batch(maps: np.ndarray, signatures: np.ndarray,
                     config: SynthesisConfig, rng):
    """FaultPaste with a fresh uniformly-drawn signature per map."""
    if len(signatures) == 0:
        raise SynthesisError("empty signature pool")
    idx = rng.integers(0, len(signatures), size=len(maps))
    a = rng.uniform(0.0, config.a_fp_max, size=len(maps))
    out = maps + a[:, None, None].astype(maps.dtype) * signatures[idx]
    return out, a


def signatures_to_dataset(signatures) -> HDMapDataset:
    grids = np.stack([s.grid for s in signatures]).astype(np.float32)
    labels = np.full(len(grids), SIGNATURE_LABEL, dtype=np.uint8)
    return HDMapDataset(maps=grids, labels=labels)
