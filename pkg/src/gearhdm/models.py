"""Model architectures and the four training objectives.

Three fixed topologies operate on 95x31 health data maps: a LeNet-style
binary classifier (two conv/ReLU/pool blocks, two hidden dense layers,
two-way softmax head), the same trunk with a single linear output as a
severity regressor, and a convolutional autoencoder (three conv/BN/ELU
encoder blocks with two poolings, a 128-wide latent bottleneck, three
transposed-conv decoder blocks, centre-cropped back to the input size).

Self-supervised training pairs every sampled normal map with a freshly
synthesised faulty counterpart: classifiers get labels 0/1, regressors
regress the severity scale used for the synthesis (0 for untouched
normals). The autoencoder minimises reconstruction error on normals only
and doubles as the anomaly-detection baseline via a three-sigma
threshold on its training reconstruction errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .synth import SynthesisConfig, cutpaste_batch, faultpaste_batch

MAP_SHAPE = (95, 31)
CLASSIFIER_FLAT = 48 * 24 * 8   # after two conv/pool blocks on 95x31
AE_BOTTLENECK_SHAPE = (27, 11, 64)
AE_LATENT = 128


class TrainingError(RuntimeError):
    pass


class NumericError(TrainingError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainingRecipe:
    """Optimisation setup; defaults follow the full-scale recipe."""

    iterations: int = 3000
    batch_size: int = 128
    initial_lr: float = 1e-3
    lr_drop_iteration: int = 2000
    final_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def schedule(self) -> nn.LRSchedule:
        return nn.LRSchedule(self.initial_lr, self.lr_drop_iteration, self.final_lr)

    def with_seed(self, seed: int) -> "TrainingRecipe":
        return replace(self, seed=int(seed))


def paper_recipe(seed: int = 0) -> TrainingRecipe:
    return TrainingRecipe(seed=seed)


def desk_recipe(seed: int = 0) -> TrainingRecipe:
    """Reduced recipe sized for a desktop CPU run."""
    return TrainingRecipe(iterations=600, batch_size=64,
                          lr_drop_iteration=400, seed=seed)


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------

def _classifier_trunk(rng):
    return [
        nn.Conv2D(5, 1, 32, stride=1, padding=2, rng=rng),
        nn.ReLUMaxPool(3, 2, 1),
        nn.Conv2D(5, 32, 48, stride=1, padding=2, rng=rng),
        nn.ReLUMaxPool(3, 2, 1),
        nn.Flatten(),
        nn.Dense(CLASSIFIER_FLAT, 100, rng=rng),
        nn.ReLU(),
        nn.Dense(100, 100, rng=rng),
        nn.ReLU(),
    ]


def build_classifier(rng) -> nn.Network:
    return nn.Network(_classifier_trunk(rng) + [nn.Dense(100, 2, rng=rng)])


def build_regressor(rng) -> nn.Network:
    return nn.Network(_classifier_trunk(rng) + [nn.Dense(100, 1, rng=rng)])


def build_autoencoder(rng) -> nn.Network:
    flat = int(np.prod(AE_BOTTLENECK_SHAPE))
    return nn.Network([
        nn.Conv2D(3, 1, 16, stride=1, padding=2, rng=rng),
        nn.BatchNorm(16), nn.ELUMaxPool(2, 2, 0),
        nn.Conv2D(3, 16, 32, stride=1, padding=2, rng=rng),
        nn.BatchNorm(32), nn.ELUMaxPool(2, 2, 0),
        nn.Conv2D(3, 32, 64, stride=1, padding=2, rng=rng),
        nn.BatchNorm(64), nn.ELU(),
        nn.Flatten(),
        nn.Dense(flat, AE_LATENT, rng=rng),
        nn.BatchNorm(AE_LATENT), nn.ELU(),
        # mirror projection back into conv space (the latent table lists a
        # single dense layer; re-entering the decoder needs its transpose)
        nn.Dense(AE_LATENT, flat, rng=rng),
        nn.BatchNorm(flat), nn.ELU(),
        nn.Reshape(*AE_BOTTLENECK_SHAPE),
        nn.TransposedConv2D(4, 64, 32, stride=2, padding=1, rng=rng),
        nn.BatchNorm(32), nn.ELU(),
        nn.TransposedConv2D(5, 32, 16, stride=2, padding=0, rng=rng),
        nn.BatchNorm(16), nn.ELU(),
        nn.TransposedConv2D(4, 16, 1, stride=1, padding=2, rng=rng),
        nn.CenterCropPad(*MAP_SHAPE),
    ])


def _as_input(maps: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(maps, dtype=np.float32)
    if x.ndim != 3 or x.shape[1:] != MAP_SHAPE:
        raise TrainingError(f"expected (n, 95, 31) maps, got {x.shape}")
    return x[..., None]


def _batched(network: nn.Network, maps: np.ndarray, chunk: int = 64):
    x = _as_input(maps)
    outs = [network.forward(x[i:i + chunk], training=False)
            for i in range(0, len(x), chunk)]
    return np.concatenate(outs, axis=0)


@dataclass
class ClassifierModel:
    network: nn.Network
    method: str = ""

    def predict_proba(self, maps) -> np.ndarray:
        return nn.softmax(_batched(self.network, maps))

    def predict(self, maps) -> np.ndarray:
        return self.predict_proba(maps).argmax(axis=1)

    def scores(self, maps) -> np.ndarray:
        return self.predict_proba(maps)[:, 1]


@dataclass
class RegressorModel:
    network: nn.Network
    method: str = ""

    def predict(self, maps) -> np.ndarray:
        return _batched(self.network, maps)[:, 0]


@dataclass
class AutoencoderModel:
    network: nn.Network

    def reconstruct(self, maps) -> np.ndarray:
        return _batched(self.network, maps)[..., 0]

    def reconstruction_errors(self, maps) -> np.ndarray:
        recon = self.reconstruct(maps)
        diff = np.asarray(maps, dtype=np.float64) - recon
        return (diff * diff).mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# Synthesizers: map a batch of normals to faulty counterparts + severity
# ---------------------------------------------------------------------------

def make_synthesizer(method: str, config: SynthesisConfig,
                     signatures: np.ndarray | None = None):
    if method in ("cutpaste", "scaled_cutpaste"):
        scaled = method == "scaled_cutpaste"

        def synthesize(batch, rng):
            return cutpaste_batch(batch, config, rng, scaled=scaled)
    elif method == "faultpaste":
        if signatures is None or len(signatures) == 0:
            raise TrainingError("faultpaste needs a non-empty signature pool")
        sigs = np.ascontiguousarray(signatures, dtype=np.float32)

        def synthesize(batch, rng):
            return faultpaste_batch(batch, sigs, config, rng)
    else:
        raise TrainingError(f"unknown synthesis method {method!r}")
    return synthesize


class _TelemetryLog:
    def __init__(self, path, context):
        self.path = path
        self.context = context

    def write(self, iteration, loss, lr):
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"iteration": iteration, "loss": loss,
                                 "lr": lr, **self.context}) + "\n")


def _check_finite(loss: float, iteration: int, objective: str):
    if not np.isfinite(loss):
        raise NumericError(
            f"{objective}: non-finite loss {loss} at iteration {iteration}")


def _train(network, recipe: TrainingRecipe, make_batch, loss_grad,
           objective: str, log_path=None):
    rng = np.random.default_rng([recipe.seed & 0xFFFFFFFF, 0xBA7C4])
    opt = nn.Adam(network.params(), recipe.schedule(),
                  recipe.beta1, recipe.beta2, recipe.eps)
    log = _TelemetryLog(log_path, {"objective": objective, "seed": recipe.seed})
    history = np.empty(recipe.iterations, dtype=np.float64)
    for it in range(1, recipe.iterations + 1):
        x, target = make_batch(rng)
        out = network.forward(x, training=True)
        loss, dout = loss_grad(out, target)
        _check_finite(loss, it, objective)
        network.backward(dout)
        opt.step()
        history[it - 1] = loss
        if it % 50 == 0 or it == 1:
            log.write(it, loss, opt.learning_rate)
    return history


def train_classifier(normal_maps: np.ndarray, synthesize, recipe: TrainingRecipe,
                     method: str = "", log_path=None):
    """Self-supervised binary classifier on target-domain normals.

    Every batch pairs ``batch_size/2`` sampled normal maps (label 0) with
    their freshly synthesised faulty counterparts (label 1).
    """
    maps = np.ascontiguousarray(normal_maps, dtype=np.float32)
    if len(maps) == 0:
        raise TrainingError("empty training set")
    network = build_classifier(np.random.default_rng([recipe.seed & 0xFFFFFFFF, 0x111]))
    half = recipe.batch_size // 2
    labels = np.concatenate([np.zeros(half, np.int64), np.ones(half, np.int64)])

    def make_batch(rng):
        idx = rng.integers(0, len(maps), half)
        normals = maps[idx]
        synth, _ = synthesize(normals, rng)
        return np.concatenate([normals, synth])[..., None], labels

    def loss_grad(logits, target):
        loss, dlogits, _ = nn.softmax_cross_entropy(logits, target)
        return loss, dlogits

    history = _train(network, recipe, make_batch, loss_grad,
                     f"classifier/{method or 'supervised'}", log_path)
    return ClassifierModel(network, method), history


def train_supervised_classifier(maps: np.ndarray, labels: np.ndarray,
                                recipe: TrainingRecipe, log_path=None):
    """Source-domain baseline: labelled normal vs fault-1 maps."""
    maps = np.ascontiguousarray(maps, dtype=np.float32)
    labels = np.asarray(labels)
    normal = maps[labels == 0]
    faulty = maps[labels == 1]
    if len(normal) == 0 or len(faulty) == 0:
        raise TrainingError("baseline needs both normal and fault-1 samples")
    network = build_classifier(np.random.default_rng([recipe.seed & 0xFFFFFFFF, 0x111]))
    half = recipe.batch_size // 2
    batch_labels = np.concatenate([np.zeros(half, np.int64), np.ones(half, np.int64)])

    def make_batch(rng):
        i0 = rng.integers(0, len(normal), half)
        i1 = rng.integers(0, len(faulty), half)
        return np.concatenate([normal[i0], faulty[i1]])[..., None], batch_labels

    def loss_grad(logits, target):
        loss, dlogits, _ = nn.softmax_cross_entropy(logits, target)
        return loss, dlogits

    history = _train(network, recipe, make_batch, loss_grad,
                     "classifier/baseline", log_path)
    return ClassifierModel(network, "baseline"), history


def train_regressor(normal_maps: np.ndarray, synthesize, recipe: TrainingRecipe,
                    method: str = "", log_path=None):
    """Severity regressor: predict the synthesis scale, 0 for pure normals."""
    maps = np.ascontiguousarray(normal_maps, dtype=np.float32)
    if len(maps) == 0:
        raise TrainingError("empty training set")
    network = build_regressor(np.random.default_rng([recipe.seed & 0xFFFFFFFF, 0x222]))
    half = recipe.batch_size // 2

    def make_batch(rng):
        idx = rng.integers(0, len(maps), half)
        normals = maps[idx]
        synth, scales = synthesize(normals, rng)
        x = np.concatenate([normals, synth])[..., None]
        target = np.concatenate([np.zeros(half), scales]).astype(np.float32)
        return x, target[:, None]

    history = _train(network, recipe, make_batch, nn.mse,
                     f"regressor/{method}", log_path)
    return RegressorModel(network, method), history


def train_autoencoder(normal_maps: np.ndarray, recipe: TrainingRecipe,
                      labels: np.ndarray | None = None, log_path=None):
    """Reconstruction training on normals only (labels, if given, must be 0)."""
    if labels is not None and np.any(np.asarray(labels) != 0):
        raise TrainingError("autoencoder training set must contain only normals")
    maps = np.ascontiguousarray(normal_maps, dtype=np.float32)
    if len(maps) == 0:
        raise TrainingError("empty training set")
    network = build_autoencoder(np.random.default_rng([recipe.seed & 0xFFFFFFFF, 0x333]))

    def make_batch(rng):
        idx = rng.integers(0, len(maps), recipe.batch_size)
        x = maps[idx][..., None]
        return x, x

    history = _train(network, recipe, make_batch, nn.mse, "autoencoder", log_path)
    return AutoencoderModel(network), history


# ---------------------------------------------------------------------------
# Anomaly detection and signature extraction on trained autoencoders
# ---------------------------------------------------------------------------

def ad_score_and_threshold(model: AutoencoderModel, normal_maps: np.ndarray):
    """Reconstruction errors of the training normals and the 3-sigma bound."""
    errors = model.reconstruction_errors(normal_maps)
    threshold = float(errors.mean() + 3.0 * errors.std())
    return errors, threshold


def ad_classify(model: AutoencoderModel, maps: np.ndarray,
                threshold: float) -> np.ndarray:
    return (model.reconstruction_errors(maps) > threshold).astype(np.int64)


def extract_signature_pool(model: AutoencoderModel, faulty_maps: np.ndarray,
                           max_count: int | None = None) -> np.ndarray:
    """Squared-residual signatures (peak-normalised) for a stack of maps.

    Degenerate residuals (exact reconstructions) are skipped.
    """
    maps = np.ascontiguousarray(faulty_maps, dtype=np.float32)
    if max_count is not None:
        maps = maps[:max_count]
    recon = model.reconstruct(maps)
    residual = (maps.astype(np.float64) - recon) ** 2
    peaks = residual.max(axis=(1, 2))
    keep = peaks > 0
    if not np.any(keep):
        raise TrainingError("all residuals degenerate; no signatures extracted")
    sigs = residual[keep] / peaks[keep, None, None]
    return sigs.astype(np.float32)


def smoothed(history: np.ndarray, window: int = 100) -> np.ndarray:
    """Moving average used for the loss-decrease checks."""
    if len(history) < window:
        window = max(1, len(history))
    kernel = np.ones(window) / window
    return np.convolve(history, kernel, mode="valid")
