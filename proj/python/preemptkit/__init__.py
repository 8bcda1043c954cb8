"""Preemptive robust-example defense, its reversal attack and the evaluation pipeline.

Images are float32 numpy arrays in [0, 1], shaped [C, H, W] or [N, C, H, W].
Configs are plain dicts using the same keys as the CLI config files.
"""

import json

import numpy as np

from . import _preemptkit as _core
from ._preemptkit import ConfigError, Error, FormatError, Model, NumericError, ShapeError

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "Model",
    "NumericError",
    "ShapeError",
    "attack",
    "cli",
    "defend",
    "evaluate",
    "gradcheck",
    "linear_definition",
    "perturbation_grayscale",
    "reference_definition",
    "reversion_protocol",
    "revert",
    "ssim",
    "synth_dataset",
    "train",
]


def _dump(cfg):
    return json.dumps(cfg or {})


def _ids(ids):
    return [] if ids is None else [int(i) for i in ids]


def _labels(labels):
    return [int(v) for v in np.asarray(labels).ravel()]


def synth_dataset(seed, **spec):
    """Synthetic class-blob images. Returns (images, labels, ids)."""
    images, labels, ids = _core.synth_dataset(_dump(spec), seed)
    return images, np.asarray(labels, dtype=np.int64), np.asarray(ids, dtype=np.uint64)


def reference_definition(shape, classes, filters=8):
    return json.loads(_core.reference_definition(list(shape), classes, filters))


def linear_definition(shape, classes):
    return json.loads(_core.linear_definition(list(shape), classes))


def train(definition, images, labels, classes, **config):
    """Trains a model; pass mode="adversarial" and adversarial={...} for PGD training."""
    return _core.train(json.dumps(definition), images, _labels(labels), classes, _dump(config))


def defend(classifier, backbone, images, ids=None, **config):
    """Robust examples for a batch. Returns (robust, labels_used, config_fingerprint)."""
    robust, used, fingerprint = _core.defend(classifier, backbone, images, _ids(ids), _dump(config))
    return robust, np.asarray(used, dtype=np.int64), fingerprint


def attack(model, images, labels, ids=None, **budget):
    """Multi-restart PGD against `model`; eps=0 returns the inputs."""
    return _core.attack(model, images, _labels(labels), _ids(ids), _dump(budget))


def revert(classifier, backbone, robust, ids=None, **config):
    """Estimates the originals by subtracting a second defense round."""
    return _core.revert(classifier, backbone, robust, _ids(ids), _dump(config))


def evaluate(victim, originals, labels, robust, ids=None, backbone=None, **budget):
    """Clean and robust accuracy of `victim` on originals and robust examples."""
    fingerprint = backbone.fingerprint if backbone is not None else ""
    return json.loads(
        _core.evaluate(victim, originals, _labels(labels), _ids(ids), robust, _dump(budget), fingerprint)
    )


def reversion_protocol(victim, images, labels, classes, classifier, backbone, black_box_backbone,
                       config=None, black_box_seed=777, fraction=0.1, noise_sigma=0.05, seed=0):
    report = _core.reversion_protocol(victim, images, _labels(labels), classes, classifier, backbone,
                                      _dump(config), black_box_backbone, black_box_seed, fraction,
                                      noise_sigma, seed)
    return json.loads(report)


def ssim(a, b):
    value, _ = _core.ssim(a, b)
    return value


def perturbation_grayscale(delta, eps):
    return _core.perturbation_grayscale(delta, eps)


def gradcheck(nets=100, seed=0):
    return json.loads(_core.gradcheck(nets, seed))


def cli(*args):
    """Runs the preemptkit command line in-process and returns its exit code."""
    return _core.cli([str(a) for a in args])
