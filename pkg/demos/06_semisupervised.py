"""Classifying with ten labels per class.

Two classes live in separate latent clusters and are mapped to 10-D data by
a fixed linear decoder. Training sees 500 unlabelled points and 20 labelled
ones. A softmax label decoder on the codes, averaged over its particles,
then classifies held-out points.
"""
from dataclasses import replace

from steinflow.experiments import PRESETS, semisup_accuracy
from steinflow.trainer import RunConfig, zeta_weight

print(f"label weight for 10-D data, 2 classes and half the minibatch labelled: {zeta_weight(10, 2, 0.5):.1f}")
base = replace(RunConfig(), **PRESETS["semisup-toy"])
for name, k in (("plain", 1), ("importance-weighted, k=5", 5)):
    acc, state = semisup_accuracy(replace(base, iw_samples=k), log=lambda *_: None)
    print(f"{name}: held-out accuracy {acc:.3f} after {state.epoch} epochs")
