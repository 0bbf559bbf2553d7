"""Trained models the acceptance checks rely on, cached on disk.

Run ``python tests/trained_models.py`` once to build the cache (roughly an hour
on one CPU core); later test runs load the checkpoints.
"""

import logging
import os
from pathlib import Path

from uqdm.evaluation import train_images, train_swirl

CACHE = Path(os.environ.get("UQDM_MODEL_CACHE", Path(__file__).parent / ".model_cache"))

BPD_STEPS = 50_000  # the headline T=5 run
SWEEP_STEPS = 10_000  # orderings across T and variance modes
SWEEP_T = (3, 5, 10)
IMAGE_T = 4
IMAGE_STEPS = 3_000


def headline():
    return train_swirl(5, "learned", BPD_STEPS, cache_dir=CACHE)


def sweep(T, variance):
    return train_swirl(T, variance, SWEEP_STEPS, cache_dir=CACHE)


def image_model():
    return train_images(IMAGE_T, IMAGE_STEPS, cache_dir=CACHE, hidden=256)


def build_all():
    image_model()
    for T in SWEEP_T:
        for v in ("learned", "fixed"):
            sweep(T, v)
    sweep(20, "learned")
    headline()


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    build_all()
