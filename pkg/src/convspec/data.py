"""Synthetic class-prototype image dataset (desk-scale CIFAR stand-in).

Each class gets a smoothed random prototype; samples are noisy copies with
optional shift/flip augmentation applied at generation time. Channels are
normalized to zero mean / unit variance using train-set statistics.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class SyntheticDataset:
    train_images: np.ndarray  # (N, C, H, W) float64
    train_labels: np.ndarray  # (N,) int64
    test_images: np.ndarray
    test_labels: np.ndarray
    channel_mean: np.ndarray
    channel_std: np.ndarray


def _smooth(img, passes=2):
    """3x3 box blur with wraparound; keeps prototypes low-frequency."""
    out = img
    for _ in range(passes):
        acc = np.zeros_like(out)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                acc += np.roll(out, (dr, dc), axis=(-2, -1))
        out = acc / 9.0
    return out


def _sample_split(protos, labels, noise, shift, flip, rng):
    count = labels.shape[0]
    images = protos[labels] + noise * rng.normal(size=(count,) + protos.shape[1:])
    if shift > 0:
        shifts = rng.integers(-shift, shift + 1, size=(count, 2))
    else:
        shifts = np.zeros((count, 2), dtype=np.int64)
    if flip:
        flips = rng.random(count) < 0.5
    else:
        flips = np.zeros(count, dtype=bool)
    for i in range(count):
        if shifts[i, 0] or shifts[i, 1]:
            images[i] = np.roll(images[i], tuple(shifts[i]), axis=(-2, -1))
        if flips[i]:
            images[i] = images[i][:, :, ::-1]
    return images


def make_synthetic_dataset(rng, classes=10, channels=3, size=16,
                           n_train=5000, n_test=1000, noise=1.0,
                           signal=0.15, shift=2, flip=True):
    """Deterministic given the generator; labels are balanced round-robin.

    signal is the per-pixel prototype std relative to the noise std; the
    default keeps class prototypes a few noise-sigmas apart in image space,
    so the classes are learnable but not trivially separable.
    """
    if min(classes, channels, size, n_train, n_test) < 1:
        raise ConfigError("dataset dimensions must be positive")
    protos = _smooth(rng.normal(size=(classes, channels, size, size)))
    protos *= signal * max(noise, 1e-9) / max(float(protos.std()), 1e-9)
    train_labels = np.arange(n_train, dtype=np.int64) % classes
    test_labels = np.arange(n_test, dtype=np.int64) % classes
    # both splits get the same augmentation, so they are an iid split and
    # the train/test gap measures overfitting alone
    train = _sample_split(protos, train_labels, noise, shift, flip, rng)
    test = _sample_split(protos, test_labels, noise, shift, flip, rng)
    mean = train.mean(axis=(0, 2, 3))
    std = train.std(axis=(0, 2, 3))
    std = np.where(std > 1e-9, std, 1.0)
    train = (train - mean[None, :, None, None]) / std[None, :, None, None]
    test = (test - mean[None, :, None, None]) / std[None, :, None, None]
    return SyntheticDataset(
        train_images=train,
        train_labels=train_labels,
        test_images=test,
        test_labels=test_labels,
        channel_mean=mean,
        channel_std=std,
    )
