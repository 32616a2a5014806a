"""Channel-grid ratio experiment (3-conv probe net) and multi-seed helpers.

The probe net is conv1x1 (3 -> c) / ReLU / conv3x3 (c -> d) / ReLU /
conv1x1 (d -> 3) / ReLU / pool / linear. The measured quantity is the
gradient-norm ratio across the middle conv + ReLU unit, with and without
projecting the conv kernels to their norm-preserving target values every
projection period.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .convspectrum import Kernel4, project_kernel_detailed, target_sigma
from .data import make_synthetic_dataset
from .net.layers import Conv2d, GlobalAvgPool, Linear, ReLU, SoftmaxCrossEntropy
from .tensor import l2_norm, spawn_rngs
from .train import SgdOptimizer

FIGRATIO_CSV_HEADER = "c,d,projected,mean_ratio,std_ratio,runs,failure_expected"


@dataclass
class FigRatioCell:
    c: int
    d: int
    projected: bool
    mean_ratio: float
    std_ratio: float
    runs: int
    failure_expected: bool


def _fmt(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return f"{x:.9g}"
    if isinstance(x, bool):
        return "1" if x else "0"
    return str(x)


def write_figratio_csv(path, cells):
    with open(path, "w") as fh:
        fh.write(FIGRATIO_CSV_HEADER + "\n")
        for cell in cells:
            fh.write(",".join(_fmt(v) for v in (
                cell.c, cell.d, cell.projected, cell.mean_ratio,
                cell.std_ratio, cell.runs, cell.failure_expected,
            )) + "\n")


class ProbeNet:
    """The 3-conv probe: ratios are read around the middle conv-ReLU."""

    def __init__(self, c, d, classes, rng, relu_corrected=True):
        self.conv1 = Conv2d(1, 3, c, rng=rng)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(3, c, d, rng=rng)
        self.relu2 = ReLU()
        self.conv3 = Conv2d(1, d, 3, rng=rng)
        self.relu3 = ReLU()
        self.pool = GlobalAvgPool()
        self.linear = Linear(3, classes, rng=rng)
        self.loss = SoftmaxCrossEntropy()
        self.targets = [
            (self.conv1, target_sigma(c, 3, relu_corrected)),
            (self.conv2, target_sigma(d, c, relu_corrected)),
            (self.conv3, target_sigma(3, d, relu_corrected)),
        ]

    def param_items(self):
        items = []
        for name, layer in (("conv1", self.conv1), ("conv2", self.conv2),
                            ("conv3", self.conv3), ("linear", self.linear)):
            items.extend(layer.param_items(name))
        return items

    def step_ratio(self, xb, yb):
        """One forward/backward; returns (loss, ratio across conv2+relu2)."""
        h = self.relu1.forward(self.conv1.forward(xb))
        h = self.relu2.forward(self.conv2.forward(h))
        h = self.relu3.forward(self.conv3.forward(h))
        logits = self.linear.forward(self.pool.forward(h))
        loss = self.loss.forward(logits, yb)
        dy = self.pool.backward(self.linear.backward(self.loss.backward()))
        dy = self.conv3.backward(self.relu3.backward(dy))
        grad_out = l2_norm(dy)  # dE/d(output of the conv2+relu2 unit)
        dy = self.conv2.backward(self.relu2.backward(dy))
        grad_in = l2_norm(dy)  # dE/d(input of conv2)
        self.conv1.backward(self.relu1.backward(dy))
        ratio = grad_in / grad_out if grad_out > 0 else float("nan")
        return loss, ratio

    def project(self, n, max_iters=60, tol=1e-7):
        for conv, sigma in self.targets:
            kernel = Kernel4(k=conv.k, d=conv.out_ch, c=conv.in_ch, weights=conv.w)
            rep = project_kernel_detailed(kernel, n, sigma,
                                          max_iters=max_iters, tol=tol)
            conv.w[...] = rep.kernel.weights


def _run_probe(cfg, c, d, seed, projected):
    """Train the probe once; returns the mean ratio over the final epoch."""
    rng_data, rng_init, rng_shuffle = spawn_rngs(seed, 3)
    dataset = make_synthetic_dataset(
        rng_data, classes=cfg.classes, channels=3, size=cfg.input_size,
        n_train=cfg.train_size, n_test=1, noise=cfg.noise, signal=cfg.signal,
        shift=1, flip=True,
    )
    net = ProbeNet(c, d, cfg.classes, rng_init)
    optimizer = SgdOptimizer(cfg.lr, cfg.momentum, cfg.weight_decay)
    if projected:
        net.project(cfg.input_size)
    n_train = dataset.train_images.shape[0]
    step = 0
    last_epoch_ratios = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng_shuffle.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, ratio = net.step_ratio(
                dataset.train_images[idx], dataset.train_labels[idx]
            )
            if epoch == cfg.epochs and np.isfinite(ratio):
                last_epoch_ratios.append(ratio)
            optimizer.step(net.param_items())
            step += 1
            if projected and step % cfg.projection_period == 0:
                net.project(cfg.input_size)
    return float(np.mean(last_epoch_ratios))


def _figratio_cell(args):
    cfg, c, d, projected, failure = args
    ratios = [
        _run_probe(cfg, c, d, cfg.seed * 10007 + run, projected)
        for run in range(cfg.runs)
    ]
    return FigRatioCell(
        c=c, d=d, projected=projected,
        mean_ratio=float(np.mean(ratios)),
        std_ratio=float(np.std(ratios)),
        runs=cfg.runs,
        failure_expected=failure,
    )


def figratio_cells(cfg):
    cells = []
    for c in cfg.channels:
        for d in cfg.channels:
            for projected in (True, False):
                cells.append((cfg, c, d, projected, False))
    for c in cfg.failure_in_channels:
        for d in cfg.failure_out_channels:
            for projected in (True, False):
                cells.append((cfg, c, d, projected, True))
    return cells


def run_figratio(cfg, max_workers=None):
    """All grid cells, mean ratio over cfg.runs seeds per cell; results are
    sorted (c, d, projected) so any parallel schedule emits identical CSV."""
    tasks = figratio_cells(cfg)
    if max_workers is None:
        max_workers = min(os.cpu_count() or 1, 4)
    if max_workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_figratio_cell, tasks))
    else:
        results = [_figratio_cell(t) for t in tasks]
    results.sort(key=lambda cell: (cell.c, cell.d, not cell.projected))
    return results
