"""SGD training loop with periodic spectrum projection and norm telemetry."""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .convspectrum import Kernel4, project_kernel_detailed
from .data import make_synthetic_dataset
from .errors import NumericError
from .net.network import ArchSpec, build_network
from .probe import RatioRecord, record_ratios, write_ratio_csv
from .tensor import spawn_rngs

LOSS_CSV_HEADER = "run_id,epoch,train_loss,train_err,test_loss,test_err"
PROJECTION_CSV_HEADER = "run_id,epoch,step,layer,sigma_target,ns_iterations,post_truncation_max_dev"


def _fmt(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return f"{x:.9g}"
    return str(x)


@dataclass
class TrainResult:
    run_id: str
    status: str  # "ok" or "numeric_error"
    loss_rows: list = field(default_factory=list)
    ratio_records: list = field(default_factory=list)
    projection_rows: list = field(default_factory=list)
    failed_epoch: int = -1
    failed_step: int = -1
    failed_block: str = ""
    net: object = None


def arch_spec_from_config(cfg):
    return ArchSpec(
        architecture=cfg.architecture,
        depth=cfg.depth,
        widths=cfg.widths,
        input_size=cfg.input_size,
        classes=cfg.classes,
        head_width=cfg.head_width,
        convs_per_block=cfg.convs_per_block,
        batchnorm=cfg.batchnorm,
        relu_corrected_sigma=cfg.relu_corrected_sigma,
        padding=cfg.padding,
        branch_scale=cfg.branch_scale,
    )


class SgdOptimizer:
    """SGD with momentum; weight decay is added to the gradient."""

    def __init__(self, lr, momentum, weight_decay):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buffers = {}

    def step(self, param_items):
        for name, value, grad in param_items:
            g = grad + self.weight_decay * value
            buf = self._buffers.get(name)
            if buf is None:
                buf = np.zeros_like(value)
                self._buffers[name] = buf
            buf *= self.momentum
            buf += g
            value -= self.lr * buf


def project_network(net, max_iters=60, tol=1e-7, with_spectra=False):
    """Apply the spectrum projection to every registered conv* kernel.

    Returns a list of (layer_name, sigma_target, ns_iterations,
    post_truncation_max_dev) tuples; the deviation is only computed when
    with_spectra is set.
    """
    rows = []
    for pc in net.projected_convs:
        conv = pc.conv
        kernel = Kernel4(k=conv.k, d=conv.out_ch, c=conv.in_ch, weights=conv.w)
        rep = project_kernel_detailed(
            kernel, pc.n, pc.sigma_target,
            max_iters=max_iters, tol=tol, with_spectra=with_spectra,
        )
        conv.w[...] = rep.kernel.weights
        rows.append(tuple([
            pc.name, pc.sigma_target, rep.newton_schulz_iterations,
            rep.post_truncation_max_dev if with_spectra else float("nan"),
        ]))
    return rows


def train_run(config, run_id=None, probe=True, keep_net=True):
    """One deterministic training run; returns the in-memory TrainResult.

    A non-finite loss ends the run with status 'numeric_error' and the
    failing epoch/step/block recorded (partial telemetry is kept).
    """
    if run_id is None:
        run_id = f"{config.architecture}-L{config.depth}-seed{config.seed}"
    rng_data, rng_init, rng_shuffle = spawn_rngs(config.seed, 3)
    dataset = make_synthetic_dataset(
        rng_data,
        classes=config.classes,
        channels=3,
        size=config.input_size,
        n_train=config.train_size,
        n_test=config.test_size,
        noise=config.noise,
        signal=config.signal,
        shift=config.shift,
        flip=config.flip,
    )
    net = build_network(arch_spec_from_config(config), rng_init)
    optimizer = SgdOptimizer(config.lr, config.momentum, config.weight_decay)
    result = TrainResult(run_id=run_id, status="ok")

    def log_projection(rows, epoch, step):
        for name, sigma, iters, dev in rows:
            result.projection_rows.append(
                (run_id, epoch, step, name, sigma, iters, dev)
            )

    # start norm-preserving: conv* kernels are projected at initialization
    log_projection(project_network(net, with_spectra=True), 0, 0)
    step = 0
    n_train = dataset.train_images.shape[0]
    try:
        for epoch in range(1, config.epochs + 1):
            if config.lr_decay and epoch == config.epochs // 2 + 1:
                optimizer.lr = config.lr * 0.1
            order = rng_shuffle.permutation(n_train)
            for start in range(0, n_train, config.batch_size):
                idx = order[start : start + config.batch_size]
                xb = dataset.train_images[idx]
                yb = dataset.train_labels[idx]
                loss, _ = net.forward(xb, yb, train=True)
                report = net.backward()
                if probe and step % config.ratio_log_every == 0:
                    result.ratio_records.extend(
                        record_ratios(report, net, run_id, epoch, step)
                    )
                optimizer.step(net.param_items())
                step += 1
                if net.projected_convs and step % config.projection_period == 0:
                    with_spectra = start == 0
                    rows = project_network(net, with_spectra=with_spectra)
                    if with_spectra:
                        log_projection(rows, epoch, step)
            train_loss, train_err = net.evaluate(
                dataset.train_images, dataset.train_labels
            )
            test_loss, test_err = net.evaluate(
                dataset.test_images, dataset.test_labels
            )
            result.loss_rows.append(
                (run_id, epoch, train_loss, train_err, test_loss, test_err)
            )
    except NumericError as exc:
        result.status = "numeric_error"
        result.failed_epoch = len(result.loss_rows) + 1
        result.failed_step = step
        result.failed_block = exc.block or ""
    if keep_net:
        result.net = net
    return result


def write_loss_csv(path, rows):
    with open(path, "w") as fh:
        fh.write(LOSS_CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_projection_csv(path, rows):
    with open(path, "w") as fh:
        fh.write(PROJECTION_CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_run_outputs(result, out_dir):
    """ratio.csv / loss.csv / projection.csv for one finished run."""
    os.makedirs(out_dir, exist_ok=True)
    write_ratio_csv(os.path.join(out_dir, "ratio.csv"), result.ratio_records)
    write_loss_csv(os.path.join(out_dir, "loss.csv"), result.loss_rows)
    write_projection_csv(
        os.path.join(out_dir, "projection.csv"), result.projection_rows
    )
    status_path = os.path.join(out_dir, "status.txt")
    with open(status_path, "w") as fh:
        if result.status == "ok":
            fh.write("ok\n")
        else:
            fh.write(
                f"numeric_error epoch={result.failed_epoch} "
                f"step={result.failed_step} block={result.failed_block}\n"
            )


def gap_statistics(loss_rows):
    """Mean and max train/test error gap over the recorded epochs."""
    gaps = [row[5] - row[3] for row in loss_rows]
    if not gaps:
        return float("nan"), float("nan")
    return float(np.mean(gaps)), float(np.max(gaps))
