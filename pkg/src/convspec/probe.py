"""Gradient-norm telemetry and bound evaluators.

record_ratios turns one backward pass into per-block RatioRecords;
corollary1_delta and theorem2_delta evaluate the two closed-form
norm-preservation bounds; linear_residual_experiment trains the linear
residual stack and checks the per-block sandwich |ratio - 1| <=
sigma_max(W_l) at every logged step.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .convspectrum import conv_singular_values, Kernel4
from .errors import ApplicabilityError, ConvergenceError
from .net.blocks import block_uses_batchnorm, branch_convs
from .net.layers import Linear
from .net.network import build_linear_residual_network
from .spectral import singular_values
from .tensor import l2_norm, make_rng, spawn_rngs

RATIO_CSV_HEADER = "run_id,epoch,step,block_index,block_kind,grad_norm_in,grad_norm_out,ratio"


@dataclass
class RatioRecord:
    """One row of gradient-norm telemetry for one block boundary."""

    run_id: str
    epoch: int
    step: int
    block_index: int  # 1-based
    block_kind: str
    grad_norm_in: float  # ||dE/dx_l||
    grad_norm_out: float  # ||dE/dx_{l+1}||
    ratio: float  # in/out; nan when the output gradient vanishes


def _fmt(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return f"{x:.9g}"
    return str(x)


def ratio_rows(records):
    for r in records:
        yield ",".join(
            _fmt(v)
            for v in (
                r.run_id, r.epoch, r.step, r.block_index, r.block_kind,
                r.grad_norm_in, r.grad_norm_out, r.ratio,
            )
        )


def write_ratio_csv(path, records):
    with open(path, "w") as fh:
        fh.write(RATIO_CSV_HEADER + "\n")
        for row in ratio_rows(records):
            fh.write(row + "\n")


def block_kind_label(block):
    """CSV label; plain blocks that change dimensions are tagged so the
    telemetry can single them out."""
    if block.kind == "plain" and block.is_transition:
        return "plain-transition"
    return block.kind


def record_ratios(report, net, run_id="run", epoch=0, step=0):
    """One RatioRecord per block from a finished backward pass.

    Reads only the boundary gradients already produced by backward, so
    probing never perturbs the training trajectory.
    """
    records = []
    for i, block in enumerate(net.blocks):
        gin = l2_norm(report.boundary_grads[i])
        gout = l2_norm(report.boundary_grads[i + 1])
        ratio = gin / gout if gout > 0 else float("nan")
        records.append(
            RatioRecord(
                run_id=run_id,
                epoch=epoch,
                step=step,
                block_index=i + 1,
                block_kind=block_kind_label(block),
                grad_norm_in=gin,
                grad_norm_out=gout,
                ratio=ratio,
            )
        )
    return records


@dataclass
class BoundParams:
    """Constants of the linear-depth bound: delta = c/L with
    c = 2(sqrt(pi) + sqrt(3*gamma))^2, gamma from the target map's extreme
    singular values; applicability requires L >= 3*gamma."""

    L: int
    gamma: float
    c: float
    delta: float
    c_rho: float = 1.0
    applicable: bool = True


def theorem2_delta(r, L):
    """BoundParams for learning the linear map r with L residual blocks."""
    sv = singular_values(np.asarray(r, dtype=np.complex128))
    smax, smin = float(sv[0]), float(sv[-1])
    if smin <= 0.0 or not np.isfinite(smax):
        raise ApplicabilityError("gamma undefined: singular target map")
    gamma = max(abs(math.log(smax)), abs(math.log(smin)))
    c = 2.0 * (math.sqrt(math.pi) + math.sqrt(3.0 * gamma)) ** 2
    return BoundParams(
        L=L, gamma=gamma, c=c, delta=c / L, applicable=L >= 3.0 * gamma
    )


def corollary1_delta(block):
    """delta = c_rho^2 sigma_max(W1) sigma_max(W2) for a batchnorm-free
    two-conv identity-skip block (c_rho = 1 for ReLU); operator norms come
    from the frequency-slice spectrum at the block's feature-map size."""
    if block.kind != "residual-identity":
        raise ApplicabilityError(
            f"corollary applies to identity-skip blocks, got {block.kind}"
        )
    if block_uses_batchnorm(block):
        raise ApplicabilityError(
            "corollary does not account for batchnorm gradient rescaling"
        )
    convs = branch_convs(block)
    if len(convs) == 2:
        n = getattr(block, "out_size", None)
        if n is None:
            raise ApplicabilityError("block has no recorded feature-map size")
        delta = 1.0
        for conv in convs:
            kernel = Kernel4(k=conv.k, d=conv.out_ch, c=conv.in_ch, weights=conv.w)
            delta *= conv_singular_values(kernel, n).sigma_max
        return delta
    linears = [
        layer for _, layer in block.layer_items("b") if isinstance(layer, Linear)
    ]
    if len(convs) == 0 and len(linears) == 1:
        # linear residual branch: delta = sigma_max(W)
        return float(singular_values(linears[0].w.astype(np.complex128))[0])
    raise ApplicabilityError("corollary expects exactly two conv layers")


@dataclass
class LinExpEntry:
    """Aggregate over seeds for one depth L (medians unless noted)."""

    L: int
    final_loss: float
    max_abs_ratio_minus_1: float
    max_sigma_w: float
    theorem2_delta: float
    lemma1_delta: float
    applicable: bool
    sandwich_violations: int
    per_seed_max_abs_ratio_minus_1: list = field(default_factory=list)

    def to_dict(self):
        return {
            "L": self.L,
            "final_loss": self.final_loss,
            "max_abs_ratio_minus_1": self.max_abs_ratio_minus_1,
            "max_sigma_w": self.max_sigma_w,
            "theorem2_delta": self.theorem2_delta,
            "lemma1_delta": self.lemma1_delta,
            "applicable": self.applicable,
            "sandwich_violations": self.sandwich_violations,
            "per_seed_max_abs_ratio_minus_1": self.per_seed_max_abs_ratio_minus_1,
        }


@dataclass
class LinExpReport:
    entries: list

    def to_dict(self):
        return {"entries": [e.to_dict() for e in self.entries]}


class DivergenceError(RuntimeError):
    def __init__(self, message, L=None):
        super().__init__(message)
        self.L = L


# float headroom on the exactly-true sandwich |ratio-1| <= sigma_max(W_l)
SANDWICH_SLACK = 1e-9


def _train_linear_stack(r, L, steps, lr, batch, noise_std, seed, log_every):
    """Full-batch gradient descent from W_l = 0; returns final loss, the
    logged per-block |ratio-1| / sigma_max(W_l) trace, and violation count."""
    n_dim = r.shape[0]
    rng_x, rng_eps = spawn_rngs(seed, 2)
    x = rng_x.normal(size=(batch, n_dim))
    y = x @ r.T + noise_std * rng_eps.normal(size=(batch, n_dim))
    net = build_linear_residual_network(n_dim, L)
    initial_loss, _ = net.forward(x, y)
    violations = 0
    last_logged = None
    lr_eff = lr / L
    for step in range(steps):
        loss, _ = net.forward(x, y)
        if loss > 10.0 * initial_loss + 1e-12:
            raise DivergenceError(
                f"linear experiment diverged at L={L}, step={step}", L=L
            )
        report = net.backward()
        if step % log_every == 0 or step == steps - 1:
            ratios = []
            sigmas = []
            for i, block in enumerate(net.blocks):
                gin = l2_norm(report.boundary_grads[i])
                gout = l2_norm(report.boundary_grads[i + 1])
                smax = float(
                    singular_values(block.branch[0].w.astype(np.complex128))[0]
                )
                sigmas.append(smax)
                if gout > 0:
                    ratio = gin / gout
                    ratios.append(ratio)
                    if abs(ratio - 1.0) > smax + SANDWICH_SLACK:
                        violations += 1
            last_logged = (ratios, sigmas)
        for _, value, grad in net.param_items():
            value -= lr_eff * grad
    final_loss, _ = net.forward(x, y)
    ratios, sigmas = last_logged
    return {
        "final_loss": final_loss,
        "max_abs_ratio_minus_1": (
            max(abs(r_ - 1.0) for r_ in ratios) if ratios else 0.0
        ),
        "max_sigma_w": max(sigmas),
        "violations": violations,
        "final_ratios": ratios,
    }


def linear_residual_experiment(r, L_values, steps=5000, lr=0.1, batch=512,
                               noise_std=1.0, seeds=(0, 1, 2, 3, 4),
                               log_every=100):
    """Train the linear residual stack for each depth and aggregate.

    lr is divided by L (the documented default schedule); reported
    statistics are medians over seeds. theorem2_delta describes a specific
    global optimum, so it is reported alongside, never asserted against
    the measured ratios.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] > 32:
        raise ApplicabilityError("r must be square with N <= 32")
    entries = []
    for L in sorted(L_values):
        bound = theorem2_delta(r, L)
        runs = [
            _train_linear_stack(r, L, steps, lr, batch, noise_std, seed, log_every)
            for seed in seeds
        ]
        per_seed = [run["max_abs_ratio_minus_1"] for run in runs]
        entries.append(
            LinExpEntry(
                L=L,
                final_loss=float(np.median([run["final_loss"] for run in runs])),
                max_abs_ratio_minus_1=float(np.median(per_seed)),
                max_sigma_w=float(np.median([run["max_sigma_w"] for run in runs])),
                theorem2_delta=bound.delta,
                lemma1_delta=float(np.median([run["max_sigma_w"] for run in runs])),
                applicable=bound.applicable,
                sandwich_violations=sum(run["violations"] for run in runs),
                per_seed_max_abs_ratio_minus_1=per_seed,
            )
        )
    return LinExpReport(entries=entries)
