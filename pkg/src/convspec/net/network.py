"""Network assembly, forward/backward with a block-boundary tape, gradient
checking, and checkpoint I/O."""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..convspectrum import target_sigma
from ..errors import ConfigError, NumericError, StateError
from .blocks import (
    PlainBlock,
    ResidualIdentityBlock,
    TransitionOriginalBlock,
    TransitionProposedBlock,
    run_backward,
    run_forward,
)
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    ReLU,
    SoftmaxCrossEntropy,
    SquaredError,
    ceil_div,
)

ARCHITECTURES = ("plain", "resnet", "procresnet")


@dataclass
class ArchSpec:
    """Architecture description consumed by build_network."""

    architecture: str
    depth: int  # number of blocks L
    widths: tuple = (16, 32, 64)
    input_size: int = 16
    input_channels: int = 3
    classes: int = 10
    head_width: int = 0  # 0 -> widths[0] // 2 (plain/resnet only)
    convs_per_block: int = 3
    batchnorm: bool = True
    relu_corrected_sigma: bool = False
    padding: str = "zero"
    branch_scale: float = 1.0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ConfigError("widths must be three positive stage widths")
        if self.depth < 3:
            raise ConfigError("depth must be >= 3 (one block per stage)")
        if self.convs_per_block not in (2, 3):
            raise ConfigError("convs_per_block must be 2 or 3")
        if min(self.input_size, self.input_channels, self.classes) < 1:
            raise ConfigError("input size, channels and classes must be >= 1")
        if self.padding not in ("zero", "circular"):
            raise ConfigError(f"unknown padding {self.padding!r}")
        if self.head_width == 0:
            self.head_width = max(self.widths[0] // 2, 1)


@dataclass
class ProjectedConv:
    """A conv* layer together with its projection geometry."""

    name: str
    conv: Conv2d
    n: int  # output feature-map size: the projection resolution
    sigma_target: float


@dataclass
class GradReport:
    """Parameter gradients plus the gradient at every block boundary
    (boundary_grads[l] is dE/dx_{l+1}, the input of block l)."""

    param_grads: dict
    boundary_grads: list
    input_grad: np.ndarray = None


class Network:
    """Head layers, an ordered block list, tail layers, and a loss."""

    def __init__(self, head, blocks, tail, loss, arch=None):
        self.head = head
        self.blocks = blocks
        self.tail = tail
        self.loss = loss
        self.arch = arch
        self.projected_convs = []
        self.tape = None
        self._labels = None

    # -- execution ----------------------------------------------------
    def forward(self, batch, labels, train=True):
        """Returns (loss, tape); tape = [input, x_1..x_{L+1}, logits]."""
        x = np.asarray(batch, dtype=np.float64)
        tape = [x]
        x = run_forward(self.head, x, train)
        tape.append(x)
        for block in self.blocks:
            x = block.forward(x, train)
            tape.append(x)
        x = run_forward(self.tail, x, train)
        tape.append(x)
        loss = self.loss.forward(x, labels)
        self.tape = tape
        self._labels = labels
        if not np.isfinite(loss):
            raise NumericError(
                f"non-finite loss; first offending block: {self._first_bad_block()}",
                block=self._first_bad_block(),
            )
        return loss, tape

    def _first_bad_block(self):
        if self.tape is None:
            return "unknown"
        names = (
            ["input", "head"]
            + [f"block{i + 1}:{b.kind}" for i, b in enumerate(self.blocks)]
            + ["tail"]
        )
        for name, act in zip(names, self.tape):
            if not np.all(np.isfinite(act)):
                return name
        return "loss"

    def backward(self):
        """Populates parameter grads; returns the GradReport."""
        if self.tape is None:
            raise StateError("backward called before forward")
        n_blocks = len(self.blocks)
        boundary = [None] * (n_blocks + 1)
        dy = self.loss.backward()
        dy = run_backward(self.tail, dy)
        boundary[n_blocks] = dy
        for i in range(n_blocks - 1, -1, -1):
            dy = self.blocks[i].backward(dy)
            boundary[i] = dy
        input_grad = run_backward(self.head, dy)
        return GradReport(
            param_grads={name: g for name, _, g in self.param_items()},
            boundary_grads=boundary,
            input_grad=input_grad,
        )

    def evaluate(self, images, labels, batch_size=256):
        """Mean loss and top-1 error in eval mode (running BN stats)."""
        total_loss = 0.0
        wrong = 0
        count = images.shape[0]
        for start in range(0, count, batch_size):
            xb = images[start : start + batch_size]
            yb = labels[start : start + batch_size]
            loss, tape = self.forward(xb, yb, train=False)
            logits = tape[-1]
            total_loss += loss * xb.shape[0]
            wrong += int(np.sum(np.argmax(logits, axis=1) != yb))
        return total_loss / count, wrong / count

    # -- parameters ---------------------------------------------------
    def _named_layers(self):
        for i, layer in enumerate(self.head):
            yield f"head{i}", layer
        for i, block in enumerate(self.blocks):
            yield from block.layer_items(f"block{i + 1}")
        for i, layer in enumerate(self.tail):
            yield f"tail{i}", layer

    def param_items(self):
        """All (name, value, grad) triples, in a stable order."""
        items = []
        for name, layer in self._named_layers():
            items.extend(layer.param_items(name))
        return items

    def num_params(self):
        return sum(v.size for _, v, _ in self.param_items())


def grad_check(net, batch, labels, h=1e-5, max_samples_per_tensor=6):
    """Max relative error between analytic and central-difference grads.

    Samples evenly spaced entries of every parameter tensor; relative
    error is |a - n| / max(|a|, |n|, 1e-8).
    """
    if net.num_params() > 5 * 10**4:
        raise ConfigError("grad_check is meant for nets with <= 5e4 parameters")
    net.forward(batch, labels, train=True)
    net.backward()
    analytic = {name: g.copy() for name, _, g in net.param_items()}
    worst = 0.0
    for name, value, _ in net.param_items():
        flat = value.reshape(-1)
        n_idx = min(max_samples_per_tensor, flat.size)
        idxs = np.unique(np.linspace(0, flat.size - 1, n_idx).astype(np.int64))
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + h
            loss_plus, _ = net.forward(batch, labels, train=True)
            flat[idx] = orig - h
            loss_minus, _ = net.forward(batch, labels, train=True)
            flat[idx] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


# -- architecture assembly -------------------------------------------------


def _stage_sizes(depth):
    base, rem = divmod(depth, 3)
    return [base + (1 if i < rem else 0) for i in range(3)]


def _conv_branch(cin, cout, stride, spec, rng, lead_bn=True, scale_last=False):
    """Pre-activation conv stack: (BN) ReLU Conv repeated.

    scale_last multiplies the final conv's init by spec.branch_scale; used
    for residual branches so identity-skip blocks can start close to the
    identity map (branch_scale 0 is the usual zero-init-residual trick).
    """
    layers = []

    def bn_relu(ch):
        if spec.batchnorm:
            layers.append(BatchNorm2d(ch))
        layers.append(ReLU())

    if spec.convs_per_block == 3:
        if lead_bn:
            bn_relu(cin)
        layers.append(Conv2d(1, cin, cout, stride=stride, padding=spec.padding, rng=rng))
        bn_relu(cout)
        layers.append(Conv2d(3, cout, cout, padding=spec.padding, rng=rng))
        bn_relu(cout)
        layers.append(Conv2d(1, cout, cout, padding=spec.padding, rng=rng))
    else:
        if lead_bn:
            bn_relu(cin)
        layers.append(Conv2d(3, cin, cout, stride=stride, padding=spec.padding, rng=rng))
        bn_relu(cout)
        layers.append(Conv2d(3, cout, cout, padding=spec.padding, rng=rng))
    if scale_last and spec.branch_scale != 1.0:
        layers[-1].w *= spec.branch_scale
    return layers


def build_network(spec, rng):
    """Wire up a plain / resnet / procresnet classifier per the spec.

    resnet: head conv (3x3, head_width), then L blocks in three stages;
    the first block of each stage is a transition (stride 2 after stage 1).
    procresnet replaces the dimension changes with projected conv* layers:
    the head conv doubles as the first one, so stage 1 starts directly at
    widths[0] with identity-skip blocks only.
    """
    if not isinstance(spec, ArchSpec):
        raise ConfigError("build_network expects an ArchSpec")
    sizes = _stage_sizes(spec.depth)
    widths = spec.widths
    net = Network(head=[], blocks=[], tail=[], loss=SoftmaxCrossEntropy(), arch=spec)
    relu_sigma = spec.relu_corrected_sigma

    if spec.architecture == "procresnet":
        head_conv = Conv2d(3, spec.input_channels, widths[0], padding=spec.padding, rng=rng)
        net.head = [head_conv]
        net.projected_convs.append(
            ProjectedConv(
                name="head0.w",
                conv=head_conv,
                n=spec.input_size,
                sigma_target=target_sigma(widths[0], spec.input_channels, relu_sigma),
            )
        )
    else:
        net.head = [
            Conv2d(3, spec.input_channels, spec.head_width, padding=spec.padding, rng=rng)
        ]

    cur_w = widths[0] if spec.architecture == "procresnet" else spec.head_width
    cur_size = spec.input_size
    for stage in range(3):
        stage_w = widths[stage]
        stride = 1 if stage == 0 else 2
        for b in range(sizes[stage]):
            first = b == 0
            if spec.architecture == "plain":
                if first:
                    block = PlainBlock(
                        _conv_branch(cur_w, stage_w, stride, spec, rng),
                        is_transition=True,
                    )
                else:
                    block = PlainBlock(_conv_branch(stage_w, stage_w, 1, spec, rng))
            elif spec.architecture == "resnet":
                if first:
                    pre = []
                    if spec.batchnorm:
                        pre.append(BatchNorm2d(cur_w))
                    pre.append(ReLU())
                    branch = _conv_branch(cur_w, stage_w, stride, spec, rng,
                                          lead_bn=False, scale_last=True)
                    skip = Conv2d(1, cur_w, stage_w, stride=stride,
                                  padding=spec.padding, rng=rng)
                    block = TransitionOriginalBlock(pre, branch, skip)
                else:
                    block = ResidualIdentityBlock(
                        _conv_branch(stage_w, stage_w, 1, spec, rng,
                                     scale_last=True)
                    )
            else:  # procresnet
                if first and stage > 0:
                    # conv* is a bare regularized conv layer (no BN/ReLU of
                    # its own): its backward map is exactly the projected
                    # operator, which is what keeps the block norm-preserving
                    conv_star = Conv2d(3, cur_w, stage_w, stride=stride,
                                       padding=spec.padding, rng=rng)
                    unit = [conv_star]
                    branch = _conv_branch(stage_w, stage_w, 1, spec, rng,
                                          scale_last=True)
                    block = TransitionProposedBlock(unit, branch)
                    net.projected_convs.append(
                        ProjectedConv(
                            name=f"block{len(net.blocks) + 1}.conv*",
                            conv=conv_star,
                            n=ceil_div(cur_size, stride),
                            sigma_target=target_sigma(stage_w, cur_w, relu_sigma),
                        )
                    )
                else:
                    block = ResidualIdentityBlock(
                        _conv_branch(stage_w, stage_w, 1, spec, rng,
                                     scale_last=True)
                    )
            block.out_size = ceil_div(cur_size, stride) if first else cur_size
            block.width = stage_w
            net.blocks.append(block)
            if first:
                cur_size = ceil_div(cur_size, stride)
                cur_w = stage_w
    tail = []
    if spec.batchnorm:
        tail.append(BatchNorm2d(cur_w))
    tail.append(ReLU())
    tail.append(GlobalAvgPool())
    tail.append(Linear(cur_w, spec.classes, rng=rng))
    net.tail = tail
    return net


def build_uniform_residual_network(width, depth, input_size, classes, rng,
                                   input_channels=3, convs_per_block=2,
                                   batchnorm=False, padding="circular",
                                   init_scale=1.0):
    """Constant-width stack of stride-1 identity-skip blocks.

    With convs_per_block=2, batchnorm off and circular padding, each block
    is exactly x + conv2(relu(conv1(relu(x)))) acting as a circular
    operator, so the frequency-slice operator norms of the two kernels
    bound the block Jacobian exactly.
    """
    head = [Conv2d(3, input_channels, width, padding="zero", rng=rng)]
    spec = ArchSpec(
        architecture="resnet", depth=3, widths=(width, width, width),
        input_size=input_size, input_channels=input_channels, classes=classes,
        convs_per_block=convs_per_block, batchnorm=batchnorm, padding=padding,
    )
    blocks = []
    for _ in range(depth):
        block = ResidualIdentityBlock(_conv_branch(width, width, 1, spec, rng))
        if init_scale != 1.0:
            for layer in block.branch:
                if isinstance(layer, Conv2d):
                    layer.w *= init_scale
        block.out_size = input_size
        block.width = width
        blocks.append(block)
    tail = [ReLU(), GlobalAvgPool(), Linear(width, classes, rng=rng)]
    if batchnorm:
        tail.insert(0, BatchNorm2d(width))
    net = Network(head=head, blocks=blocks, tail=tail,
                  loss=SoftmaxCrossEntropy(), arch=None)
    return net


def build_linear_residual_network(n_dim, depth, rng=None, init="zero"):
    """Stack of L identity-skip blocks whose branch is one square linear
    map (zero-initialized by default, so every block starts at J = I);
    loss is the mean half squared error."""
    blocks = []
    for _ in range(depth):
        if init == "zero":
            w = np.zeros((n_dim, n_dim))
            lin = Linear(n_dim, n_dim, bias=False, weights=w)
        else:
            lin = Linear(n_dim, n_dim, bias=False, rng=rng)
        blk = ResidualIdentityBlock([lin])
        blk.out_size = n_dim
        blk.width = n_dim
        blocks.append(blk)
    return Network(head=[], blocks=blocks, tail=[], loss=SquaredError(), arch=None)


# -- checkpoints ------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(net, out_dir):
    """JSON manifest + flat float64 blob of all parameters."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, value, _ in net.param_items():
        flat = np.ascontiguousarray(value, dtype=np.float64).ravel()
        entries.append({
            "name": name,
            "shape": list(value.shape),
            "offset": offset,
            "length": int(flat.size),
        })
        chunks.append(flat)
        offset += flat.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0)
    blob_path = os.path.join(out_dir, "params.bin")
    blob.tofile(blob_path)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "dtype": "float64",
        "blob": "params.bin",
        "sha256": hashlib.sha256(blob.tobytes()).hexdigest(),
        "arch": asdict(net.arch) if net.arch is not None else None,
        "params": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir):
    """Rebuild the network named by the manifest and restore parameters."""
    with open(os.path.join(ckpt_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest["version"] != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {manifest['version']}")
    if manifest["arch"] is None:
        raise ConfigError("checkpoint has no architecture record")
    arch = manifest["arch"]
    arch["widths"] = tuple(arch["widths"])
    spec = ArchSpec(**arch)
    net = build_network(spec, rng=np.random.default_rng(0))
    blob = np.fromfile(os.path.join(ckpt_dir, "params.bin"), dtype=np.float64)
    if hashlib.sha256(blob.tobytes()).hexdigest() != manifest["sha256"]:
        raise ConfigError("checkpoint blob does not match manifest sha256")
    by_name = {name: value for name, value, _ in net.param_items()}
    for entry in manifest["params"]:
        value = by_name[entry["name"]]
        chunk = blob[entry["offset"] : entry["offset"] + entry["length"]]
        value[...] = chunk.reshape(entry["shape"])
    return net
