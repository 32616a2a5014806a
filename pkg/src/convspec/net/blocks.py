"""Block topologies: plain stacks, identity-skip residual blocks, and the
two transition flavors (1x1-stride-2 skip vs. projected dimension change
followed by an identity-skip block)."""

import numpy as np

from ..errors import DimensionError


def run_forward(layers, x, train):
    for layer in layers:
        x = layer.forward(x, train)
    return x


def run_backward(layers, dy):
    for layer in reversed(layers):
        dy = layer.backward(dy)
    return dy


class ResidualIdentityBlock:
    """x + F(x); requires the branch to preserve the activation shape."""

    kind = "residual-identity"
    is_transition = False

    def __init__(self, branch):
        self.branch = branch

    def forward(self, x, train=True):
        out = x + run_forward(self.branch, x, train)
        if out.shape != x.shape:
            raise DimensionError(
                "identity-skip branch changed the activation shape"
            )
        return out

    def backward(self, dy):
        return dy + run_backward(self.branch, dy)

    def layer_items(self, prefix):
        for i, layer in enumerate(self.branch):
            yield f"{prefix}.branch{i}", layer


class TransitionOriginalBlock:
    """Shared pre-activation, conv branch, and a 1x1 strided conv skip."""

    kind = "transition-original"
    is_transition = True

    def __init__(self, pre, branch, skip):
        self.pre = pre
        self.branch = branch
        self.skip = skip

    def forward(self, x, train=True):
        h = run_forward(self.pre, x, train)
        return run_forward(self.branch, h, train) + self.skip.forward(h, train)

    def backward(self, dy):
        dh = run_backward(self.branch, dy) + self.skip.backward(dy)
        return run_backward(self.pre, dh)

    def layer_items(self, prefix):
        for i, layer in enumerate(self.pre):
            yield f"{prefix}.pre{i}", layer
        for i, layer in enumerate(self.branch):
            yield f"{prefix}.branch{i}", layer
        yield f"{prefix}.skip", self.skip


class TransitionProposedBlock:
    """Projected dimension-changing unit, then an identity-skip block."""

    kind = "transition-proposed"
    is_transition = True

    def __init__(self, unit, branch):
        self.unit = unit  # BN, ReLU, projected conv* changing dims
        self.branch = branch  # residual branch at the new dimension

    def forward(self, x, train=True):
        z = run_forward(self.unit, x, train)
        return z + run_forward(self.branch, z, train)

    def backward(self, dy):
        dz = dy + run_backward(self.branch, dy)
        return run_backward(self.unit, dz)

    def layer_items(self, prefix):
        for i, layer in enumerate(self.unit):
            yield f"{prefix}.unit{i}", layer
        for i, layer in enumerate(self.branch):
            yield f"{prefix}.branch{i}", layer


class PlainBlock:
    """The same layer stack with the skip connection removed."""

    kind = "plain"

    def __init__(self, layers, is_transition=False):
        self.layers = layers
        self.is_transition = is_transition

    def forward(self, x, train=True):
        return run_forward(self.layers, x, train)

    def backward(self, dy):
        return run_backward(self.layers, dy)

    def layer_items(self, prefix):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}.layer{i}", layer


def branch_convs(block):
    """The conv layers inside a block's residual branch (used by the
    two-conv bound evaluator)."""
    from .layers import Conv2d

    layers = getattr(block, "branch", None) or getattr(block, "layers", [])
    return [l for l in layers if isinstance(l, Conv2d)]


def block_uses_batchnorm(block):
    from .layers import BatchNorm2d

    return any(
        isinstance(layer, BatchNorm2d)
        for _, layer in block.layer_items("b")
    )
