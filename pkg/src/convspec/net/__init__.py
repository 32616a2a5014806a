from .blocks import (
    PlainBlock,
    ResidualIdentityBlock,
    TransitionOriginalBlock,
    TransitionProposedBlock,
    block_uses_batchnorm,
    branch_convs,
)
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    ReLU,
    SoftmaxCrossEntropy,
    SquaredError,
)
from .network import (
    ArchSpec,
    GradReport,
    Network,
    build_linear_residual_network,
    build_network,
    build_uniform_residual_network,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)
