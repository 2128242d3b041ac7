"""Translation-invariant adversarial attacks on numpy image classifiers."""

from .attacks import (
    AdversarialResult,
    AttackConfig,
    Method,
    Norm,
    attack,
    di_transform,
    l2_epsilon,
    project,
    smooth_gradient,
)
from .datasets import LabeledDataset, load_bundled_mnist, load_idx_dataset
from .errors import ConfigurationError, DivergedError, IdxFormatError
from .kernels import Kernel, KernelKind, gaussian_kernel, linear_kernel, make_kernel, uniform_kernel
from .models import (
    Classifier,
    LinearSumModel,
    TinyCnn,
    fuse_logits,
    load_model,
    loss,
    loss_and_input_grad,
    save_model,
    train,
)
from .oracle import ApproximationReport, LossSurface, compare, ensemble_gradient, loss_surface
from .tensor import ShiftMode, conv2d_same, shift

__version__ = "0.1.0"
