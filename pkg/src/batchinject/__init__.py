"""Training laboratory for passive batch injection.

A dual-head network (shared convolutional trunk, one classifier head per
dataset) is trained on an active dataset while one mini-batch from a
distribution-mismatched passive dataset is injected after every g active
mini-batches. Stripping the passive head afterwards yields a model with the
exact parameter count and latency of a plain single-head network.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config_file, resolve_config, with_overrides
from .data import (
    AugmentConfig,
    LabeledDataset,
    SynthSpec,
    adapt_passive,
    augment_batch,
    load_cifar10_binary,
    load_idx,
    synth_experiment,
    synth_pair,
    take_fraction,
)
from .errors import (
    BatchInjectError,
    ConfigurationError,
    DataFormatError,
    DimensionError,
    DivergedRunError,
    GradientCheckError,
    NonFiniteError,
)
from .experiments import AblationReport, g_sweep, gap_study, passive_study
from .gradcheck import gradcheck
from .metrics import EvalResult, GapRecord, evaluate, overhead_probe
from .model import (
    ConvBlock,
    DualHeadNetwork,
    HeadSpec,
    StrippedModel,
    TrunkSpec,
    build_network,
    parameter_census,
    small_trunk,
)
from .optim import LrSchedule, SgdState, lr_at, sgd_step
from .tensor import Tensor, backward, no_grad
from .training import (
    InjectionPolicy,
    StepPlan,
    TrainHistory,
    plan_epoch,
    train,
    train_step_active,
    train_step_passive,
)

__version__ = "0.1.0"
