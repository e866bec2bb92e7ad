"""Split magnitude/phase CSI feedback for FDD massive MIMO.

The magnitude branch compresses angle-delay magnitudes and decodes them with
uplink magnitudes as side information. The phase branch compresses cosines
and sends one sign bit for the strongest entries. A small combining network
refines the recombined estimate.
"""

from .autodiff import NumericError, Tensor, gradient_check
from .channels import (
    AngleDelayCsi,
    ChannelModelConfig,
    CsiDataset,
    CsiSamplePair,
    FormatError,
    dataset_load,
    dataset_save,
    from_angle_delay,
    generate_dataset,
    nmse_db,
    to_angle_delay,
)
from .decomposition import BitBudget, MdpqTable, SignMatrix, decompose, phase_bit_budget, recombine
from .experiments import ExperimentSpec, ResultRow, compare_core, compare_losses
from .model import DualNetModel, FeedbackPayload, FrameworkConfig
from .training import (
    InvalidStateError,
    TrainConfig,
    TrainReport,
    checkpoint_load,
    checkpoint_save,
    evaluate,
    train_stage1,
    train_stage2,
)

__version__ = "0.1.0"
