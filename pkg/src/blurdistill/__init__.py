"""blurdistill: blur-robust AI-image detection via sharp-to-blur distillation."""

__version__ = "0.1.0"

from .blur import (  # noqa: F401
    BlurKernel,
    BlurPolicy,
    DegradationRecord,
    PairedSample,
    Trajectory,
    convolve,
    parametric_kernel,
    rasterize_psf,
    sample_trajectory,
    synthesize_pair,
)
from .config import RunConfig, load_config, save_config  # noqa: F401
from .evaluation import EvalReport, blur_sweep, compare_reports, evaluate  # noqa: F401
from .losses import BatchViews, LossBreakdown, LossWeights, total_loss  # noqa: F401
from .models import EncoderConfig, FrozenEncoder, HeadConfig, HeadStack, build_heads  # noqa: F401
from .training import (  # noqa: F401
    AugmentPolicy,
    PhaseConfig,
    augment,
    cosine_lr,
    distill_student,
    train_teacher,
)
