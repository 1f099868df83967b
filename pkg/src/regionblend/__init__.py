"""Region-targeted image customization with blended self-attention, on a toy numpy diffusion model."""
__version__ = "0.1.0"

from .blend import BlendConfig, FeatureTap, blend, blend_branch, blend_taps, run_injected_step
from .denoiser import (AttentionBlock, Denoiser, DenoiserConfig, Prompt, TapPlan,
                       load_checkpoint, save_checkpoint, seeded_init, self_attention)
from .errors import (BlendConfigError, CollageError, ConfigError, DegenerateGridError,
                     ImageIOError, NumericalFailure, RegionBlendError, ScheduleConfigError,
                     ShapeError, SolverError, TapPlanError)
from .metrics import MetricReport, compare_images, mae, psnr, ssim
from .pipeline import (CustomizeResult, RunConfig, customize, customize_detailed, invert,
                       customize_batch, load_model, reconstruct, reconstruct_batch)
from .region import (CollageSpec, MaskSet, decode, encode, fuse_latent, make_collage,
                     make_multi_collage, step_latent_copy)
from .schedule import (NoiseSchedule, Solver, SolverState, data_prediction, ddim_step,
                       dpmpp_2m_step, make_schedule, run_trajectory)

__all__ = [name for name in dir() if not name.startswith("_")]
