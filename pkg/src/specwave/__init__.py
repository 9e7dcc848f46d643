"""Two-stage hybrid speech denoiser.

A causal spectrogram denoiser predicts clean magnitudes; its prediction is
upsampled to the sample rate and conditions a causal waveform U-Net. The
package also ships the training objectives for both stages, synthetic data
generation, chunked streaming inference with 256-sample latency, and
evaluation/benchmark tooling.
"""

from .conditioner import (
    CONDITIONING_METHODS,
    Conditioner,
    ConditionerConfig,
    HybridDenoiser,
    SpectrogramUpsampler,
    build_hybrid,
)
from .dsp import (
    ComplexSpectrogram,
    MagnitudeSpectrogram,
    StftParams,
    Waveform,
    high_band,
    istft_with_phase,
    magnitude,
    stft,
)
from .losses import (
    DEFAULT_RESOLUTIONS,
    LossBreakdown,
    hybrid_loss,
    mrstft,
    spec_loss,
    spec_loss_breakdown,
    stft_resolution_term,
    waveform_l1,
)
from .specnet import SpecNet, SpecNetConfig, specnet_init
from .streaming import DenoiserStream, open_stream
from .training import (
    Checkpoint,
    OptimConfig,
    hybrid_from_checkpoint,
    load_checkpoint,
    lr_schedule,
    save_checkpoint,
    specnet_from_checkpoint,
    train_hybrid,
    train_specnet,
)
from .unet import UNetConfig, WaveformUNet, unet_init

__version__ = "0.1.0"
