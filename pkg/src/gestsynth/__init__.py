"""Co-speech gesture synthesis with learned template vectors."""

__version__ = "0.1.0"

from .audio import AudioClip, MelConfig, MelSpectrogram, load_wav, mel_spectrogram, write_wav
from .core import (
    ClipRecord,
    GestureSequence,
    SkeletonLayout,
    filter_frames,
    from_hierarchical,
    get_layout,
    normalize_skeleton,
    read_gesture_file,
    to_hierarchical,
    write_gesture_file,
)
from .errors import DataError, GestsynthError, NumericError, UsageError
from .generator import GeneratorConfig, GestureGenerator, TransposedInstanceNorm1d
from .metrics import (
    MetricsReport,
    fit_gaussian,
    frechet_distance,
    ftd,
    l2_distance,
    lip_sync_error,
    psd_sqrt,
)
from .synthetic import SynthConfig, synth_clip, synth_dataset
from .templates import TemplateBank, init_bank, interpolate, kl_regularizer, sample_template
from .training import (
    TrainConfig,
    VaeTrainConfig,
    evaluate,
    infer,
    load_generator_checkpoint,
    regression_loss,
    total_loss,
    train,
    train_vae,
)
from .vae import GestureVae, VaeConfig, load_vae, save_vae
