"""airmask: psychoacoustically masked, playback-robust adversarial audio.

Synthesizes additive perturbations that steer a small differentiable CTC
recognizer toward an attacker-chosen transcript while staying under the
carrier's psychoacoustic masking thresholds, and keeps the attack effective
through a fully simulated speaker / room / microphone playback channel.
"""

from ._accel import USING_NUMBA
from .attack import AttackConfig, AttackResult, combined_loss, generate_attack
from .channel import AugmentConfig, batch_channel, simulate_channel
from .errors import (
    AirmaskError,
    AttackDivergenceError,
    ConfigError,
    FormatError,
    GenerationError,
    InvalidInputError,
    TrainingError,
)
from .metrics import EvalReport, edit_distance, evaluate_attack, per, wer
from .psychoacoustic import (
    MaskingThresholdMatrix,
    absolute_threshold,
    compute_masking_thresholds,
    f_pam,
    f_pam_gradient,
    hz_to_bark,
)
from .room_sim import Rir, RoomGenConfig, RoomTemplate, RoomVariant, apply_rir, compute_rir, generate_rooms
from .signal_core import (
    SAMPLE_RATE,
    FilterKernel,
    Spectrogram,
    StftConfig,
    Waveform,
    convolve,
    design_bandpass,
    istft,
    read_wav,
    stft,
    write_wav,
)
from .toy_asr import (
    AcousticModel,
    FeatureMatrix,
    Vocab,
    backprop_to_waveform,
    featurize,
    forward,
    greedy_decode,
    init_model,
    synth_corpus,
    train,
)
from .ctc import ctc_loss

__version__ = "0.1.0"
