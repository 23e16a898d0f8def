"""Acoustic-prompt contrastive language-audio training and evaluation."""

from .acoustics import (
    AcousticProfile,
    AudioClip,
    FrameTrack,
    IntensityConfig,
    NucleiConfig,
    PitchConfig,
    ProfileConfig,
    compute_profile,
    intensity_contour,
    load_wav,
    pitch_track,
    syllable_nuclei,
    write_wav,
)
from .corpus import (
    ClassArchetype,
    ClipRecord,
    PreparedClip,
    SynthSpec,
    build_training_pairs,
    parse_manifest,
    prepare_clips,
    serialize_manifest,
    synth_corpus,
)
from .evaluation import (
    EvalReport,
    FinetuneHead,
    HeadConfig,
    RetrievalQuery,
    RetrievalResult,
    finetune_classify,
    finetune_head,
    leave_one_out_run,
    precision_at_k,
    retrieve_top_k,
    run_matrix,
    zero_shot_classify,
)
from .featurizers import FeaturizerConfig, encode_audio, encode_text
from .model import (
    ClapModel,
    EmbeddingBatch,
    ModelConfig,
    TrainConfig,
    TrainingPair,
    adam_step,
    contrastive_loss,
    init_model,
    load_checkpoint,
    loss_gradients,
    project,
    save_checkpoint,
    similarity,
    train,
)
from .prompting import (
    BinThresholds,
    Prompt,
    PromptKind,
    PromptPolicy,
    augment_pairs,
    bin_articulation_rate,
    bin_intensity,
    bin_pitch,
    bin_speech_rate,
    render_prompt,
)

__version__ = "0.1.0"
