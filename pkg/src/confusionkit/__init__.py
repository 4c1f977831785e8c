"""Two-speaker extraction confusion test bed.

Simulates target-confused extraction outputs, trains a toy speaker
encoder with metric-learning losses, and rectifies confused outputs via
embedding-similarity decision borders and mixture subtraction.
"""

from .audio import (
    CAP_DB,
    SI_SDR_EPS,
    Waveform,
    load_wav,
    mix,
    save_wav,
    si_sdr,
    si_sdr_improvement,
    truncate_random,
)
from .embedding import (
    Embedding,
    FeatureMatrix,
    FrontendConfig,
    ToyEncoder,
    cosine_similarity,
    encode,
    init_encoder,
    l2_distance_normed,
    load_encoder,
    log_mel_features,
    save_encoder,
)
from .losses import (
    SCHEMES,
    GE2EParams,
    MultiTaskConfig,
    Prototype,
    Triplet,
    TripletConfig,
    UtteranceBank,
    ce_speaker_loss,
    finite_difference_check,
    ge2e_centroid,
    ge2e_loss,
    multitask_loss,
    prototype,
    prototypical_loss,
    triplet_loss,
)
from .postfilter import (
    PostFilterParams,
    SimilarityPair,
    ValidationRecord,
    apply_postfilter,
    build_validation_records,
    decide_confused,
    load_params,
    run_pipeline,
    save_params,
    similarity_features,
    tune_linear,
    tune_rectangular,
)
from .simulate import (
    ConfusionConfig,
    Corpus,
    ExtractionSample,
    SyntheticSpeaker,
    build_corpus,
    confusion_draw,
    generate_corpus,
    load_corpus,
    make_extraction_sample,
    make_speakers,
    subset,
    swap_roles,
    synth_utterance,
    toy_separator,
)
from .training import (
    EmbeddingQuality,
    TrainConfig,
    TrainReport,
    eval_embedding_quality,
    train_encoder,
)
from .evaluate import (
    EvalRecord,
    confusion_rate,
    emit_report,
    margin_analysis,
    paired_eval_records,
    quadrant_stats,
)

__version__ = "0.1.0"
