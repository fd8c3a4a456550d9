"""Open-set relation classification with energy-based NOTA detection and
gradient-guided negative-instance synthesis."""

from .corpus import (
    NOTA_LABEL,
    RESERVED_TOKENS,
    ConfigError,
    ParseError,
    RelationInstance,
    SplitSpec,
    TfIdfTable,
    ValidationError,
    Vocabulary,
    build_banlist,
    build_vocab,
    compute_tfidf,
    default_banlist_k,
    gen_synthetic,
    known_relations,
    load_jsonl,
    save_jsonl,
)
from .encoder import (
    NOTA_DECISION,
    EncoderConfig,
    EncoderParams,
    LengthError,
    MarkedInstance,
    class_logits,
    decide,
    encode,
    grad_embeddings,
    load_checkpoint,
    mark_instance,
    nota_score,
    save_checkpoint,
    softmax_probs,
)
from .attribution import (
    TokenImportance,
    attribution_scores,
    candidate_positions,
    counterfactual_contribution,
    dp_scores,
    importance_scores,
    select_key_tokens,
    token_importance,
)
from .synthesis import (
    NegativeInstance,
    SynthesisConfig,
    SynthesisError,
    gaussian_negative,
    misleading_token,
    synthesize_batch,
    synthesize_negative,
)
from .training import (
    AdamState,
    StepRecord,
    TrainConfig,
    TrainError,
    TrainResult,
    cls_loss,
    delta_s,
    nota_loss,
    optimizer_step,
    total_loss,
    train,
)
from .evaluation import (
    MetricsReport,
    auroc,
    calibrate_alpha,
    evaluate,
    fpr_at_95_tpr,
)

__version__ = "0.1.0"
