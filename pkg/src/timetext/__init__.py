"""timetext: joint forecasting of aligned daily time series and text.

Corpus handling, text curation, embeddings, evaluation metrics, a suite
of numeric/text/prompt baselines, a fused two-stage text+time model, and
an experiment harness with a `ttc` command line.
"""

from .corpus import (
    AlignedCorpus,
    SplitSpec,
    SynthSpec,
    TimeTextRecord,
    WindowPair,
    chronological_split,
    filter_missing,
    generate_synthetic,
    load_corpus,
    make_windows,
    save_corpus,
)
from .embed import HashStubEmbedder, TextEmbedder, make_embedder
from .metrics import (
    FactCounts,
    ScoreReport,
    cosine_similarity,
    gpt_f1,
    gpt_semantic_score,
    meteor,
    rmse,
    rouge_l,
    rouge_n,
)
from .baselines import (
    AdapterConfig,
    Forecast,
    ForecastModel,
    InputCopy,
    NLinear,
    NLinearText,
    PatchTST,
    PromptLMForecaster,
    finetune_lm,
)
from .hybrid import (
    HybridConfig,
    HybridForecaster,
    Stage1Fuser,
    Stage2Model,
    hybrid_predict,
    joint_loss,
    stage1_forward,
    stage1_pretrain,
    train_end_to_end,
)
from .harness import ExperimentConfig, run_experiment, registry_ids

__version__ = "0.1.0"
