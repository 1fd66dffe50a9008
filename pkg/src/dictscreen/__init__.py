"""Dictionary screening toolkit for compressing text classifiers.

Train a benchmark classifier over a full keyword dictionary, score every
keyword by how much ablating it perturbs predicted class probabilities,
keep only the top keywords, retrain, and report parameter / dictionary /
sequence reductions alongside accuracy.
"""

from .corpus import (
    PAD_TOKEN,
    Corpus,
    Dictionary,
    EncodedDocument,
    ablate,
    build_dictionary,
    build_inverted_index,
    encode,
    encode_corpus,
    load_labeled_csv,
    reencode_corpus,
    reencode_screened,
    screen_dictionary,
    tokenize,
)
from .metrics import CompressionReport, RunSummary, build_report, drr, prr, trr
from .models import (
    Model,
    ModelConfig,
    build_model,
    count_params,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
)
from .pipeline import (
    ExperimentConfig,
    StageCounters,
    StageError,
    load_config,
    make_synthetic,
    run_experiment,
    sweep_k,
)
from .screening import (
    ScoreTable,
    cpe_scores,
    select_by_threshold,
    select_top_k,
    student_t_two_sided_p,
    tfidf_scores,
    tstat_scores,
)
from .training import TrainSpec, cross_entropy, evaluate_accuracy, train

__version__ = "0.1.0"
