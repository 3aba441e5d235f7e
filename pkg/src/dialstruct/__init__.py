"""Unsupervised dialogue structure learning toolkit.

Assigns a discrete latent state to every system/user utterance pair with a
small transformer encoder-decoder trained from scratch (Gumbel-Softmax
discretization, balance losses against state collapse), estimates the
state-transition structure from the predicted sequences, and scores it
against a known ground truth.  Ships its own reverse-mode autodiff tensor
core, synthetic labeled corpora, HMM and K-Means baselines, and a
reproducible command-line interface.
"""

__version__ = "0.1.0"

from .baselines import (
    HmmModel,
    KMeansModel,
    hmm_baseline,
    hmm_decode,
    hmm_fit,
    hmm_sample,
    kmeans_assign,
    kmeans_baseline,
    kmeans_fit,
    vectorize_pairs,
)
from .corpus import (
    Dialogue,
    GroundTruthStructure,
    UtterancePair,
    default_structures,
    generate_synthetic,
    get_structure,
    load_corpus,
    load_structure,
    save_corpus,
    save_structure,
)
from .evaluation import (
    EvaluationReport,
    MappingMatrix,
    StructureGraph,
    TransitionMatrix,
    estimate_transition,
    evaluate,
    export_dot,
    extract_structure,
    load_state_sequences,
    mapping_matrix,
    project_transition,
    sce,
    sed,
    state_occupancy,
    write_state_sequences,
)
from .losses import (
    BalanceLossKind,
    balance_kl_loss,
    balance_loss,
    balance_regularizer,
    greedy_balance_loss,
    greedy_target,
    hard_target,
    top_balance_loss,
    total_loss,
)
from .model import (
    DialogueStateModel,
    ModelConfig,
    TauSchedule,
    build_input,
)
from .tensor import Adam, RngState, Tensor
from .text import (
    TfIdfModel,
    Vocabulary,
    extract_keywords,
    fit_tfidf,
    tokenize,
)
from .training import (
    PredictionResult,
    TrainConfig,
    TrainResult,
    predict_states,
    train,
)

__all__ = [
    "__version__",
    # tensor core
    "Tensor", "RngState", "Adam",
    # text
    "Vocabulary", "TfIdfModel", "tokenize", "fit_tfidf", "extract_keywords",
    # corpora
    "Dialogue", "UtterancePair", "GroundTruthStructure", "generate_synthetic",
    "get_structure", "default_structures", "load_corpus", "save_corpus",
    "load_structure", "save_structure",
    # model and objectives
    "DialogueStateModel", "ModelConfig", "TauSchedule", "build_input",
    "BalanceLossKind", "balance_regularizer", "balance_kl_loss",
    "greedy_balance_loss", "top_balance_loss", "balance_loss",
    "greedy_target", "hard_target", "total_loss",
    # training
    "TrainConfig", "TrainResult", "PredictionResult", "train",
    "predict_states",
    # baselines
    "KMeansModel", "HmmModel", "kmeans_fit", "kmeans_assign",
    "kmeans_baseline", "hmm_fit", "hmm_decode", "hmm_sample", "hmm_baseline",
    "vectorize_pairs",
    # structure metrics and graphs
    "EvaluationReport", "TransitionMatrix", "MappingMatrix", "StructureGraph",
    "estimate_transition", "mapping_matrix", "project_transition", "evaluate",
    "sed", "sce", "state_occupancy", "extract_structure", "export_dot",
    "write_state_sequences", "load_state_sequences",
]
