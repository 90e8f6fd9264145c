"""Token-incremental dialog state tracking and turn-taking decisions."""

from .data import Dialog, Turn, TurnAnnotation, Vocabulary, build_vocab, corpus_stats, load_corpus, save_corpus
from .errors import (
    ConfigurationError,
    IncDSTError,
    InvalidLabelError,
    InvalidShapeError,
    OrderingError,
    ParseError,
    TrainingDivergedError,
    UndefinedRatioError,
    UnknownTokenError,
    ValidationError,
)
from .evaluation import (
    accuracy,
    compare_report,
    deterministic_take_index,
    evaluate_deterministic,
    evaluate_learned,
    format_report,
    l2_metric,
    learned_traces,
    prefix_accuracy_curve,
    realized_ratio,
    sweep_threshold,
    take_histogram,
    write_curve_csv,
    write_histogram_csv,
)
from .model import ComponentSpec, ModelConfig, TrackerEnsemble, TrackerModel, build_component_specs, track_dialog
from .relabel import RelabeledDataset, labels_from_hypotheses, relabel_corpus, relabel_turn
from .synthetic import gen_splits, gen_synthetic_corpus
from .training import TrainConfig, train_component, train_ensemble, turn_loss
from .ttd import TTDConfig, TTDHead, decide, run_incremental, train_ttd, ttd_forward

__version__ = "0.1.0"
