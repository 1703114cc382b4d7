"""Dynamic-graph variational auto-encoder for multivariate temporal point
processes, with a piecewise-regime Hawkes simulator and a training harness."""

from .baselines import RecurrentBaseline
from .blocks import (
    MLP,
    ConcreteSample,
    MixtureHeads,
    MixtureParams,
    categorical_kl,
    gumbel_softmax_sample,
    lognormal_mixture_logpdf,
    lognormal_mixture_mean,
)
from .config import ExperimentConfig
from .data import (
    Dataset,
    Event,
    EventSequence,
    SubIntervalPartition,
    TypeView,
    load_sequences,
    partition,
    save_sequences,
    split_dataset,
    type_view,
)
from .export import export_graphs
from .hawkes import (
    HawkesParams,
    PlantedGraph,
    SimulationConfig,
    check_stationarity,
    intensity,
    rescaled_intervals,
    simulate,
    simulate_dataset,
)
from .metrics import MetricsReport, evaluate, headline_nll
from .model import VAETPP, EdgeLatentField, EventBatch, make_batch
from .training import TrainResult, build_model, load_checkpoint, train

__version__ = "0.1.0"
