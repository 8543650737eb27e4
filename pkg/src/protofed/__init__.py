"""protofed: a deterministic simulator for prototype-based federated learning
under domain skew.

Clients upload per-class feature centroids alongside model weights; the
server blends them into generalized prototypes by distance reweighting with
an EMA across rounds, and clients regularize local training with a
prototype-contrastive term plus alignment to MixUp-augmented prototypes.
"""

from .config import ConfigError, ExperimentConfig, SweepSpec, load_config
from .federation import (
    ClientState,
    ExperimentResult,
    RoundReport,
    ServerState,
    aggregate_params,
    build_problem,
    evaluate,
    local_update,
    run_experiment,
    run_round,
)
from .losses import LossBreakdown, apa_loss, cross_entropy, gpcl_loss, total_loss
from .model import (
    ForwardTrace,
    ModelGrads,
    ModelParams,
    backward,
    forward,
    init_params,
    load_params,
    save_params,
    sgd_step,
)
from .numerics import Rng, cosine_similarity, sample_beta, sq_l2_distance
from .prototypes import (
    Prototype,
    PrototypeSet,
    ReweightReport,
    augmented_prototypes,
    average_prototypes,
    ema_update,
    initial_mean,
    local_prototypes,
    mixup_feature,
    reweight,
)

__version__ = "0.1.0"
