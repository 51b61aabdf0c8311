"""surrocon: surrogate-label supervised contrastive pretraining at desk scale.

Pretrain an MLP encoder by picking contrastive positives from cheap surrogate
labels, linear-probe the frozen representation on scarce binary targets, and
check the latent-class loss decomposition with a Monte-Carlo simulator.
"""

from .contrastive import (
    AugmentSpec,
    LabelKey,
    PosNegSets,
    ViewBatch,
    augment,
    build_sets,
    make_views,
    ntxent_loss,
    supcon_loss,
)
from .dataforge import (
    Dataset,
    GeneratorConfig,
    Sample,
    balanced_test_set,
    generate,
    load_manifest,
    save_manifest,
    split_by_eye,
)
from .encoder import EncoderNet, LinearProbe, ProjectionHead, load_checkpoint, probe_logits, save_checkpoint
from .errors import SurroconError
from .metrics import ConfusionCounts, MetricsReport, auroc, confusion, f1, sensitivity, specificity
from .numcore import Node, Tensor, backward
from .theory import (
    ContrastiveSampleSet,
    LatentClassModel,
    SurrogateAssignment,
    collision_rate,
    decompose_loss,
    kl_divergence,
    sample_contrastive_set,
    sample_negatives,
    sample_positive_pairs,
    sweep_surrogate_fidelity,
)
from .trainloop import ProbeConfig, RunRecord, TrainConfig, evaluate, pretrain, sgd_step, train_probe

__version__ = "0.1.0"
