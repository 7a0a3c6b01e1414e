"""Hybrid linear-morphological neural network heads over the max-plus semiring.

The package provides exact tropical matrix arithmetic, a small reverse-mode
autodiff engine with a max-plus primitive, five classification-head
variants (including sparse max-plus blocks), exact ReLU/maxout rewrites,
two-phase training, L1 unstructured pruning with per-variant count
equalization, ranking metrics, dataset loaders, and a CLI.
"""

from .autodiff import (
    Tape,
    Tensor,
    TropicalParam,
    UndefinedOutputError,
    batchnorm,
    group_max,
    linear,
    maxplus,
    relu,
    sigmoid_bce,
    softmax_ce,
)
from .datasets import (
    Dataset,
    from_arrays,
    gen_max_affine,
    load_cifar10_binary,
    load_features_csv,
    load_idx,
    save_features_csv,
)
from .equivalence import (
    check_maxout_equivalence,
    check_relu_equivalence,
    diag_mp,
    maxout_to_maxplus,
    relu_to_maxplus,
)
from .estimator import MaxPlusHeadClassifier
from .gradcheck import gradcheck_all, gradcheck_head
from .heads import (
    VARIANTS,
    HeadSpec,
    ModelParams,
    build_head,
    expected_census,
    forward,
    sparse_init,
    validate_params,
)
from .metrics import (
    UndefinedMetricError,
    accuracy,
    aggregate_runs,
    group_average_scores,
    pr_auc,
    pr_auc_macro,
    roc_auc,
    roc_auc_macro,
)
from .optim import (
    Adam,
    DivergenceError,
    SGDNesterov,
    TrainConfig,
    TrainPhase,
    TrainResult,
    evaluate,
    train,
)
from .pruning import (
    PrunePlan,
    build_prune_plan,
    expected_remaining,
    l1_prune_linear,
    l1_prune_morph,
    prune_and_eval,
    prune_model,
    remaining_param_count,
)
from .runio import RunReport, load_checkpoint, save_checkpoint
from .tropical import (
    ExtendedReal,
    TropicalMatrix,
    dilation,
    erosion,
    max_plus_identity,
    max_plus_matmul,
    min_plus_identity,
    min_plus_matmul,
    morphological_perceptron,
)

__version__ = "0.1.0"
