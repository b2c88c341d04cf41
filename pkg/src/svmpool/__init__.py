"""SVM pooling: sequence descriptors from max-margin hyperplanes."""

from ._backend import NAME as BACKEND
from .argmin import (
    ArgminJacobian,
    SvmpLayerInput,
    finite_diff_jacobian,
    grad_wrt_input,
    solve_layer,
    toy_pipeline_train,
)
from .errors import *  # noqa: F401,F403
from .evaluation import (
    ExperimentReport,
    anticipation_curve,
    compare_pooling,
    enumeration_gap,
    sweep,
    timing_curve,
)
from .features import (
    Dataset,
    FeatureBag,
    Format,
    NegativeBag,
    Origin,
    centralize,
    load_dataset,
    save_dataset,
)
from .joint import ClassifierBank, JointState, predict_action, train_joint, train_multiclass
from .kernel_map import Kernel, KernelMapConfig, compute_nsvmp, embed, kernel_exact
from .pooling import (
    PoolConfig,
    SvmpDescriptor,
    average_pool,
    classified_fraction,
    compute_svmp,
    max_pool,
    pool_dataset,
    prefix_pool,
)
from .svm import Hyperplane, LabeledSet, SvmFit, brute_force_svm, predict, train_svm
from .synth import GroundTruthMask, SynthConfig, generate, white_noise_negatives

__version__ = "0.1.0"
