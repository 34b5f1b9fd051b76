"""Fair kernel decomposition: remove continuous protected information from kernel matrices."""

from .dataset import DatasetSpec, FoldPlan, TabularDataset, kfold, load_csv, synthetic_dataset
from .decomposition import (
    FairTransform,
    apply_transform,
    decompose,
    decompose_path,
    oracle_decompose,
    residual_protected_norm,
)
from .exceptions import FairKernelError
from .experiments import (
    ExperimentConfig,
    ExperimentResult,
    emit_results,
    run_experiment,
    sweep_alpha_tilde,
    sweep_nystroem,
)
from .kernels import KernelMatrix, linear_kernel, rbf_cross_kernel, rbf_kernel
from .metrics import KdeParams, MetricReport, evaluate, gdp, hgr_estimate, mae, pairwise_fairness
from .nystroem import NystroemParams, nystroem_inverse
from .regressors import dummy_fit, krr_fit, krr_predict, svr_fit, svr_predict

__version__ = "0.1.0"
