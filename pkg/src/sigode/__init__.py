"""Signatures, log-signatures, the log-ODE method, and neural models driven
by windowed path summaries."""

from .tensors import (
    TensorShape,
    TruncatedTensor,
    tensor_add,
    tensor_mul,
    tensor_exp,
    tensor_log,
    project_level,
)
from .lyndon import logsig_dim, enumerate_lyndon, compress, expand, LyndonBasis
from .paths import (
    PiecewiseLinearPath,
    LogSignature,
    LogSignatureStream,
    segment_signature,
    path_signature,
    log_signature,
    logsig_stream,
    index_partition,
    brute_force_signature,
)
from .solvers import (
    OdeSolveConfig,
    rk4_solve,
    LinearVectorField,
    SmoothVectorField,
    vf_derivative,
    taylor_step,
    logode_field,
    logode_step,
    logode_solve,
    linear_cde_reference,
)
from .autodiff import LiveValueMeter, Tape
from .model import (
    NrdeModel,
    nrde_forward,
    forward_batch,
    loss_value,
    backprop_through_solver,
    adjoint_backward,
    ncde_reference_forward,
    save_model,
    load_model,
)
from .training import TrainConfig, TrainingHistory, train, evaluate
from .data import (
    Dataset,
    StreamCache,
    load_csv,
    write_csv,
    normalize_split,
    preprocess,
    gen_synthetic_classification,
    BrownianDriver,
    assemble,
)
from .bench import BenchmarkGrid, GridResults, igbm_demo, run_grid

__version__ = "0.1.0"
