"""Multi-task regression with penalties on the k smallest singular values."""

from .data import NoiseSpec, SplitSpec, generate_synthetic, inject_label_noise, load_csv_tasks, split_train_test
from .errors import DataFormatError, InputError, KmsvError, MetricError, NumericalError, ParameterError
from .evaluation import evaluate, explained_weight_error, nmse, predict
from .solvers import SolverConfig, solve_kmsv, solve_kmsv_new, solve_ridge, solve_trace
from .tasks import ModelParams, MultiTaskDataset, TaskData

__version__ = "0.1.0"
