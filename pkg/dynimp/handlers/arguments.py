"""Flag groups shared by several subcommands. Flags named after RunConfig fields override it."""
from pathlib import Path

from dynimp.dispatcher import argument

WINDOW_ARGS = [
    argument("--window-length", type=int, help="time steps per window (T)"),
    argument("--stride", type=int, help="window stride, defaults to T"),
    argument("--label-mode", choices=["movement4", "combined16"]),
    argument("--scaling-mode", choices=["minmax", "zscore"]),
]

MODEL_ARGS = [
    argument("--padding-strategy", choices=["zero", "mean", "interp", "knn"]),
    argument("--k", type=int, help="neighbours used by kNN padding"),
    argument("--hidden-size", type=int),
    argument("--corruption-p", type=float, help="keep probability of the dropout corruption"),
    argument("--loss", choices=["bce", "mse"]),
    argument("--epochs", type=int),
    argument("--batch-size", type=int),
    argument("--lr", type=float),
    argument("--clip-norm", type=float),
    argument("--seed", type=int),
]

GRAD_CHECK_ARGS = [
    argument("--grad-check-epsilon", type=float),
    argument("--grad-check-tolerance", type=float),
    argument("--grad-check-samples", type=int),
]

LOG_ARGS = [
    argument("--log-level"),
    argument("--log-file"),
]


def path_argument(name: str, help: str, **options):
    return argument(name, type=Path, help=help, **options)
