import argparse
import asyncio
from dataclasses import replace

import numpy as np
from loguru import logger

from dynimp.config import RunConfig
from dynimp.core.data_model import Window
from dynimp.core.dynimp_model import CorruptionSpec, DynImpConfig, DynImpModel, loss_closure
from dynimp.core.neural_core import GradCheckReport, grad_check
from dynimp.dispatcher import Router, argument
from dynimp.handlers.arguments import GRAD_CHECK_ARGS, LOG_ARGS
from dynimp.utils.text_manager import get_text

router = Router("grad_check")

CHECK_STEPS = 5
CHECK_FEATURES = 3
CHECK_HIDDEN = 4


def run_grad_check(config: RunConfig) -> GradCheckReport:
    """Checks the full pipeline loss on a small random instance built from the config."""
    rng = np.random.default_rng(config.seed)
    values = rng.uniform(0.05, 0.95, (CHECK_STEPS, CHECK_FEATURES))
    mask = rng.random((CHECK_STEPS, CHECK_FEATURES)) < 0.7
    mask[0, 0] = True
    window = Window(np.where(mask, values, 0.0), mask, label_id=0)

    model_config = DynImpConfig.from_run_config(config).model_copy(update={"hidden_size": CHECK_HIDDEN})
    model = DynImpModel.initialize(CHECK_FEATURES, model_config, seed=config.seed)
    model = replace(model, feature_means=values.mean(axis=0))
    closure = loss_closure(model, window, CorruptionSpec(config.corruption_p, config.seed))
    return grad_check(closure, model.named(), epsilon=config.grad_check_epsilon,
                      tolerance=config.grad_check_tolerance, samples=config.grad_check_samples, rng=rng)


def report_lines(report: GradCheckReport):
    lines = [get_text("grad_check.summary", checked=report.checked, max_rel_error=report.max_rel_error,
                      tolerance=report.tolerance)]
    lines += [get_text("grad_check.offender", name=e.name, index=",".join(map(str, e.index)), analytic=e.analytic,
                       numeric=e.numeric, rel=e.rel_error) for e in report.worst]
    return lines


@router.command(
    "grad-check", "compare analytic and finite-difference gradients of the DynImp loss",
    argument("--padding-strategy", choices=["zero", "mean", "interp", "knn"]),
    argument("--loss", choices=["bce", "mse"]),
    argument("--corruption-p", type=float),
    argument("--seed", type=int),
    *GRAD_CHECK_ARGS,
    *LOG_ARGS,
)
async def cmd_grad_check(args: argparse.Namespace, config: RunConfig) -> int:
    report = await asyncio.to_thread(run_grad_check, config)
    print("\n".join(report_lines(report)))
    if not report.passed:
        logger.error(f"Gradient check failed: {report.max_rel_error:.3e} > {report.tolerance:.1e}")
        return 1
    logger.success("Gradient check passed")
    return 0
