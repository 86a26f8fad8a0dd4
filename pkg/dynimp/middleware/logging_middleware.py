import argparse
import time
from typing import Awaitable, Callable

from loguru import logger

from dynimp.config import RunConfig


class LoggingMiddleware:
    async def __call__(
        self,
        handler: Callable[[argparse.Namespace, RunConfig], Awaitable[int]],
        args: argparse.Namespace,
        config: RunConfig,
    ) -> int:
        logger.debug(f"Command received: {args.command} {vars(args)}")
        started = time.perf_counter()
        code = await handler(args, config)
        logger.debug(f"Command {args.command} finished with exit code {code} in {time.perf_counter() - started:.2f}s")
        return code
