import asyncio
import sys
from typing import Optional, Sequence

from loguru import logger

from dynimp.config import RunConfig
from dynimp.dispatcher import Dispatcher
from dynimp.exceptions import ConfigError
from dynimp.handlers import experiment_handlers, grad_check_handlers, ingest_handlers, train_handlers
from dynimp.middleware.logging_middleware import LoggingMiddleware


def configure_logging(config: RunConfig) -> None:
    logger.remove()
    logger.add(sys.stderr, level=config.log_level.upper())
    if config.log_file:
        logger.add(config.log_file, level="DEBUG", rotation="10 MB", compression="zip")


def build_dispatcher() -> Dispatcher:
    dp = Dispatcher(prog="dynimp")
    dp.middleware(LoggingMiddleware())
    dp.include_router(ingest_handlers.router)
    dp.include_router(train_handlers.router)
    dp.include_router(experiment_handlers.router)
    dp.include_router(grad_check_handlers.router)
    return dp


async def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parses the command line, resolves the config and runs one subcommand."""
    logger.remove()
    logger.add(sys.stderr, level="WARNING")
    dp = build_dispatcher()
    try:
        args, config = dp.resolve(argv)
    except ConfigError as e:
        logger.error(f"{e}")
        return 2
    configure_logging(config)
    logger.debug(f"Resolved config for {args.command}: seed={config.seed}")
    return await dp.dispatch(args, config)


if __name__ == "__main__":
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("Interrupted")
        sys.exit(130)
