import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, Tuple

from loguru import logger

from dynimp.config import RunConfig, load_config
from dynimp.exceptions import DynImpError

Handler = Callable[[argparse.Namespace, RunConfig], Awaitable[int]]
Middleware = Callable[[Handler, argparse.Namespace, RunConfig], Awaitable[int]]


@dataclass(frozen=True)
class Argument:
    flags: Tuple[str, ...]
    options: Dict[str, Any]


def argument(*flags: str, **options: Any) -> Argument:
    """argparse.add_argument spec. Optional flags default to 'not given' so they never mask lower config sources."""
    if flags[0].startswith("-") and "default" not in options and options.get("action") != "store_true":
        options["default"] = argparse.SUPPRESS
    return Argument(flags, options)


@dataclass
class Command:
    name: str
    help: str
    handler: Handler
    arguments: List[Argument] = field(default_factory=list)


class Router:
    """Groups subcommands of one concern."""

    def __init__(self, name: str):
        self.name = name
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, help: str, *arguments: Argument) -> Callable[[Handler], Handler]:
        def register(handler: Handler) -> Handler:
            if name in self.commands:
                raise ValueError(f"command '{name}' registered twice in router '{self.name}'")
            self.commands[name] = Command(name, help, handler, list(arguments))
            return handler
        return register


class Dispatcher:
    def __init__(self, prog: str = "dynimp"):
        self.prog = prog
        self.commands: Dict[str, Command] = {}
        self.middlewares: List[Middleware] = []

    def include_router(self, router: Router) -> None:
        for name, command in router.commands.items():
            if name in self.commands:
                raise ValueError(f"command '{name}' already registered")
            self.commands[name] = command
        logger.debug(f"Router '{router.name}' included: {', '.join(router.commands)}")

    def middleware(self, middleware: Middleware) -> None:
        self.middlewares.append(middleware)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=self.prog)
        parser.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        subparsers = parser.add_subparsers(dest="command", required=True)
        for command in self.commands.values():
            sub = subparsers.add_parser(command.name, help=command.help)
            for arg in command.arguments:
                sub.add_argument(*arg.flags, **arg.options)
        return parser

    def resolve(self, argv: Optional[Sequence[str]] = None) -> Tuple[argparse.Namespace, RunConfig]:
        """Parses argv and resolves the RunConfig; flags named after config fields override it."""
        args = self.build_parser().parse_args(argv)
        overrides = {k: v for k, v in vars(args).items() if k in RunConfig.model_fields}
        return args, load_config(args.config, overrides)

    async def dispatch(self, args: argparse.Namespace, config: RunConfig) -> int:
        handler = self.commands[args.command].handler
        for middleware in reversed(self.middlewares):
            handler = _bind(middleware, handler)
        try:
            return await handler(args, config)
        except (DynImpError, OSError) as e:
            logger.error(f"{args.command} failed: {e}")
            return 1


def _bind(middleware: Middleware, handler: Handler) -> Handler:
    async def wrapped(args: argparse.Namespace, config: RunConfig) -> int:
        return await middleware(handler, args, config)
    return wrapped
