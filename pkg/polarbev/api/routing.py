"""Command routing: endpoint modules register commands, the CLI dispatches them"""
from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Sequence, Tuple

from polarbev.core.errors import ConfigurationError

Handler = Callable[[argparse.Namespace], Any]


@dataclass(frozen=True)
class Argument:
    flags: Tuple[str, ...]
    options: Dict[str, Any] = field(default_factory=dict)


def argument(*flags: str, **options: Any) -> Argument:
    return Argument(flags=flags, options=options)


@dataclass(frozen=True)
class Command:
    name: str
    handler: Handler
    summary: str
    arguments: Tuple[Argument, ...] = ()


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigurationError instead of SystemExit"""

    def error(self, message: str):
        raise ConfigurationError(f"invalid command line: {message}", prog=self.prog)


def parse_resolutions(text: str) -> Tuple[int, ...]:
    """``16,24,32`` -> (16, 24, 32)"""
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("at least one resolution is required")
    return values


class CommandRouter:
    def __init__(self):
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, summary: str, arguments: Sequence[Argument] = ()):
        def decorator(fn: Handler) -> Handler:
            self._add(Command(name=name, handler=fn, summary=summary, arguments=tuple(arguments)))
            return fn

        return decorator

    def _add(self, cmd: Command) -> None:
        if cmd.name in self.commands:
            raise ConfigurationError("command registered twice", command=cmd.name)
        self.commands[cmd.name] = cmd

    def include_router(self, router: "CommandRouter") -> None:
        for cmd in router.commands.values():
            self._add(cmd)

    def build_parser(self, prog: str = "polarbev") -> argparse.ArgumentParser:
        parser = _Parser(prog=prog, description="Polar BEV detection at desk scale")
        sub = parser.add_subparsers(dest="command", required=True, metavar="command")
        for cmd in self.commands.values():
            p = sub.add_parser(cmd.name, help=cmd.summary, description=cmd.summary)
            for arg in cmd.arguments:
                p.add_argument(*arg.flags, **arg.options)
            p.set_defaults(handler=cmd.handler)
        return parser

    def dispatch(self, argv: Sequence[str]) -> Tuple[str, Any]:
        args = self.build_parser().parse_args(list(argv))
        return args.command, args.handler(args)
