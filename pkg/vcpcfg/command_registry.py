import argparse
import inspect
import logging
from typing import Dict

from vcpcfg.commands.evaluation_commands import EvaluationCommands
from vcpcfg.commands.training_commands import TrainingCommands

logger = logging.getLogger(__name__)


def register_commands(subparsers, parents=()) -> Dict[str, object]:
    """
    Discovers @command() methods on the command groups and adds one argparse
    subparser per method. The bound method is stored as the ``handler`` default.
    """
    command_instances = {
        "training": TrainingCommands(),
        "evaluation": EvaluationCommands(),
    }

    for category, instance in command_instances.items():
        for name, method in inspect.getmembers(instance, inspect.ismethod):
            if not getattr(method, "_is_command", False):
                continue
            parser = subparsers.add_parser(
                name,
                help=method._command_help,
                description=inspect.getdoc(method),
                parents=list(parents),
                formatter_class=argparse.RawDescriptionHelpFormatter,
            )
            for flags, kwargs in getattr(method, "_command_arguments", []):
                parser.add_argument(*flags, **kwargs)
            parser.set_defaults(handler=method)
            logger.debug("[CLI] registered %s.%s", category, name)

    return command_instances
