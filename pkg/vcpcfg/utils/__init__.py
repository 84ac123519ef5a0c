"""Utils module initialization."""
from .command_decorator import argument, command
from .logging_setup import configure_logging

__all__ = ["argument", "command", "configure_logging"]
