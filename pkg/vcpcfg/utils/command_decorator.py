# utils/command_decorator.py

def command(help: str = ""):
    """
    Decorator to mark a method as a CLI subcommand.
    Adds `_is_command = True` and the subcommand help text to the method.
    The method's docstring becomes the subcommand description.
    """
    def decorator(func):
        func._is_command = True
        func._command_help = help
        return func
    return decorator


def argument(*flags, **kwargs):
    """Attach one argparse argument to a command method (applied bottom-up)."""
    def decorator(func):
        func.__dict__.setdefault("_command_arguments", []).insert(0, (flags, kwargs))
        return func
    return decorator
