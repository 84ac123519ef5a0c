# commands/__init__.py
# Command groups whose @command methods become CLI subcommands.
