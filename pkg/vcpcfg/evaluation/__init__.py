# evaluation/__init__.py
# Bracketing metrics, baselines and report tables.
