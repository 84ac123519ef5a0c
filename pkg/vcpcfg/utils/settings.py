"""Process-level settings read from the environment."""
import os

LOG_LEVEL = os.getenv("VCPCFG_LOG_LEVEL", "INFO").upper()
DEFAULT_THREADS = int(os.getenv("VCPCFG_THREADS", "1") or 1)
RUN_SLOW_TESTS = os.getenv("VCPCFG_RUN_SLOW", "0") == "1"
