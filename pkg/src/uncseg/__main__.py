"""Run the command-line interface with ``python -m uncseg``."""
import sys

from .cli import main

sys.exit(main())
