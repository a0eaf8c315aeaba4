"""Allow `python -m crpevi`."""

import sys

from .cli import main

sys.exit(main())
