"""Allow ``python -m castle``."""

import sys

from castle.cli import main

sys.exit(main())
