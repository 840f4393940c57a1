import sys

from efsqd.cli import main

sys.exit(main())
