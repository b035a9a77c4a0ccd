import sys

from conegeo.cli import main

sys.exit(main())
