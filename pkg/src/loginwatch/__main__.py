import sys

from loginwatch.cli import main

sys.exit(main())
