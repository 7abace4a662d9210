import sys

from d3rqn.harness.cli import main

sys.exit(main())
