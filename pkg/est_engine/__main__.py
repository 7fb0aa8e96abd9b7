import sys

from est_engine.cli import main

sys.exit(main())
