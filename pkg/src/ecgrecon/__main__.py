import sys

from ecgrecon.cli import main

sys.exit(main())
