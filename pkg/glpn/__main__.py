import sys

from glpn.cli import main

sys.exit(main())
