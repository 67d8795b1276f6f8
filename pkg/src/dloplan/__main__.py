import sys

from dloplan.cli import main

sys.exit(main())
