import sys

from chb6.cli import main

sys.exit(main())
