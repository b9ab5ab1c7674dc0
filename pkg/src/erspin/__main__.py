import sys

from erspin.cli import main

sys.exit(main())
