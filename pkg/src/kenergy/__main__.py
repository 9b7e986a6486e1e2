import sys

from kenergy.cli import main

sys.exit(main())
