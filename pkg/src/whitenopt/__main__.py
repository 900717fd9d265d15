import sys

from whitenopt.cli import main

sys.exit(main())
