import sys

from pinrepair.cli import main

sys.exit(main())
