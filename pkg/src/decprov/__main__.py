import sys

from decprov.cli import main

sys.exit(main())
