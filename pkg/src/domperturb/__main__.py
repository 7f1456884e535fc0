import sys

from domperturb.cli import main

sys.exit(main())
