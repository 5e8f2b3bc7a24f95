import sys

from lrlclt.cli import main

sys.exit(main())
