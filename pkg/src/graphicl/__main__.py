import sys

from graphicl.cli import main

sys.exit(main())
