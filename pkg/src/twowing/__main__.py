import sys

from twowing.cli import main

sys.exit(main())
