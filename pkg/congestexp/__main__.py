import sys

from congestexp.service import main

sys.exit(main())
