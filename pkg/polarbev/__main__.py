import sys

from polarbev.main import main

sys.exit(main())
