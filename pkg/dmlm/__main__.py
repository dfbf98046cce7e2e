import sys

from dmlm.main import main

sys.exit(main())
