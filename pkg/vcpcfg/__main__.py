import sys

from vcpcfg.main import main

sys.exit(main())
