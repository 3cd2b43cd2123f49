import sys

from parabolic_msa.cli import main

sys.exit(main())
