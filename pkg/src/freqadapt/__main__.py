import sys

from freqadapt.cli import main

sys.exit(main())
