import sys

from dni_lab.cli import main

sys.exit(main())
