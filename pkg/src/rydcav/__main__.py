import sys

from rydcav.cli import main

sys.exit(main())
