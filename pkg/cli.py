import sys

from margin_engine.cli import main

if __name__ == "__main__":
    sys.exit(main())
