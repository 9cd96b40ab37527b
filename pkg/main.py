import sys

from src.respicast.cli import main

if __name__ == '__main__':
    sys.exit(main())
