import sys

from harness.cli import run_cli


def main():
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
