"""Run named presets through the CLI, one output directory each.

    python scripts/run_presets.py --out runs heat_sanity static_supercritical
"""
import argparse
import sys
from pathlib import Path

from pks_strain.cli import EXIT_ERROR, main as cli_main
from pks_strain.experiments import PRESETS


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="*", default=list(PRESETS))
    p.add_argument("--out", default="runs")
    p.add_argument("--resolution", type=int)
    args = p.parse_args(argv)
    codes = []
    for name in args.names:
        cmd = ["--scenario", name, "--out", str(Path(args.out) / name), "--quiet"]
        if args.resolution:
            cmd += ["--resolution", str(args.resolution)]
        code = cli_main(cmd)
        print(f"{name}: exit {code}")
        codes.append(code)
    return EXIT_ERROR if EXIT_ERROR in codes else max(codes, default=0)


if __name__ == "__main__":
    sys.exit(main())
