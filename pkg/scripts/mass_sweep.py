"""Static mass sweep across the critical mass; writes a phase table CSV.

    python scripts/mass_sweep.py --out runs/mass_sweep.csv --cells 256 --jobs 1
"""
import argparse
import math
from dataclasses import replace

from pks_strain.experiments import SweepSpec, preset, sweep

MASSES = (6, 7, 7.5, 8.5, 9, 10, 12)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="mass_sweep.csv")
    p.add_argument("--cells", type=int, default=256)
    p.add_argument("--tmax", type=float, default=10.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--masses", type=float, nargs="+", default=MASSES,
                   help="masses in units of pi")
    args = p.parse_args(argv)
    template = replace(preset("static_supercritical"), name="mass_sweep", cells=args.cells,
                       t_max=args.tmax, expected=None, checks=("conservation",))
    spec = SweepSpec(template, {"mass": [m * math.pi for m in args.masses]}, jobs=args.jobs)
    for row in sweep(spec, args.out):
        print(f"M = {row['mass'] / math.pi:5.2f} pi  {row['verdict']:<9} t_end = {row['t_end']:.4g}"
              f"  max n = {row['final_max_n']:.4g}")


if __name__ == "__main__":
    main()
