"""Strain-amplitude sweep at M = 12 pi from A = 0 to 2 M_plus / delta^2.

    python scripts/amplitude_sweep.py --out runs/amplitude_sweep.csv --points 5
"""
import argparse
from dataclasses import replace

import numpy as np

from pks_strain.experiments import SweepSpec, preset, sweep


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="amplitude_sweep.csv")
    p.add_argument("--cells", type=int, default=256)
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--half-width", type=float, default=16.0)
    p.add_argument("--tmax", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args(argv)
    base = preset("strained_supercritical")
    n0 = base.initial_field()
    a_max = 2 * base.resolve_amplitude(n0)
    template = replace(base, name="amplitude_sweep", cells=args.cells, t_max=args.tmax,
                       half_width=args.half_width,
                       epsilon_cells=1.0, checks=("conservation",), expected=None)
    amplitudes = [float(a) for a in np.linspace(0.0, a_max, args.points)]
    spec = SweepSpec(template, {"amplitude": amplitudes}, jobs=args.jobs)
    for row in sweep(spec, args.out):
        print(f"A = {row['amplitude']:9.3f}  {row['verdict']:<9} t_end = {row['t_end']:.4g}"
              f"  max n = {row['final_max_n']:.4g}")


if __name__ == "__main__":
    main()
