"""Conditional detection probabilities of model II versus the phase difference.

Writes ``dphi,p_a,p_b,cos2,sin2`` rows to stdout (or ``--out``).
"""
import argparse
import csv
import sys

import numpy as np

from projev import DeviceLayout, LatticeSpace, TimeBasis, detection_distribution, model2_schedule
from projev.report import fmt_float


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=17)
    ap.add_argument("--n", type=int, default=8, help="time and space points")
    ap.add_argument("--out")
    args = ap.parse_args()

    lat = LatticeSpace.from_bounds(0, args.n - 1, 0, args.n - 1)
    basis = TimeBasis.fourier(lat)
    psi0 = lat.ket(0, 0, "a")
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["dphi", "p_a", "p_b", "cos2", "sin2"])
    for dphi in np.linspace(0, 2 * np.pi, args.points):
        lay = DeviceLayout(x_D=args.n - 2, phi_a=dphi)
        cond = detection_distribution(model2_schedule(lat, lay, basis), psi0).conditional_channels()
        w.writerow([fmt_float(x) for x in (dphi, cond["a"], cond["b"], np.cos(dphi / 2) ** 2, np.sin(dphi / 2) ** 2)])
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
