"""Distance between ramp-mode and effective-mode model I detections for growing ramps.

Both distributions keep only the forward branch; the excluded mass forms one
extra bucket. Output columns: ``steps,tv,forward_mass``.
"""
import argparse

import numpy as np

from projev import (
    DensityOperator,
    DeviceLayout,
    EpsilonRamp,
    LatticeSpace,
    TimeBasis,
    final_step_masses,
    forward_branch_filter,
    model1_schedule,
)
from projev.report import fmt_float


def forward_masses(schedule, rho0):
    return np.array(list(final_step_masses(schedule, rho0, forward_branch_filter).values()))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32, 64])
    ap.add_argument("--phi", type=float, default=np.pi / 2)
    args = ap.parse_args()

    lat = LatticeSpace.from_bounds(0, 7, 0, 7)
    lay = DeviceLayout(phi_a=args.phi)
    basis = TimeBasis.fourier(lat)
    rho0 = DensityOperator.from_ket(lat.ket(0, 0, "a"))
    ref = forward_masses(model1_schedule(lat, lay, basis), rho0)
    print("steps,tv,forward_mass")
    for n in args.steps:
        v = forward_masses(model1_schedule(lat, lay, basis, effective=EpsilonRamp(n)), rho0)
        tv = 0.5 * np.abs(v - ref).sum() + 0.5 * abs(v.sum() - ref.sum())
        print(f"{n},{fmt_float(tv)},{fmt_float(v.sum())}")


if __name__ == "__main__":
    main()
