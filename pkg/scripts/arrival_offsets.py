"""Arrival offsets ``t_D - t_Z - (x_D - x_Z)`` found by enumeration for both models."""
import argparse

from projev import DeviceLayout, LatticeSpace, TimeBasis, enumerate_path_table, forward_branch_filter
from projev import model1_schedule, model2_schedule
from projev.mach_zehnder import arrival_offsets


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--phi", type=float, default=0.3)
    ap.add_argument("--all-branches", action="store_true", help="model I without the forward filter")
    args = ap.parse_args()

    lat = LatticeSpace.from_bounds(0, 7, 0, 7)
    lay = DeviceLayout(phi_a=args.phi)
    basis = TimeBasis.fourier(lat)
    psi0 = lat.ket(0, 0, "a")
    t2 = enumerate_path_table(model2_schedule(lat, lay, basis), psi0)
    print("model II offsets mod N_T:", arrival_offsets(t2, lay, lat.n_time))
    flt = None if args.all_branches else forward_branch_filter
    t1 = enumerate_path_table(model1_schedule(lat, lay, basis), psi0, branch_filter=flt)
    print(f"model I offsets ({'all' if flt is None else 'forward'} branches, {len(t1)} paths):", arrival_offsets(t1, lay))


if __name__ == "__main__":
    main()
