"""How the LQR controller parameters shape closed-loop performance.

Three sweeps on the congested benchmark, each a full closed-loop run per
point (expect a few minutes in total):

* horizon length for GN-LQR: short horizons already work; very long ones
  make entering platoons throttle the inflow and eventually jam the
  entrance, so the mean speed collapses;
* number of Gauss-Newton passes per step: one pass is best - more passes
  keep lowering the equilibrium speeds toward the lower bound;
* the speed-change penalty at a 50-step horizon: heavier penalties give
  smoother commands but eventually not enough slow-down.

Run:  python demos/04_parameter_studies.py
"""

from platoonctl import benchmark_scenario, sweep
from platoonctl.lqr import LqrConfig
from platoonctl.scenario import ControllerSpec


def show(rows, value_label):
    print(f"{value_label:>10s} {'TTT':>8s} {'MS':>7s} {'ACT':>9s}")
    for value, m in rows:
        act = f"{m.act * 1000:7.1f}ms" if m.act else "        -"
        print(f"{value:10.0f} {m.ttt:8.1f} {m.ms:7.2f} {act:>9s}")
    print()


def main():
    lqr = benchmark_scenario("bottleneck", controller=ControllerSpec(name="gn_lqr"))

    print("GN-LQR horizon sweep (computation time grows with the horizon):")
    show(sweep(lqr, "horizon", [1, 3, 5, 10, 20, 30]), "horizon")

    print("GN-LQR iteration sweep (one pass per step is the sweet spot):")
    show(sweep(lqr, "iterations", [1, 2, 5, 10]), "passes")

    lqrp = benchmark_scenario(
        "bottleneck",
        controller=ControllerSpec(name="gn_lqrp", lqr=LqrConfig(horizon=50)),
    )
    print("GN-LQRP speed-change penalty sweep at horizon 50:")
    show(sweep(lqrp, "w_Rprime", [10, 30, 100]), "penalty")


if __name__ == "__main__":
    main()
