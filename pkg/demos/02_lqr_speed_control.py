"""Platoon speed control with the iterative LQR controllers.

Closes the loop on the congested benchmark with the plain Gauss-Newton LQR
controller (3-step horizon) and with the speed-change-penalty variant over a
50-step horizon. The penalty variant trades a little mean speed for much
smoother commands, which matters when human drivers follow the platoons.

Run:  python demos/02_lqr_speed_control.py     (about a minute)
"""

from pathlib import Path

import numpy as np

from platoonctl import benchmark_scenario, run
from platoonctl.lqr import LqrConfig
from platoonctl.scenario import ControllerSpec

OUT = Path("demo_output")


def speed_profile(result, platoon_id):
    tr = next(t for t in result.traces if t.id == platoon_id)
    return np.array(tr.steps), np.array(tr.commanded)


def max_step_change(result):
    worst = 0.0
    for tr in result.traces:
        c = np.array([100.0] + tr.commanded)
        if len(c) > 1:
            worst = max(worst, np.abs(np.diff(c)).max())
    return worst


def main():
    OUT.mkdir(exist_ok=True)
    uncontrolled = run(benchmark_scenario("bottleneck"))

    print("GN-LQR, horizon 3, one pass per step ...")
    lqr = run(
        benchmark_scenario("bottleneck", controller=ControllerSpec(name="gn_lqr"))
    )
    print("GN-LQRP, speed-change penalty 30, horizon 50 ...")
    lqrp = run(
        benchmark_scenario(
            "bottleneck",
            controller=ControllerSpec(name="gn_lqrp", lqr=LqrConfig(horizon=50)),
        )
    )

    print(f"\n{'':16s} {'TTT':>8s} {'MS':>7s} {'ACT':>9s} {'max |du|':>9s}")
    for label, res in (
        ("uncontrolled", uncontrolled),
        ("GN-LQR", lqr),
        ("GN-LQRP", lqrp),
    ):
        m = res.metrics
        act = f"{m.act * 1000:7.1f}ms" if m.act else "        -"
        print(
            f"{label:16s} {m.ttt:8.1f} {m.ms:7.2f} {act:>9s} "
            f"{max_step_change(res):8.1f}"
        )

    print("\nBoth controllers hold the flow arriving at segment 13 near its")
    print("reduced capacity, so its density stays close to critical and the")
    print("capacity drop never engages. The penalty variant spreads the")
    print("slow-down over many steps instead of slamming to the floor.")

    # Speed profile of the platoon entering at step 210 (the 11th platoon).
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(8, 3))
    for label, res in (("GN-LQR", lqr), ("GN-LQRP N=50", lqrp)):
        steps, commanded = speed_profile(res, 10)
        ax.step(steps, commanded, where="post", label=label)
    ax.set_xlabel("time step")
    ax.set_ylabel("commanded speed (km/hr)")
    ax.set_title("platoon entering at step 210")
    ax.legend()
    png = OUT / "platoon_speed_profiles.png"
    fig.savefig(png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {png}")


if __name__ == "__main__":
    main()
