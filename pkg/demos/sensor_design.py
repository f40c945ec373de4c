"""Virtual sensor for the benchmark plant at three budgets.

A tighter budget needs more sensing channels.  Each design reports the
sensor C, its noise covariance V and the rank of the retained SNR
matrix C' V^-1 C.
"""

from pathlib import Path

import numpy as np

from ratelqg.model import load_plant
from ratelqg.synthesis import synthesize_stationary

HERE = Path(__file__).parent


def main():
    plant = load_plant(HERE / "data" / "example_plant.json")
    np.set_printoptions(precision=4, suppress=True)
    for D in (33.0, 40.0, 80.0):
        d = synthesize_stationary(plant, D)
        print(f"D = {D:g}: rate {d.DI_bits:.4f} bits/step, J = {d.J_analytic:.4f}, "
              f"rank {d.rank[0]}")
        print("  C =", d.sensor.C[0].round(4).tolist())
        print("  V =", np.diag(d.sensor.V[0]).round(4).tolist())
        print("  controller K =")
        print(d.K[0])
        print("  filter L =")
        print(d.L[0])
        print()


if __name__ == "__main__":
    main()
