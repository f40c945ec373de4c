"""Rate needed when the state is seen through a noisy sensor.

A scalar unstable plant over 10 stages is observed through y = x + g v.
A pre-filter turns the measurements into a fully observed problem for
the innovations, and the rate grows as the sensor gets noisier.  A
perfect sensor (g = 0) gives the fully observed rate.
"""

from ratelqg.errors import InfeasibleBudgetError
from ratelqg.model import PartiallyObservedPlant, TimeVaryingPlant
from ratelqg.synthesis import synthesize_po, synthesize_tv

T = 10
D = 300.0


def main():
    base = TimeVaryingPlant([[[2.0]]] * T, [[[1.0]]] * T, [[[1.0]]] * T, [[[1.0]]] * T,
                            [[[1.0]]] * T, [[1.0]])
    fo = synthesize_tv(base, D)
    print(f"fully observed: {fo.DI_bits:.4f} bits over {T} stages")
    for g in (0.0, 0.3, 1.0, 2.0, 4.0):
        po = PartiallyObservedPlant(base, [[[1.0]]] * (T + 1), [[[g]]] * (T + 1))
        try:
            d = synthesize_po(po, D)
        except InfeasibleBudgetError as exc:
            print(f"g = {g:3.1f}: infeasible ({exc})")
            continue
        print(f"g = {g:3.1f}: {d.DI_bits:.4f} bits, J = {d.J_analytic:.2f}, "
              f"pre-filter gain at t=1 {d.prekf.Ltilde[0][0, 0]:.3f}")


if __name__ == "__main__":
    main()
