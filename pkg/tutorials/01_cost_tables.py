"""Operation counts, model size, energy and throughput for MobileNets-V1 0.5.

Prints the strassenified and hybrid configurations next to the values
reported for them, so the calibration of the cost model is easy to eyeball.

    python tutorials/01_cost_tables.py
"""
from hybridfb.arch import QuantMode, QuantPlan, build_mobilenets_v1
from hybridfb.cost import evaluate

# (plan, reported muls M, adds M, macs M, size KB, energy, throughput)
ROWS = [
    (QuantPlan(QuantMode.FP16), 0, 0, 149.49, 2590.07, 1.0, 1.0),
    (QuantPlan(QuantMode.TWN), 0, 149.49, 0, 323.75, 0.2, 2.0),
    (QuantPlan(QuantMode.STRASSEN, rho=0.5), 0.77, 158.54, 8.69, 522.33, 0.27, 1.69),
    (QuantPlan(QuantMode.STRASSEN, rho=1.0), 1.55, 313.78, 8.69, 741.19, 0.48, 0.9),
    (QuantPlan(QuantMode.STRASSEN, rho=2.0), 3.11, 624.27, 8.69, 1178.92, 0.9, 0.46),
    (QuantPlan(QuantMode.HYBRID, alpha=0.25, rho=1.0), 1.16, 204.63, 43.76, 1004.67, 0.56, 1.02),
    (QuantPlan(QuantMode.HYBRID, alpha=0.375, rho=1.0), 0.97, 157.84, 61.3, 1131.43, 0.62, 1.06),
    (QuantPlan(QuantMode.HYBRID, alpha=0.5, rho=1.0), 1.28, 142.37, 78.83, 1267.13, 0.72, 1.0),
    (QuantPlan(QuantMode.HYBRID, alpha=0.5, rho=2.0), 1.55, 228.68, 78.83, 1327.88, 0.83, 0.77),
]


def main():
    spec = build_mobilenets_v1(0.5, 224)
    print(f"{'config':<26}{'muls M':>14}{'adds M':>18}{'macs M':>16}{'size KB':>20}{'energy':>13}{'thru':>13}")
    for plan, mu, ad, mac, kb, e, t in ROWS:
        r = evaluate(spec, plan)
        print(f"{plan.label():<26}"
              f"{r.muls / 1e6:7.2f} ({mu:5.2f}){r.adds / 1e6:9.2f} ({ad:6.2f}){r.macs / 1e6:8.2f} ({mac:6.2f})"
              f"{r.size_kb:10.2f} ({kb:7.2f}){r.energy_normalized:6.2f} ({e:4.2f}){r.throughput_normalized:6.2f} ({t:4.2f})")
    # The alpha=0.5, r=c_out row is the odd one out. Half the channels are ternary,
    # so it should need half the products of strassen(rho=1), about 0.78M, yet 1.28M
    # is reported, and 1.28M products would need far more than 142M additions.
    # The cost model counts it consistently with its neighbours instead.


if __name__ == "__main__":
    main()
