"""Sum-product networks for 2x2 matrix products.

1. Strassen's algorithm written as three ternary matrices is exact.
2. Seven products are needed for two unrelated 2x2 filters, but when the
   filters share a tap, [a, b] and [a, c], six products are enough.
   We find such a network by search and check it on every basis pair.

    python tutorials/02_strassen_spn.py
"""
import numpy as np

from hybridfb.spn import (make_canonical_strassen, matmul_bilinear_map, search_shared_value_spn,
                          shared_value_template, spn_matmul, verify_spn_exact)


def show(name, m):
    print(f"{name} =")
    for row in m.entries:
        print("   ", " ".join(f"{v:+d}" if v else " 0" for v in row))


st = make_canonical_strassen()
show("W_a", st.W_a)
show("W_b", st.W_b)
show("W_c", st.W_c)

rng = np.random.default_rng(0)
A, B = rng.integers(-9, 10, (2, 2)), rng.integers(-9, 10, (2, 2))
print("A @ B          =", (A @ B).tolist())
print("Strassen SPN   =", spn_matmul(*st, A, B).data.astype(int).tolist())
print("basis-verified :", verify_spn_exact(st, matmul_bilinear_map()))

tmpl = shared_value_template()
found = search_shared_value_spn(tmpl, 6, trials=20, seed=3)
if found is None:
    print("no 6-product network found with this seed; try another")
else:
    print("\nsix products for filters [a, b], [a, c]:")
    show("W_a", found.W_a)
    show("W_b", found.W_b)
    show("W_c", found.W_c)
    a, b, c = 3.0, -2.0, 5.0
    A = np.array([[a, b], [a, c]])
    B = rng.normal(size=(2, 2))
    print("max error on a random input:", np.abs(spn_matmul(*found, A, B).data - A @ B).max())
