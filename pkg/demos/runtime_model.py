"""
Estimated cost per iteration
============================

Operation counts times a per-op constant, plus transfer and analog time
for the thermodynamic device. Pass ``--calibrate`` to the ``tngd
bench-runtime`` command to fit the constants on this machine instead.
"""

from tngd import costs

b, d_z = 32, 20
print(f"{'N':>9} " + " ".join(f"{k:>13}" for k in ("adam", "ngd", "ngd-cg", "ngd-woodbury", "tngd")))
for n in (10**3, 10**4, 10**5, 10**6):
    row = [costs.estimate_iteration(k, n, b, d_z, c=200, t=50.0).total_seconds
           for k in ("adam", "ngd", "ngd-cg", "ngd-woodbury", "tngd")]
    print(f"{n:>9} " + " ".join(f"{s:>12.3e}s" for s in row))

est = costs.estimate_iteration("tngd", 10**5, b, d_z, t=50.0)
print(f"\nTNGD at N=1e5: build {est.build_seconds:.2e}s, transfer {est.transfer_seconds:.2e}s, "
      f"analog {est.analog_seconds:.2e}s")
