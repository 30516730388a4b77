"""Convergence of both schemes on the travelling-front problem (Test-1).

Without noise the problem has an exact solution: a front x1 = t moving to the
right, with enthalpy jumping across the latent-heat plateau.  Each coarse
solution is interpolated onto the finest mesh and compared with the solution
computed there.  We print the relative errors on the temperature, its gradient
and the energy density, together with least-squares rates in h.
"""
import numpy as np

from stochastic_stefan.experiments import EnsembleSpec, Level, run_ensemble

names = ["mesh1-01", "mesh1-02", "mesh1-03"]
for scheme in ("mlp1", "hmm"):
    spec = EnsembleSpec(levels=tuple(Level(n, scheme) for n in names), test=1, nf=0.0,
                        paths=1, reference=Level("mesh1-04", scheme), observables={"errors"})
    rep = run_ensemble(spec)
    h = rep.column("h")
    print(f"\n{scheme} against {spec.reference.mesh}")
    print("      h   E[zeta]  E[grad zeta]    E[Xi]")
    for k in range(len(names)):
        e = rep.levels[k].errors
        print(f"  {h[k]:.3f}  {e[0]:.2e}      {e[1]:.2e}  {e[2]:.2e}")
    rates = [np.polyfit(np.log(h), np.log(rep.column(c)), 1)[0] for c in ("E_L2z", "E_H1z", "E_L1Xi")]
    print("  rates  " + "  ".join(f"{r:.2f}" for r in rates))
