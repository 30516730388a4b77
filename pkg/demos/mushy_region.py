"""Ensemble statistics of the mushy region for increasing noise.

The mushy region is where the enthalpy lies strictly inside the latent-heat
plateau.  For each noise factor we run 10 paths on mesh1-02 and print the mean
and standard deviation of its area over time.  Strong noise makes the explicit
treatment of the stochastic term unstable on this mesh; such runs stop with a
Newton failure, which is reported instead of a table.
"""
import numpy as np

from stochastic_stefan.experiments import EnsembleSpec, Level, run_ensemble, time_average
from stochastic_stefan.stepper import NewtonError

for nf in (1.0, 10.0, 100.0, 1000.0):
    spec = EnsembleSpec(levels=(Level("mesh1-02"),), test=2, nf=nf, paths=10,
                        observables={"mushy"})
    try:
        lv = run_ensemble(spec).levels[0]
    except NewtonError as exc:
        print(f"nf = {nf:g}: {exc}")
        continue
    avg = time_average(lv.mushy_t, lv.mushy_exp, 0.0, 1.0)
    sd = time_average(lv.mushy_t, lv.mushy_sd, 0.0, 1.0)
    peak = int(np.argmax(lv.mushy_exp))
    print(f"nf = {nf:g}: mean area {avg:.4f}, mean SD {sd:.4f}, "
          f"peak {lv.mushy_exp[peak]:.3f} at t = {lv.mushy_t[peak]:.3f}")
