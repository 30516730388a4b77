"""Follow one Brownian path of the melting-square problem (Test-2).

The square starts at enthalpy 2, the top of the latent-heat plateau, and the
boundary is held at -1.  Heat leaves through the boundary, a solid front moves
inwards, and the multiplicative noise perturbs the enthalpy wherever the energy
is nonzero.  We print the energy, the area of the mushy region and the Newton
effort at a few times, for both gradient discretisations.
"""
import numpy as np

from stochastic_stefan.discretisations import build
from stochastic_stefan.meshgen import family_mesh
from stochastic_stefan.model import make_model
from stochastic_stefan.noise import generate, steps_for
from stochastic_stefan.stepper import GradientScheme, StepLog

mesh = family_mesh("mesh1-03")
model = make_model(2, nf=1.0)
# the time step follows the mesh: dt <= h^2, rounded to a power of two
N = steps_for(mesh.h)
driver = generate(seed=1, path=0, n_max=N)
print(f"{mesh.name}: h = {mesh.h:.3f}, {N} time steps")

for kind in ("mlp1", "hmm"):
    gd = build(kind, mesh)
    log = StepLog()
    # HMM cell unknowns are eliminated locally before each global solve
    res = GradientScheme(gd, model, condense=(kind == "hmm")).run_path(driver, N, [log])
    rows = np.array(log.rows)
    print(f"\n{kind}: {gd.n_dofs} unknowns, mean Newton iterations {rows[1:, 3].mean():.2f}")
    print("      t    energy  mushy area")
    for n in np.linspace(0, N, 6).astype(int):
        t, energy, mushy, _, _ = rows[n]
        print(f"  {t:5.2f}  {energy:8.4f}  {mushy:10.4f}")
