"""Computable quality measures of the two gradient discretisations.

S_D measures how well smooth functions are approximated, W_D how far the
discrete gradient is from satisfying integration by parts, and rho is the
discrete Poincare constant.  The first two should shrink with h while rho stays
bounded.
"""
import numpy as np

from stochastic_stefan.discretisations import build
from stochastic_stefan.gdm import coercivity_constant, s_defect, w_defect
from stochastic_stefan.meshgen import family_mesh


def phi(p):
    return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])


def grad_phi(p):
    x, y = np.pi * p[:, 0], np.pi * p[:, 1]
    return np.pi * np.c_[np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)]


def psi(p):
    return np.c_[np.sin(np.pi * p[:, 1]), np.sin(np.pi * p[:, 0])]


def div_psi(p):
    return np.zeros(len(p))


for kind, family in (("mlp1", "mesh1"), ("hmm", "mesh1"), ("hmm", "hexa1")):
    print(f"\n{kind} on {family}")
    print("  mesh         h      S_D      W_D      rho")
    for k in (1, 2, 3, 4):
        mesh = family_mesh(f"{family}-0{k}")
        gd = build(kind, mesh)
        print(f"  {mesh.name}  {mesh.h:.3f}  {s_defect(gd, phi, grad_phi):.4f}  "
              f"{w_defect(gd, psi, div_psi):.2e}  {coercivity_constant(gd):.4f}")
