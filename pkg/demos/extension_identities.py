"""Extension identities for a single Fourier mode.

The Yang extension reproduces the alpha-energy through the weighted
Laplacian, and the Caffarelli-Silvestre extension is weighted-harmonic.
"""

import numpy as np

from hypns import extension as ex
from hypns.spectral import ModelParams, SpectralField

P = ModelParams(1.15, grid_n=16)
coeffs = np.zeros(P.shape, dtype=complex)
coeffs[1, 1, 0] = coeffs[-1, -1, 0] = 0.5        # cos(x + y)
f = SpectralField(coeffs, P)

# %% constants
c = ex.extension_constants(P.alpha)
print(f"c_alpha={c.c_alpha:.6f} (closed form {ex.c_alpha_closed_form(P.alpha):.6f})")
print(f"C_alpha={c.C_alpha:.6f} kernel mass={c.kernel_mass:.6f}")

# %% Yang energy identity, production and refined y-grid
yg = ex.YGrid.production(P)
for grid in (yg, yg.refine()):
    chk = ex.yang_energy_check(f, grid)
    print(f"{len(grid):4d} levels: lhs={chk.lhs:.6e} rhs={chk.rhs:.6e} rel err={chk.relative_error:.1e}")

# %% weighted harmonicity of the CS extension
for grid in (yg, yg.refine(), yg.refine().refine()):
    print(f"{len(grid):4d} levels: harmonicity residual {ex.harmonicity_residual(ex.cs_extend(f, grid)):.2e}")
