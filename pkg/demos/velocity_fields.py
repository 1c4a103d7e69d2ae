"""Bohm and symmetric velocities of one bound state and one moving pulse.

A stationary eigenstate is real, so its Bohm velocity vanishes while the
symmetric velocity -(hbar/m) grad R / R does not.  Inside the step it settles
near the evanescent De Broglie speed.  A pulse evolved in the eigenbasis has
a nonzero Bohm velocity that satisfies the continuity equation.

    python demos/velocity_fields.py [run-dir]

``run-dir`` defaults to a fresh 4x-coarsened eigen run.
"""
import sys
import tempfile

import numpy as np

from evanescent.analysis import de_broglie_speed
from evanescent.dynamics import default_window, evolve, project_series, pulse_series
from evanescent.fields import (bohm_velocity, current_divergence, evanescent_speed_at_step,
                               symmetric_velocity)
from evanescent.fieldio import write_field
from evanescent.pipeline import PipelineConfig, cmd_eigen, load_spectrum
from evanescent.potential import PotentialParams

if len(sys.argv) > 1:
    sp = load_spectrum(sys.argv[1])
else:
    out = tempfile.mkdtemp(prefix="evanescent-")
    sp = cmd_eigen(PipelineConfig.from_dict({"output_dir": out, "mesh_scale": 4.0}))

n = sp.series(0)[29]
psi = sp.state(n)
E_x = sp.energies[n] - sp.E_well_y0
vb = bohm_velocity(psi, sp.mass)
print(f"state {n} (n_x = {sp.labels[n].n_x}): E_x = {E_x:.4f} meV, max|v_B| = "
      f"{np.abs(vb.speed()[vb.valid]).max():.1e} um/ps")
for x in (3.0, 5.0, 8.0):
    print(f"  |v_s|({x:.0f}, 8) = {evanescent_speed_at_step(n, sp, x):.3f} um/ps")
print(f"  v_DB = {de_broglie_speed(E_x, sp.V0, sp.mass):.3f} um/ps")

vs = symmetric_velocity(psi, sp.mass)
for name, f in zip(("vx", "vy", "mask"), vs.components()):
    write_field(f"v_s_{name}.f2d", f)
print("wrote v_s_vx.f2d, v_s_vy.f2d, v_s_mask.f2d")

st = project_series(pulse_series(sp, PotentialParams(), count=21)[20:], sp)[0]
T = default_window(st, sp.mass)
t, dt = 0.4 * T, 0.1
drho = (np.abs(evolve(st, t + dt, sp).values) ** 2
        - np.abs(evolve(st, t - dt, sp).values) ** 2) / (2 * dt)
resid = np.abs(drho + current_divergence(evolve(st, t, sp), sp.mass)).max()
print(f"pulse <E_x> = {st.mean_Ex:.4f} meV, fidelity {st.fidelity:.4f}, window T = {T:.0f} ps")
print(f"  continuity residual at t = {t:.0f} ps: {resid / np.abs(drho).max():.1e} of max|drho/dt|")
