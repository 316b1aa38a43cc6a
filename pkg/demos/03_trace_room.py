"""Trace energy impulse responses in a shoebox room with a scatterer.

Places a rigid sphere between the source and the listener, labels it with its
analytical angular scattering functions for all four bands, and compares the
energy impulse response with and without the obstacle.  The scatterer
redistributes energy: the direct-path bin weakens and late bins pick up
scattered arrivals.

Run:  python3 demos/03_trace_room.py
"""

import numpy as np

from asfnet import oracle, propagate

SPEED = 343.0

# Analytical ASFs for a 0.4 m rigid sphere, one per band.
spec = oracle.ScattererSpec(radius=0.4)
coeffs = {}
for band in (125, 250, 500, 1000):
    sh, _ = oracle.sphere_asf(spec, oracle.IncidentWave(frequency=band))
    coeffs[band] = sh

sphere = propagate.Scatterer(id="sphere", center=(3.0, 2.5, 1.8),
                             radius=spec.radius, coeffs=coeffs)

room = np.array([6.0, 5.0, 4.0])
base = dict(room=room, source=np.array([1.5, 2.5, 1.8]),
            listener=np.array([4.5, 2.5, 1.8]), listener_radius=0.3,
            wall_absorption=np.full(6, 0.3), wall_scattering=np.zeros(6))

empty = propagate.Scene(**base)
cluttered = propagate.Scene(**base, scatterers=(sphere,))

print("Tracing 20000 rays per band (same seed for both scenes)...")
ir_empty = propagate.trace(empty, rays=20000, seed=7)
ir_full = propagate.trace(cluttered, rays=20000, seed=7)

direct_bin = int(np.linalg.norm(base["listener"] - base["source"]) / SPEED
                 / ir_empty.bin_width)
bands = (125, 250, 500, 1000)
print()
print(f"Direct-path bin: {direct_bin} ({direct_bin * ir_empty.bin_width * 1e3:.0f} ms)")
print(f"{'band':>6}  {'direct (empty)':>14}  {'direct (sphere)':>15}  "
      f"{'total (empty)':>13}  {'total (sphere)':>14}")
for i, band in enumerate(bands):
    e, f = ir_empty.energies[:, i], ir_full.energies[:, i]
    print(f"{band:>6}  {e[direct_bin]:>14.4f}  {f[direct_bin]:>15.4f}  "
          f"{e.sum():>13.4f}  {f.sum():>14.4f}")

print()
print("The sphere sits on the source-listener line, so it shadows part of")
print("the direct path; the energy it intercepts is redirected according to")
print("the band's scattering pattern and arrives in later bins instead.")

# Energy conservation: per band, the received total never exceeds the
# emitted ray energy (1 unit per trace).
assert ir_empty.energies.sum(axis=0).max() <= 1.0 + 1e-9
assert ir_full.energies.sum(axis=0).max() <= 1.0 + 1e-9
print("Per-band received energy stays below the emitted energy, as required.")
