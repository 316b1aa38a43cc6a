"""Acoustic scattering fields from point clouds.

Library layout:

- ``geom``      point-cloud container, k-NN, furthest-point sampling,
                uniform and RBF-weighted differential coordinates
- ``sphharm``   real spherical-harmonic codec, spherical Bessel/Hankel
                functions, lat-long grids, dB error metric
- ``oracle``    analytic rigid-sphere scattering ground truth and
                dataset generation
- ``symfun``    power sums, Newton's identities, multiset recovery
- ``net``       permutation-invariant network (forward + backward from
                first principles) and checkpoint I/O
- ``train``     splits, Adam, training loop, dB evaluation
- ``propagate`` hybrid wave-ray tracer and energy impulse responses
- ``cli``       command-line pipeline (gen / train / eval / predict / trace)
"""

__version__ = "0.1.0"
