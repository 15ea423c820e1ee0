"""A tour of the building blocks: basis functions, KAN layers and the five autoencoders.

Run: python3 demos/01_kan_layers.py
"""

import numpy as np

from kanae.basis import BSplineGrid, FourierSpec, RbfGrid, bspline_basis, dog_wavelet, fourier_features, rbf_basis
from kanae.model import VARIANTS, build_model, count_parameters, default_architecture, loss

np.set_printoptions(precision=4, suppress=True)

# Each KAN flavour expands a scalar input into a small set of basis values.
# EfficientKAN uses cubic B-splines on a grid of 3 intervals over [-1, 1].
grid = BSplineGrid()
x = np.array([-0.9, -0.3, 0.0, 0.3, 0.9])
B = bspline_basis(x, grid)
print("B-spline knots:", np.asarray(grid.knots))
print("B-spline values (rows are x, columns the 6 basis functions):")
print(B)
print("row sums (partition of unity):", B.sum(axis=1))

# FastKAN swaps the splines for Gaussian bumps; FourierKAN for sines and cosines.
print("\nRBF features at x = 0.5:", rbf_basis(0.5, RbfGrid()))
print("Fourier features at x = 0.5 (cos k x then sin k x):", fourier_features(0.5, FourierSpec(3)))

# WavKAN uses the derivative-of-Gaussian mother wavelet, an odd function.
psi, dpsi = dog_wavelet(np.linspace(-3, 3, 7))
print("\nDoG wavelet on [-3, 3]:", psi)

# Default architectures for 33 process variables and a 25-dimensional latent space.
print("\nvariant        layers               parameters")
for v in VARIANTS:
    arch = default_architecture(v)
    model = build_model(arch, seed=0)
    print(f"{v:<14} {str(arch.layer_sizes):<20} {count_parameters(model):>6}")

# Loss terms on a random batch.  The orthogonal AE pays for a non-orthonormal
# latent code; EfficientKAN pays L1 and entropy on its spline activity.
X = np.random.default_rng(0).normal(size=(64, 33))
print("\nloss breakdown at initialisation:")
for v in VARIANTS:
    br = loss(build_model(default_architecture(v), seed=0), X)
    print(f"  {v:<12} total {br.total:9.3f}  mse {br.mse:9.3f}  orth {br.orthogonality:9.3f}  "
          f"l1 {br.l1:7.3f}  entropy {br.entropy:6.3f}")
