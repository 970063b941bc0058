"""Bergman kernels and projections on planar domains periodic in one direction.

The package computes the Bergman kernel of a channel domain Pi that is
invariant under z -> z + 1, by lifting through the exponential map to a
doubly connected domain, mapping that conformally onto an annulus, and
evaluating either a closed sech^2 formula or a Floquet-mode series.
"""

__version__ = "0.1.0"
