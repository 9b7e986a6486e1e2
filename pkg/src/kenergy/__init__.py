"""Convex-duality computations of the Mabuchi K-energy on toric manifolds."""
