"""Numerical laboratory for frame bounds of vector-valued exponential systems.

Subpackages cover exponent-family construction and density measurement
(`exponents`), vector exponentials and divided differences (`basisfuncs`),
inner products and Gram machinery on a bounded interval (`gram`),
spectral experiments (`analysis`), and the experiment driver (`cli`).
"""

__version__ = "0.1.0"
