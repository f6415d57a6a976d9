"""Scale-inhomogeneous Gaussian free field laboratory.

Closed-form limit quantities (``analytics``), exact lattice Green functions
and harmonic measures (``lattice``), exact field construction and sampling
(``field``), Gibbs-measure Monte Carlo (``gibbs``), cascade sampling
(``rpc``) and experiment plumbing (``config``, ``experiment``, ``cli``).
"""
__version__ = "0.1.0"
