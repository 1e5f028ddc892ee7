"""Simulation toolkit for a three-level quantum-dot biexciton cascade.

Submodules: ``dynamics`` (master-equation evolution), ``pulse_sequences``
(Ramsey and echo fringes), ``photon_statistics`` (click streams and g2),
``timebin`` (time-bin entangled pairs), ``tomography`` (two-qubit state
reconstruction) and ``cli``.
"""
__version__ = "0.1.0"
