"""Simulation and numerical verification of tree-valued Markov chains and their limits.

Modules
-------
cladogram_chain
    Leaf removal/reinsertion chain on rooted binary trees, discrete and Poissonized.
gw_emigration
    Critical binary GW(-1) process and its exact laws.
levy_fluctuation
    Compound-Poisson contour process: scale function, ladder and undershoot laws.
splitting_jccp
    Chronological trees, contour paths, age processes and streets.
mailman
    Address sequences on streets and the k-trees they code.
besq_timechange
    Squared Bessel processes of negative dimension and their time changes.
stats_harness
    Test reports and the few goodness-of-fit tests the checks need.
acceptance, cli
    Acceptance suite and command-line front end.
"""
__version__ = "0.1.0"
