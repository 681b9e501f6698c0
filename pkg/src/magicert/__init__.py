"""magicert: desk-scale interactive certification of an entangled magic state.

A classical verifier drives a (simulated) quantum prover through a
commit/challenge protocol built on trapdoored function pairs, collects
per-round flag statistics, and turns them into a certification decision.
The subpackages split along the protocol roles:

    entcf     idealized trapdoored function-pair oracle
    qsim      dense few-qubit state vectors and observables
    verifier  the classical challenger and its check table
    provers   honest, noisy, magicless and scripted strategies
    engine    session orchestration, batching, wire transport
    analysis  flag-rate estimation and the certification decision
    cli       command-line front end
"""

__version__ = "0.1.0"
