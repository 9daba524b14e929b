"""rnn_dynlab: train recurrent maze policies with evolution strategies and
analyze the trained dynamics: finite-time Lyapunov indicators, limit-cycle
extraction with an action-consistency filter, Jacobian spectra along orbits,
behavioral potential fields, CCA/RSA neural-behavior alignment, and
counterfactual canonical-space injection."""

__version__ = "0.1.0"
