"""Safe reinforcement learning under risk-averse model uncertainty.

Modules:

* :mod:`ramu.risk` - distortion risk measures and their estimators
* :mod:`ramu.cmdp` - tabular constrained MDPs and model mixtures
* :mod:`ramu.bellman` - risk-averse Bellman operators, exact and sampled
* :mod:`ramu.perturb` - latent perturbations of observed transitions
* :mod:`ramu.envs` - desk-scale environments and robustness sweeps
* :mod:`ramu.learn` - critic learning, CRPO updates and an exact solver
* :mod:`ramu.harness` - config-driven experiments and reports
"""

__version__ = "0.1.0"
