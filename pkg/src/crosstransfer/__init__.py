"""Cross-domain continual transfer for sparse conversion models, desk scale.

The package is organized as a small numpy library:

- `autodiff`, `optim`: reverse-mode differentiation core and Adagrad.
- `datagen`: deterministic synthetic two-domain worlds with temporal drift.
- `graph`: bipartite interaction graphs and neighborhood-based record selection.
- `models`: conversion model, adapter, fusion gate, domain discriminator.
- `losses`: the weighted three-term training objective.
- `trainer`: windowed continual training of source and target models.
- `metrics`, `harness`, `cli`: AUC, experiment suites, file emission, CLI.
"""

__version__ = "0.1.0"
