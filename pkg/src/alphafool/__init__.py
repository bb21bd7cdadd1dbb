"""alphafool: targeted universal adversarial perturbations against intraday
alpha models — data pipeline, models, attack, experiments, and mitigations."""

from . import alpha_models, attack, defense, experiments, features, market_data, nn

__version__ = "0.1.0"

__all__ = [
    "alpha_models", "attack", "defense", "experiments", "features",
    "market_data", "nn", "__version__",
]
