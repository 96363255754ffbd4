"""Fine-tuning in learned sparse subspaces, with baselines and an offload schedule simulator."""

__version__ = "0.1.0"
