"""Parameter-efficient fine-tuning of univariate time-series backbones for
few-shot remaining-useful-life prediction."""

__version__ = "0.1.0"
