"""VMDNet: sample-wise VMD, bilevel (K, alpha) selection and per-mode TCN forecasting."""

__version__ = "0.1.0"
