"""Linear brain-to-latent decoding with hyperplane attribute manipulation,
exercised against a synthetic ground-truth world."""

__version__ = "0.1.0"
