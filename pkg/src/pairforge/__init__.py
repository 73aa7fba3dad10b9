"""pairforge: curation toolkit for synthetic paired face-makeup datasets.

Provides the three pair-rejection filters (facial misalignment, failed
makeup, inconsistent background), the evaluation metrics used to score
curated datasets (SSIM, background MSE, embedding cosine similarity),
a deterministic batch pipeline with manifest I/O, and a numerically
verified reference of low-rank key/value reference injection for
attention layers.
"""

__version__ = "0.1.0"
