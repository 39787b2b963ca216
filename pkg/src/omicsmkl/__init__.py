"""Multiple kernel learning for multi-omics classification.

Kernel fusion (uniform, STATIS, SimpleMKL, SEMKL) feeding an SVM, kernel-PCA
embedded deep fusion networks, and Integrated-Gradients + KPCA-IG biomarker
ranking.
"""

__version__ = "0.1.0"
