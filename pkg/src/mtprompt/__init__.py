"""Multi-task prompt tuning for two-stream vision-language classifiers.

Soft context sharing through a task-name meta network, the single-task and
hard-shared baselines, a deterministic toy text encoder with exact input
gradients, plain-SGD training, transfer and similarity analyses, and a
numeric verifier for the one-step SGD decomposition of context updates.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
