"""segforge: a CT infection-segmentation toolkit.

Subpackages cover the full pipeline: NIfTI volume I/O, HU preprocessing,
seeded label-consistent augmentation, a small reverse-mode autodiff engine,
an attention-gated U-Net, region/boundary loss functions, Adam training with
cosine annealing, morphological post-processing, and an evaluation battery
(overlap, boundary-distance, classification, and ROC statistics).
"""

__version__ = "0.1.0"
