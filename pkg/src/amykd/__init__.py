"""PET-guided knowledge distillation for MRI-only amyloid prediction.

Subpackages: cohort (data model and splits), synth (synthetic paired
cohorts), slices/augment (preprocessing), nets (model components),
losses, mining (CL-aware triplets), schedules, trainer (three phases),
evalkit/saliency (evaluation), cli.
"""

__version__ = "0.1.0"
