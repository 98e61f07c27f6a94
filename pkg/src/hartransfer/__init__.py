"""Few-shot transfer learning for wearable-sensor activity recognition.

Pipeline: teacher training on an augmented labeled source dataset,
confidence-filtered pseudo-labeling of an unlabeled target dataset,
student training with a combined cross-entropy / consistency /
contrastive loss, and few-shot fine-tuning of a fresh classifier head
on a frozen encoder.
"""

__version__ = "0.1.0"
