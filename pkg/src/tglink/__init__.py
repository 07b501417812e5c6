"""Continuous-time dynamic-graph link prediction with statistic-uncertainty
augmentation and masked mixup, trained through a small reverse-mode tape."""

__version__ = "0.1.0"
