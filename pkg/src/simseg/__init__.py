"""Stuff-and-instance matching for unsupervised domain adaptation of
semantic segmentation, at toy scale on numpy."""

__version__ = "0.1.0"
