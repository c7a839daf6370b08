"""automr: policy-gradient search over meta-reasoning skeletons."""

__version__ = "0.1.0"
