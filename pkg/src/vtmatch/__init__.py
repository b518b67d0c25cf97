"""Cross-modality visuo-tactile instance recognition, desk scale.

Generates paired visual/tactile observations of procedural objects,
builds a self-supervised match dataset, trains a tied-weight late-fusion
match classifier with a from-scratch autodiff engine, and evaluates
K-shot instance recognition against a CCA baseline.
"""

__version__ = "0.1.0"

from .errors import VtmatchError

__all__ = ["VtmatchError", "__version__"]
