"""styletrace: style transfer as image editing.

The generator never paints a stylized image from scratch. A non-differentiable
preprocessing pass builds a smoothed, colour-matched "content prior" and the
network only predicts bounded RGB deltas on top of it. Training combines
feature statistics matching, adversarial and patch co-occurrence terms, and
grouped contrastive losses; inference supports interpolation and boosting of
the stylization strength, including extrapolation past 1.
"""

__version__ = "0.1.0"
