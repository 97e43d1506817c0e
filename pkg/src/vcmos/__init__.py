"""Full-reference quality prediction for videoconferencing recordings.

Marker-based alignment of degraded recordings, per-frame temporal and
image-quality features, and an LSTM that scores every frame.
"""
__version__ = "0.1.0"
