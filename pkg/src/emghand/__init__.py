"""Desk-scale sEMG-to-hand-motion pipeline.

Synthetic paired data generation, a transformer decoder trained in two
stages (masked-patch pretraining, then supervised L1 fine-tuning), a
25 Hz sliding-window realtime engine with atomic weight hot-swap, an
online adaptation service, offline evaluation, and a websocket bridge
for the operator dashboard.
"""

__version__ = "0.1.0"

from .handformer import HandFormer, ModelConfig  # noqa: F401
from .preprocess import WindowPair  # noqa: F401
from .realtime import EngineConfig, RealtimeEngine  # noqa: F401
from .streams import AlignedTrack, SampleChunk, StreamBuffer, StreamInfo  # noqa: F401
from .synthgen import GestureScript, MuscleModel, SessionRecording  # noqa: F401
