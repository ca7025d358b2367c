"""Bounded-future multi-stage temporal convolutional networks.

Offline MS-TCN++ style segmentation (RR and BF variants), exact future-window
arithmetic, training, evaluation metrics, and delay-bounded streaming.
"""

from .metrics import MetricsReport, Segment, evaluate, frames_to_segments
from .model import ModelParameters, build_model, forward, predict
from .streaming import close_stream, open_stream, push_frame, run_stream
from .training import LossConfig, mstcn_loss, train
from .window import (LayerAddress, NetworkConfig, Stage, Variant, bucket_delay, direct_future_window,
                     future_window, future_window_seconds, measure_future_window)

__version__ = "0.1.0"
