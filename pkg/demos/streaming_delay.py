"""Online inference: each frame is labeled exactly FW frames after it arrives.

Run: python3 demos/streaming_delay.py
"""
import numpy as np

from bftcn.model import build_model, forward
from bftcn.streaming import close_stream, open_stream, push_frame
from bftcn.window import NetworkConfig, future_window


def main():
    cfg = NetworkConfig("BF", 3, 3, 1, 2, n_feature_maps=8, n_classes=4)
    model = build_model(cfg, seed=3, n_input=5)
    fw = future_window(cfg)
    x = np.random.default_rng(0).standard_normal((20, 5))

    state = open_stream(model)
    outputs = []
    for t, frame in enumerate(x):
        out = push_frame(state, frame)
        if out:
            print(f"push {t:2d} -> labels frames {[o.t for o in out]}")
        outputs += out
    tail = close_stream(state)
    print(f"close   -> labels frames {[o.t for o in tail]}")
    outputs += tail

    offline = forward(model, x)[-1]
    online = np.stack([o.probs for o in outputs], axis=1)
    print(f"\nFW = {fw}; delays seen: {sorted({o.delay_frames for o in outputs[:-fw]})}")
    print(f"max |online - offline| = {np.abs(online - offline).max():.1e}")


if __name__ == "__main__":
    main()
