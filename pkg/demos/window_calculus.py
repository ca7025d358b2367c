"""Future windows: formula, empirical measurement, and delay buckets.

Run: python3 demos/window_calculus.py
"""
import numpy as np

from bftcn.model import build_model
from bftcn.window import (NetworkConfig, all_buckets, bucket_delay, enumerate_configs,
                          future_window, future_window_seconds, measure_future_window,
                          saturating_w_max)


def main():
    print("config                         FW  measured  seconds  bucket")
    for variant, L, n_r, w in [("RR", 3, 1, 0), ("BF", 3, 1, 2), ("BF", 4, 2, 0), ("BF", 4, 2, 3)]:
        cfg = NetworkConfig(variant, L, L, n_r, w, n_feature_maps=8, n_classes=4)
        model = build_model(cfg, seed=0, n_input=6)
        fw = future_window(cfg)
        measured = measure_future_window(model, cfg, horizon=fw + 8)
        secs = future_window_seconds(cfg)
        print(f"{variant} L={L} N_R={n_r} w_max={w:<2}            {fw:3d}  {measured:8d}  "
              f"{secs:7.3f}  {bucket_delay(secs).label}")

    # past this bound, BF stops differing from RR
    cfg = NetworkConfig("BF", 5, 5, 2, 0)
    print(f"\nBF L=5 saturates at w_max={saturating_w_max(cfg)}")

    configs = enumerate_configs()
    fws = np.array([future_window_seconds(c) for c in configs])
    print(f"\n{len(configs)} grid configs, FW from {fws.min():.2f}s to {fws.max():.2f}s")
    for b in all_buckets():
        n = sum(bucket_delay(s).index == b.index for s in fws)
        print(f"  {b.label:>14}  {n}")


if __name__ == "__main__":
    main()
