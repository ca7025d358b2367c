"""Bucket finished runs by delay and compute competitive ratios.

Uses stub result records, so nothing is trained here.
Run: python3 demos/competitive_ratio_report.py
"""
from bftcn.experiments import build_report, report_csv
from bftcn.window import NetworkConfig, future_window, future_window_seconds


def stub(variant, L, n_r, w_max, f1):
    cfg = NetworkConfig(variant, L, L, n_r, w_max)
    return {"name": f"{variant}-L{L}-R{n_r}-w{w_max}", "config": cfg.to_dict(),
            "fw_frames": future_window(cfg), "fw_seconds": future_window_seconds(cfg),
            "metrics": {"f1@50": f1}}


def main():
    results = [
        stub("RR", 10, 3, 0, 80.01),  # acausal baseline
        stub("RR", 2, 0, 0, 61.0),
        stub("BF", 10, 3, 0, 64.96),  # causal
        stub("BF", 4, 1, 1, 70.2),
        stub("BF", 2, 1, 2, 66.0),
    ]
    report = build_report(results)
    print(f"global ratio of the causal run: {64.96 / 80.01:.3f}")
    print(report_csv(report))


if __name__ == "__main__":
    main()
