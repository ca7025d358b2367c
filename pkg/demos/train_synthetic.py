"""Train a small BF model on synthetic feature sequences and evaluate it.

Run: python3 demos/train_synthetic.py  (about a minute on one core)
"""
import numpy as np

from bftcn.data_io import SynthSpec, calibrate_sigma, generate_dataset, nearest_mean_accuracy
from bftcn.model import build_model
from bftcn.training import evaluate_model, train
from bftcn.window import NetworkConfig, future_window


def main():
    base = SynthSpec(t_min=200, t_max=300, dim=16, seed=7)
    sigma = calibrate_sigma(base, 70.0, n_videos=5)
    spec = SynthSpec(**{**base.__dict__, "sigma": sigma})
    train_set = generate_dataset(spec, 8)
    val_set = generate_dataset(spec, 3, start=100)
    test_set = generate_dataset(spec, 4, start=200)
    print(f"sigma={sigma:.3f}, nearest-mean accuracy on test: "
          f"{nearest_mean_accuracy(test_set, spec.resolved_means()):.1f}%")

    cfg = NetworkConfig("BF", 6, 6, 2, 4, n_feature_maps=32, n_classes=6)
    model = build_model(cfg, seed=0, n_input=16)
    print(f"BF L=6 N_R=2 w_max=4: future window {future_window(cfg)} frames")

    best, history = train(model, train_set, val_set, epochs=40, batch_size=2, seed=0)
    for h in history[4::5]:
        print(f"  epoch {h['epoch']:2d}  loss {h['train_loss']:.3f}  val f1@50 {h['val']['f1@50']:.1f}")
    print("test:", {k: round(v, 1) for k, v in evaluate_model(best, test_set)["mean"].items()})


if __name__ == "__main__":
    np.set_printoptions(precision=3)
    main()
