"""Training both network heads at toy scale.

Trains a small outlier classifier and a small displacement regressor on
procedurally generated data, verifies the gradients of every loss against
finite differences, and writes the loss curves. Runs in a few minutes on a
laptop; real experiments just scale the same configs up.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from cloudclean import ModelConfig, TrainConfig, train
from cloudclean.dataset import DatasetConfig, generate_dataset
from cloudclean.shapes import box, icosphere
from cloudclean.training import gradient_check, make_gradcheck_net, make_loss_fixture

torch.set_num_threads(2)
out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

shapes = [("box", box()), ("sphere", icosphere(2))]

# Small architecture: same stages as the full-size network, narrower widths.
def model(output_dim):
    return ModelConfig(m=60, output_dim=output_dim,
                       point_feature_widths=(16, 16, 32, 64), feature_stn_dim=16,
                       feature_stn_after=2, regressor_widths=(48, 24),
                       qstn_widths=(16, 32), qstn_fc_widths=(16,),
                       stn_widths=(16, 32), stn_fc_widths=(16,))

# Before training anything: check analytic gradients against central finite
# differences for every loss the trainer supports.
micro = ModelConfig(m=12, output_dim=3, point_feature_widths=(6, 8),
                    feature_stn_dim=6, feature_stn_after=1, regressor_widths=(8,),
                    qstn_widths=(6, 8), qstn_fc_widths=(6,), stn_widths=(6, 8),
                    stn_fc_widths=(6,))
for loss in ("matched", "nearest", "farthest", "combined", "fixed"):
    net = make_gradcheck_net(micro, seed=1)
    err = gradient_check(net, make_loss_fixture(micro, loss, seed=2),
                         max_coords=25, seed=0)
    print(f"gradient check [{loss}]: max relative error {err:.2e}")

# Outlier head: 30%-outlier clouds, L1 label loss, Kaiming init.
outlier_data = generate_dataset(
    shapes, DatasetConfig(task="outliers", split="train", master_seed=1,
                          points_per_cloud=4000, outlier_fractions=(0.3,),
                          outlier_noise_fractions=(0.0,)),
    out_dir / "outlier_data")
outlier_run = train(outlier_data, model(output_dim=1),
                    TrainConfig(head="outlier", learning_rate=1e-3,
                                optimizer="adam", epochs=8, batch_size=64,
                                patches_per_shape_per_epoch=400, master_seed=2,
                                threads=2),
                    out_dir / "outlier_run")
print(f"outlier head: loss {outlier_run.loss_curve[0]:.4f} -> "
      f"{outlier_run.loss_curve[-1]:.4f}, checkpoint {outlier_run.final_checkpoint}")

# Displacement head: noisy/clean pairs, combined nearest+farthest loss.
denoise_data = generate_dataset(
    shapes, DatasetConfig(task="denoise", split="train", master_seed=3,
                          points_per_cloud=4000, noise_fractions=(0.0, 0.01)),
    out_dir / "denoise_data")
denoise_run = train(denoise_data, model(output_dim=3),
                    TrainConfig(head="denoise", loss="combined",
                                learning_rate=1e-3, optimizer="adam", epochs=12,
                                batch_size=64, patches_per_shape_per_epoch=400,
                                master_seed=4, threads=2),
                    out_dir / "denoise_run")
print(f"denoise head: loss {denoise_run.loss_curve[0]:.6f} -> "
      f"{denoise_run.loss_curve[-1]:.6f}, checkpoint {denoise_run.final_checkpoint}")

fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for ax, run, title in ((axes[0], outlier_run, "outlier head"),
                       (axes[1], denoise_run, "displacement head")):
    ax.plot(range(1, len(run.loss_curve) + 1), run.loss_curve, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title(title)
fig.tight_layout()
fig.savefig(out_dir / "training_curves.png", dpi=120)
print(f"wrote {out_dir / 'training_curves.png'}")
