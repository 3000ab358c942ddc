# Train a small attentional guided filter on synthetic scenes and compare with bicubic.
#
# Run: python demos/toy_training.py   (about two minutes on one core)

import numpy as np

from dagf import DagfConfig, DagfModel
from dagf.data import TrainConfig, dataset_l1, degrade, predict_sr, rmse, synthetic_dataset, train, upsample_input

cfg = DagfConfig(m=2, k=3, channels=8)
hyper = TrainConfig(lr=1e-3, batch_size=8, patch_size=64, scale=16, iterations=200, seed=0)
train_set = synthetic_dataset(8, 64, seed=1)
held_out = synthetic_dataset(4, 64, seed=99)

start = DagfModel.initialize(cfg, seed=0)
print(f"initial training L1 {dataset_l1(start, train_set, hyper):.4f}")



def show(row):
    if row["epoch"] % 40 == 0:
        print(f"epoch {row['epoch']:3d}  total loss {row['total']:.4f}")


result = train(train_set, cfg, hyper, on_epoch=show)
model = DagfModel(cfg, result.params)
print(f"final training L1   {dataset_l1(model, train_set, hyper):.4f}")

bic, ours = [], []
for guidance, gt in held_out:
    lr = degrade(gt, hyper.scale, hyper.mode)
    bic.append(rmse(upsample_input(lr, hyper.scale), gt))
    ours.append(rmse(predict_sr(model, guidance, lr, hyper.scale), gt))
print(f"held-out rmse: bicubic {np.mean(bic):.4f}, model {np.mean(ours):.4f}")
