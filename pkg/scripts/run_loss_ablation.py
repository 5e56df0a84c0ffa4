"""Validation scores and OOD AUC of UCE, UEMD² and hybrid models trained on the synthetic train split."""

import argparse
import time

import numpy as np

from evora.bench import LOSS_WEIGHTS
from evora.model import TrainConfig, train, validation_scores
from evora.terrain import collect_training_data, gen_dataset, ood_detection_metrics, predict_map

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--multiplier", type=int, default=10)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--joint-steps", type=int, default=1500)
    p.add_argument("--flow-steps", type=int, default=500)
    args = p.parse_args()

    train_set, val_set = collect_training_data(gen_dataset("train", seed=0), multiplier=args.multiplier, seed=0)
    ood = {kind: gen_dataset(kind, seed=0) for kind in ("ood1", "ood2")}
    for loss, (w1, w2) in LOSS_WEIGHTS.items():
        for seed in args.seeds:
            started = time.time()
            cfg = TrainConfig(w1=w1, w2=w2, joint_steps=args.joint_steps, flow_steps=args.flow_steps, seed=seed)
            model = train(train_set, cfg)
            scores = validation_scores(model, val_set)
            aucs = {k: np.mean([ood_detection_metrics(predict_map(model, m), m)[0] for m in maps])
                    for k, maps in ood.items()}
            print(f"{loss:<6} seed={seed} val_emd2={scores.emd2:.4f} val_kl={scores.kl:.4f} "
                  f"auc_ood1={aucs['ood1']:.3f} auc_ood2={aucs['ood2']:.3f} ({time.time() - started:.0f} s)")
