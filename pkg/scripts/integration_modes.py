#!/usr/bin/env python3
"""Integration-direction ablation on the synthetic task.

Trains the same split with each integration mode (st2t, st2s, bidir, none)
over a shared seed set and prints one comparison row per mode. Example:

    python3 scripts/integration_modes.py --seeds 0 1 --epochs 50
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lidsn.config import INTEGRATION_MODES, ModelConfig
from lidsn.data import SynthSpec, make_split, synth_generate
from lidsn.params import count_params_flops
from lidsn.training import TrainConfig, run_fold


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--patience", type=int, default=20)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--train-fraction", type=float, default=0.8)
    return ap.parse_args()


def main() -> int:
    args = parse_args()
    spec = SynthSpec()
    epochs_set = synth_generate(spec, seed=args.data_seed)
    plan = make_split(epochs_set, "CO", train_fraction=args.train_fraction)
    train_idx, test_idx = plan.folds[0]

    print(f"{'mode':<6} {'params':>8} {'flops':>10} {'acc':>14} {'f1':>14}")
    for mode in INTEGRATION_MODES:
        cfg = ModelConfig(
            n_channels=spec.n_channels,
            n_samples=spec.n_samples,
            n_classes=len(spec.classes),
            integration_mode=mode,
        ).validate()
        params, flops = count_params_flops(cfg)
        accs, f1s = [], []
        for seed in args.seeds:
            tcfg = TrainConfig(epochs=args.epochs, patience=args.patience,
                               seed=seed).validate()
            fold = run_fold(epochs_set, train_idx, test_idx, cfg, tcfg, fold=0)
            accs.append(fold.metrics["accuracy"])
            f1s.append(fold.metrics["macro_f1"])
        acc = np.array(accs)
        f1 = np.array(f1s)
        spread = acc.std(ddof=1) if acc.size > 1 else 0.0
        fspread = f1.std(ddof=1) if f1.size > 1 else 0.0
        print(f"{mode:<6} {params:>8} {flops:>10} "
              f"{acc.mean():>7.4f}+/-{spread:.4f} {f1.mean():>7.4f}+/-{fspread:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
