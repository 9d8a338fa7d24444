"""Run the PXL lambda sweep and print accuracy / final-layer CKA per lambda.

    python scripts/lambda_sweep.py [--config configs/lambda_sweep.yaml] [--epochs N] [--corpus mnist_5k]
"""

import argparse
import csv
import dataclasses

from pipeinv.experiment import emit_report, load_config, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/lambda_sweep.yaml")
    ap.add_argument("--epochs", type=int, help="override the epoch count of every run")
    ap.add_argument("--corpus", help="override the dataset corpus, e.g. mnist_5k")
    ap.add_argument("--out")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.epochs:
        cfg = dataclasses.replace(cfg, train={**cfg.train, "epochs": args.epochs})
    if args.corpus:
        cfg = dataclasses.replace(cfg, dataset=dataclasses.replace(cfg.dataset, corpus=args.corpus))
    out, _ = run_experiment(cfg, args.out, resume=True)
    report = emit_report(out)
    with open(report / "lambda_sweep.csv") as fh:
        for row in csv.DictReader(fh):
            print(f"lambda={row['lambda']:>5}  acc_a={row['test_acc_a']}  acc_b={row['test_acc_b']}  cka_final={row['cka_final']}")


if __name__ == "__main__":
    main()
