"""Run gen -> train -> evaluate -> optimize (calibrated) -> evaluate for one scenario into one directory."""

import argparse
import sys
from pathlib import Path

from ris_amc import reports
from ris_amc.cli import main


def run(scenario, out, seed=None, snr=0.0):
    out = Path(out)
    common = ["--scenario", str(scenario)] + (["--seed", str(seed)] if seed is not None else [])
    steps = [
        ["gen", *common, "--out", str(out / "data")],
        ["train", *common, "--data", str(out / "data/dataset.bin"), "--out", str(out / "model")],
        ["evaluate", *common, "--checkpoint", str(out / "model/checkpoint.bin"),
         "--data", str(out / "data/dataset.bin"), "--snr", str(snr), "--out", str(out / "eval_dataset")],
        ["optimize", *common, "--checkpoint", str(out / "model/checkpoint.bin"), "--calibrate", "--out", str(out / "optimize")],
    ]
    for argv in steps:
        print("ris-amc " + " ".join(argv), flush=True)
        code = main(argv)
        if code:
            return code
    best = (out / "optimize/best_configs.tsv").read_text().splitlines()
    hexes = [line.split("\t")[2] for line in best if line and not line.startswith(("#", "target"))]
    configs = [a for h in hexes for a in ("--config", h)]
    floor = reports.read_table(out / "optimize/calibration.tsv")[0]["noise_floor_dbm"]
    return main(["evaluate", *common, "--checkpoint", str(out / "model/checkpoint.bin"), *configs,
                 "--noise-floor-dbm", floor,
                 "--config", "random", "--out", str(out / "eval_channel")])


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--scenario", default=str(Path(__file__).resolve().parents[1] / "scenarios/default.ini"))
    p.add_argument("--seed", type=int)
    p.add_argument("--snr", type=float, default=0.0, help="SNR for the dataset confusion matrix")
    p.add_argument("--out", required=True)
    a = p.parse_args()
    sys.exit(run(a.scenario, a.out, a.seed, a.snr))
