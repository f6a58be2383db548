"""End-to-end CLI walk-through on a small synthetic dataset.

synth -> train -> eval -> optimize-thresholds -> eval -> report, all under one
working directory (default: a fresh temporary one).
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from multitask_affect.cli import main as cli


def run(*argv: str) -> None:
    print("$ multitask-affect " + " ".join(argv))
    code = cli(list(argv))
    if code:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir")
    args = parser.parse_args()
    work = Path(args.workdir or tempfile.mkdtemp(prefix="affect-"))
    work.mkdir(parents=True, exist_ok=True)
    data, run_dir = work / "data", work / "run"

    run("synth", "--n", "48", "--seed", "1", "--image-size", "16", "--out", str(data))
    config = {
        "image_size": 16,
        "channels": [8, 16, 32],
        "batch_size": 16,
        "stage1_epochs": 10,
        "stage2_epochs": 30,
        "learning_rate_stage1": 0.01,
        "learning_rate_stage2": 0.002,
        "train_data": str(data),
        "val_data": str(data),
        "out_dir": str(run_dir),
    }
    (work / "config.json").write_text(json.dumps(config, indent=2))
    run("train", "--config", str(work / "config.json"))
    ckpt = str(run_dir / "model.ckpt.json")
    run("eval", "--checkpoint", ckpt, "--data", str(data), "--out", str(work / "base.json"))
    run("optimize-thresholds", "--checkpoint", ckpt, "--data", str(data), "--out", str(work / "thresholds.json"))
    run("eval", "--checkpoint", ckpt, "--data", str(data), "--thresholds", str(work / "thresholds.json"),
        "--out", str(work / "tuned.json"))
    run("report", "--metrics", str(work / "base.json"), str(work / "tuned.json"), "--labels", "model", "model+thresholds")
    print(f"artifacts in {work}")


if __name__ == "__main__":
    main()
