"""synth -> train -> replay -> eval in one go, writing everything under one directory.

    python3 scripts/run_pipeline.py WORKDIR [--rounds 10] [--epochs 5] [--seed 0] [--oracle]

With --oracle the replay resolves damage with the law that generated the
rounds instead of the trained models; unless --law is given the rounds are
then synthesized with the deterministic fixture law, so the replay should
reproduce every outcome.
"""
import argparse
import json
import sys
from pathlib import Path

from decoy.cli import run
from decoy.dataset import FIXTURE_LAW


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("workdir", type=Path)
    p.add_argument("--rounds", default="10")
    p.add_argument("--epochs", default="5")
    p.add_argument("--seed", default="0")
    p.add_argument("--law", default=None, help="damage law JSON for synthesis (default built-in law)")
    p.add_argument("--oracle", action="store_true", help="replay with the generating law")
    a = p.parse_args()
    w = a.workdir
    data, models = w / "data", w / "models"
    seed = ["--seed", a.seed]
    if a.oracle and not a.law:
        w.mkdir(parents=True, exist_ok=True)
        a.law = str(w / "law.json")
        Path(a.law).write_text(json.dumps(FIXTURE_LAW.to_dict(), indent=1) + "\n")
    synth = ["synth", "--rounds", a.rounds, "--out", str(data), *seed] + (["--law", a.law] if a.law else [])
    steps = [
        synth,
        ["train-dip", "--data", str(data), "--epochs", a.epochs, "--out", str(models), *seed],
        ["train-dog", "--data", str(data), "--epochs", a.epochs, "--out", str(models), *seed],
        ["replay", "--round", str(data), "--mode", "full", "--models", str(data / "law" if a.oracle else models),
         "--out", str(w / "replay"), *seed],
        ["eval", "--original", str(data), "--replayed", str(w / "replay"), "--report", str(w / "report.json"),
         "--grids", str(w / "grids")],
    ]
    for argv in steps:
        print(f"$ decoy {' '.join(argv)}", flush=True)
        rc = run(argv)
        if rc:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
