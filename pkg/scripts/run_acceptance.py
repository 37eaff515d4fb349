"""Run both acceptance configs through the CLI and print the merged summary."""

import argparse
import json
import sys
from pathlib import Path

from freeshape.cli import main as freeshape

ROOT = Path(__file__).resolve().parents[1]


def run(configs: list[Path]) -> int:
    worst = 0
    for cfg in configs:
        print(f"== {cfg.name}", flush=True)
        code = freeshape(["run", str(cfg)])
        worst = max(worst, code)
        out = json.loads(cfg.read_text())["output"]["dir"]
        summary = json.loads(((cfg.parent / out) / "summary.json").read_text())
        print(f"   {summary['passed']}/{summary['count']} verdicts pass; failed: "
              f"{', '.join(summary['failed']) or 'none'}")
    return worst


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("configs", nargs="*", type=Path,
                    default=[ROOT / "configs/acceptance_1d.json", ROOT / "configs/acceptance_2d.json"])
    return run(ap.parse_args(argv).configs)


if __name__ == "__main__":
    sys.exit(main())
