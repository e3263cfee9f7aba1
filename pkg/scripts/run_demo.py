"""Run every CLI stage on a small simulated universe.

    python scripts/run_demo.py [workdir]

Uses scripts/demo_config.json; outputs land under <workdir>/out.
"""

import shutil
import sys
from pathlib import Path

from impactlab import cli

STAGES = ("simulate", "ingest", "estimate", "fit", "calibrate", "report")


def main():
    work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run").resolve()
    work.mkdir(parents=True, exist_ok=True)
    cfg = work / "run.json"
    shutil.copyfile(Path(__file__).with_name("demo_config.json"), cfg)
    for stage in STAGES:
        code = cli.main([stage, "--config", str(cfg)])
        if code != 0:
            sys.exit(code)
    print(f"report written to {work / 'out' / 'report'}", file=sys.stderr)


if __name__ == "__main__":
    main()
