"""Shared bits for the experiment scripts."""

import argparse
import json
import logging
from pathlib import Path


def parser(doc: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--seed", type=int, default=0, help="root seed, default 0")
    p.add_argument("--out", default="results", help="output directory, default results")
    return p


def write_report(out, name: str, report: dict) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    print(json.dumps(report, indent=1, sort_keys=True))
    return path


logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
