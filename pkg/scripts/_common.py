import argparse
from pathlib import Path

from smcda.cli import write_csv


def parser(description: str, out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", type=Path, default=Path("out") / out)
    p.add_argument("--seed", type=int, default=0)
    return p


def save(out: Path, name: str, header, rows) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / name, list(header), rows)
    return out / name
