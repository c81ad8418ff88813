#!/usr/bin/env python3
"""Check the directional orderings of finished ablation runs.

Reads the ``ablation_<family>.json`` reports written by ``facelab ablate`` and
fails when an expected ordering does not hold:

  cycle              with_cycle beats without_cycle on vert_abs_std and vert_l1
  landmark_protocol  P1 (no landmark loss) is worse than P2 and P3 on vert_l1
  skip_connections   with_skips reaches the photometric threshold in fewer epochs

Families whose report is missing are skipped unless ``--require`` names them.

Usage:
    uv run python scripts/check_ablations.py runs/
    uv run python scripts/check_ablations.py runs/ --require cycle landmark_protocol
"""

import argparse
import json
import logging
import sys
from pathlib import Path

# Ensure project root is importable
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from facelab.evaluation import AblationTable, EvalReport

logging.basicConfig(
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    level=logging.INFO,
)
logger = logging.getLogger(__name__)

FAMILIES = ("cycle", "landmark_protocol", "skip_connections")


def load_table(path: Path) -> AblationTable:
    data = json.loads(path.read_text(encoding="utf-8"))
    return AblationTable(
        family=data["family"],
        rows=[EvalReport.from_dict(r) for r in data["rows"]],
        diffs=data.get("diffs", {}),
    )


def epochs_to_threshold(history: list[float], threshold: float) -> int:
    """1-based epoch at which the training L1 first reaches ``threshold``; ``len + 1`` if never."""
    for epoch, value in enumerate(history, start=1):
        if value <= threshold:
            return epoch
    return len(history) + 1


def check_cycle(table: AblationTable) -> list[str]:
    on, off = table.row("with_cycle"), table.row("without_cycle")
    failures = []
    for metric in ("vert_abs_std", "vert_l1"):
        a, b = getattr(on, metric), getattr(off, metric)
        logger.info("cycle %s: with %.6f, without %.6f", metric, a, b)
        if not a < b:
            failures.append(f"cycle: {metric} with cycle ({a:.6f}) is not below without ({b:.6f})")
    return failures


def check_landmark_protocol(table: AblationTable) -> list[str]:
    p1 = table.row("P1_no_landmarks").vert_l1
    failures = []
    for label in ("P2_early_stop", "P3_always"):
        other = table.row(label).vert_l1
        logger.info("landmark_protocol vert_l1: P1 %.6f, %s %.6f", p1, label, other)
        if not p1 > other:
            failures.append(f"landmark_protocol: P1 ({p1:.6f}) is not worse than {label} ({other:.6f})")
    return failures


def check_skip_connections(table: AblationTable) -> list[str]:
    skips, plain = table.row("with_skips").history, table.row("without_skips").history
    if not skips or not plain:
        return ["skip_connections: report carries no per-epoch history"]
    # The weaker of the two final values; both curves reach it eventually
    threshold = max(skips[-1], plain[-1])
    a, b = epochs_to_threshold(skips, threshold), epochs_to_threshold(plain, threshold)
    logger.info("skip_connections: threshold %.5f reached at epoch %d (skips) vs %d (no skips)", threshold, a, b)
    if not a < b:
        return [f"skip_connections: with skips needs {a} epochs, without {b}"]
    return []


_CHECKS = {
    "cycle": check_cycle,
    "landmark_protocol": check_landmark_protocol,
    "skip_connections": check_skip_connections,
}


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("runs", type=Path, help="Directory searched recursively for ablation_<family>.json")
    parser.add_argument(
        "--require", nargs="*", choices=FAMILIES, default=[],
        help="Families whose report must be present",
    )
    args = parser.parse_args()

    failures: list[str] = []
    for family in FAMILIES:
        paths = sorted(args.runs.rglob(f"ablation_{family}.json"))
        if not paths:
            if family in args.require:
                failures.append(f"{family}: no report found under {args.runs}")
            else:
                logger.info("Skipping %s: no report", family)
            continue
        try:
            failures.extend(_CHECKS[family](load_table(paths[-1])))
        except KeyError as exc:
            failures.append(f"{family}: report is missing row {exc}")

    if failures:
        for failure in failures:
            logger.error("FAILED %s", failure)
        sys.exit(1)
    logger.info("All ablation orderings hold.")


if __name__ == "__main__":
    main()
