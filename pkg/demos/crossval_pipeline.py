"""
Phantoms to cross-validated report through the command line
===========================================================

Generates ten phantoms, runs five-fold cross-validation per cohort with a
small network, and prints the summary table.  This is the desk-scale stand
in for the full experiment; expect five to ten minutes on one core.
Pass ``--quick`` for a two-fold, few-epoch run that finishes in seconds.
"""

import sys
import tempfile
from pathlib import Path

from tumorseg.cli import main

quick = "--quick" in sys.argv
work = Path(tempfile.mkdtemp(prefix="tumorseg-cv-"))
size = ["16", "16", "8"] if quick else ["32", "32", "32"]
main(["phantom", "--n-cases", "10", "--size", *size, "--seed", "7", "--out", str(work / "data")])

args = ["crossval", "--manifest", str(work / "data" / "manifest.jsonl"), "--out", str(work / "cv"),
        "--num-blocks", "3", "--base-filters", "8", "--batch-size", "4", "--lr", "3e-4",
        "--deterministic", "-v"]
args += ["--folds", "2", "--epochs", "2"] if quick else ["--folds", "5", "--epochs", "30"]
code = main(args)
print("exit code", code, "- outputs in", work)
for d in sorted((work / "cv").iterdir()):
    print("  ", d.name)
