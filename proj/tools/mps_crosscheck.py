#!/usr/bin/env python3
"""Solve every *.mps in a directory with HiGHS and compare against the
objective recorded next to it in objectives.json.

Exit 0 when every objective agrees within --tol (relative to 1 + |obj|),
1 on any mismatch, 77 when highspy is not importable.
"""
import argparse
import json
import pathlib
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("directory")
    ap.add_argument("--tol", type=float, default=1e-6)
    args = ap.parse_args()
    try:
        import highspy
    except ImportError:
        print("highspy not available", file=sys.stderr)
        return 77

    root = pathlib.Path(args.directory)
    expected = json.loads((root / "objectives.json").read_text())
    worst = 0.0
    failed = []
    for name, want in sorted(expected.items()):
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.readModel(str(root / name))
        h.run()
        if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
            failed.append(f"{name}: {h.modelStatusToString(h.getModelStatus())}")
            continue
        got = h.getInfo().objective_function_value
        err = abs(got - want) / (1.0 + abs(want))
        worst = max(worst, err)
        if err > args.tol:
            failed.append(f"{name}: highs {got!r} vs {want!r}")
    print(json.dumps({"models": len(expected), "max_rel_error": worst, "failures": failed}))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
