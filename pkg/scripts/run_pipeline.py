#!/usr/bin/env python3
"""End-to-end demo: synthesize a floater scene, train, compute uncertainty,
sweep clean-up thresholds, and write an evaluation report.

Usage: python scripts/run_pipeline.py [workdir]  (defaults to ./out/pipeline)
"""

import sys

from raylaplace.cli import main


def run(workdir="out/pipeline"):
    scene = f"{workdir}/scene"
    steps = [
        ["synth", "--kind", "floater", "--resolution", "64", "--out", scene,
         "--cameras", "16", "--test-cameras", "4", "--test-elevation", "42"],
        ["train", "--scene", f"{scene}/scene.json", "--out", f"{workdir}/field.vxf",
         "--resolution", "48", "--iterations", "1200", "--batch-rays", "2048",
         "--samples", "48"],
        ["uq", "--field", f"{workdir}/field.vxf", "--scene", f"{scene}/scene.json",
         "--out", f"{workdir}/field.unc", "--grid-resolution", "48",
         "--batches", "150", "--rays-per-batch", "1024", "--samples", "48"],
        ["render", "--field", f"{workdir}/field.vxf", "--uncertainty", f"{workdir}/field.unc",
         "--scene", f"{scene}/scene.json", "--camera-index", "16",
         "--channels", "rgb,depth,unc", "--out", f"{workdir}/view"],
        ["sweep", "--field", f"{workdir}/field.vxf", "--uncertainty", f"{workdir}/field.unc",
         "--gt-field", f"{scene}/gt.vxf", "--scene", f"{scene}/scene.json",
         "--out", f"{workdir}/sweep", "--count", "10", "--samples", "48"],
        ["eval", "--field", f"{workdir}/field.vxf", "--uncertainty", f"{workdir}/field.unc",
         "--gt-field", f"{scene}/gt.vxf", "--scene", f"{scene}/scene.json",
         "--report", f"{workdir}/report.json", "--samples", "48"],
    ]
    for argv in steps:
        print(f"\n$ raylaplace {' '.join(argv)}")
        code = main(argv)
        if code != 0:
            return code
    print(f"\ndone; inspect {workdir}/sweep/sweep.json and {workdir}/report.json")
    return 0


if __name__ == "__main__":
    sys.exit(run(*sys.argv[1:]))
