"""Benchmark calibration sweep: L0 vs L1 vs L2 over seeds.

Usage: python scripts/calibrate.py NAME key=value ...
Prints per-seed R1/mAP and medians for levels 0,1,2.
"""

import json
import sys
import time

import numpy as np

from attnpyr import config as cfgmod
from attnpyr.data import synth_generate
from attnpyr.train import train_run


def main():
    name = sys.argv[1]
    overrides = dict(pair.split("=", 1) for pair in sys.argv[2:])
    seeds = [int(s) for s in overrides.pop("seeds", "0,1,2,3,4").split(",")]
    levels = [int(s) for s in overrides.pop("levels", "0,1,2").split(",")]
    results = {}
    t0 = time.time()
    for lv in levels:
        rows = []
        for seed in seeds:
            cfg = cfgmod.resolve({**overrides, "pyramid.levels": lv, "seed": seed,
                                  "eval.every": 0})
            ds = synth_generate(cfgmod.data_spec(cfg), seed)
            report, _, _ = train_run(cfg, f"/tmp/calib_{name}/L{lv}_s{seed}", dataset=ds)
            rows.append({"seed": seed, "r1": report.cmc_at(1), "map": report.map})
            print(f"L{lv} seed{seed}: r1={report.cmc_at(1):.3f} map={report.map:.3f}",
                  flush=True)
        results[lv] = rows
    print(f"\n== {name} ({time.time()-t0:.0f}s) ==")
    for lv in levels:
        r1s = [r["r1"] for r in results[lv]]
        maps = [r["map"] for r in results[lv]]
        print(f"L{lv}: r1 median={np.median(r1s):.3f} {sorted(r1s)} "
              f"map median={np.median(maps):.3f}")
    with open(f"/tmp/calib_{name}.json", "w") as fh:
        json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
