"""A few-minute version of the full pipeline: data, mixer training and the MNE table.

    python3 demos/train_small.py [out_dir]

The acceptance run uses PipelineConfig() (20k samples, 5000 steps) instead.
"""

import sys

from blendrig.cli import PipelineConfig, run_pipeline

out = sys.argv[1] if len(sys.argv) > 1 else "demo_run"
cfg = PipelineConfig(seed=0, n_identities=20, n_train=2000, holdout_identities=5, n_holdout=100,
                     training={"preset": "desk", "train": {"steps": 1000, "log_every": 100}})
prov = run_pipeline(cfg, out)
print(f"artifacts in {out}/, config hash {prov['config_hash'][:12]}")
