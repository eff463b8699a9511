"""
End-to-end slice interpolation on phantoms
==========================================

Train the desk-sized AMI and RFN on synthetic volumes, then compare against
trilinear and nearest interpolation on a held-out volume. Training is cut
down (four volumes, 300 + 200 steps) so the script finishes in about a
minute; the acceptance experiment uses six volumes and 500 + 500 steps.
"""

import numpy as np

from saint.pipeline import (
    ExperimentConfig,
    evaluate_methods,
    make_dataset,
    mean_metric,
    saint_infer,
    train_ami,
    train_rfn,
)
from saint.volume import decimate_z, sparse_pair

cfg = ExperimentConfig(
    train_count=4, test_count=1, axial_mm=(0.8, 2.0),
    ami_steps=300, rfn_steps=200, eval_rz=(2,),
)
train, test = make_dataset(cfg)
ami_ps = train_ami(cfg, train)
rfn_ps = train_rfn(cfg, train, ami_ps)

###############################################################################
# Observed slices survive untouched; only the slices in between are new.
gt, sparse = sparse_pair(test[0], 2)
dense = saint_infer(sparse, 2, ami_ps, rfn_ps)
assert np.array_equal(decimate_z(dense, 2).data, sparse.data)
print(sparse.dims, "->", dense.dims, "spacing", dense.spacing)

###############################################################################
# PSNR on synthesized slices only.
report = evaluate_methods(cfg, test, 2, ami_ps, rfn_ps)
for method in ("saint", "ami_avg", "trilinear", "nearest"):
    print(f"{method:10s} {mean_metric(report, method, 2, 'crop32:synth'):.2f} dB")
