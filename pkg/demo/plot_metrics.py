"""
PSNR and SSIM on synthesized slices
===================================

The two image-quality metrics used throughout, on a toy pair.
"""

import numpy as np

from saint.metrics import psnr, ssim

rng = np.random.default_rng(0)
gt = rng.random((32, 32, 4))

###############################################################################
# A uniform offset of 0.1 is an MSE of 0.01, which is exactly 20 dB.
print(psnr(gt + 0.1, gt))

###############################################################################
# SSIM is 1 for identical images and drops as noise is added. Images of at
# least 11 pixels a side use the Gaussian window; smaller ones fall back to
# 8x8 blocks.
for sigma in (0.0, 0.05, 0.2):
    noisy = np.clip(gt + sigma * rng.standard_normal(gt.shape), 0, 1)
    print(sigma, round(psnr(noisy, gt), 2), round(ssim(noisy, gt), 4))
