"""
Periodic shuffling and filter distance matrices
===============================================

How AMI turns ``r_z`` channel images into one image that is ``r_z`` times
longer along the sparse axis, and the physical distances that condition the
generated filters.
"""

import numpy as np

from saint.ami import fdm, fdm_stack, inverse_shuffle, periodic_shuffle, ps_map

###############################################################################
# Shuffling interleaves channels column by column. Channel 0 holds the
# observed slice, channels 1..r_z-1 the synthesized ones in between.
r_z = 3
stack = np.stack([np.full((2, 4), c, dtype=float) for c in range(r_z)])
image = periodic_shuffle(stack)
print(image)

# every (c, h, w) lands on a distinct output pixel, and the inverse undoes it
print(ps_map(2, 1, 3, r_z))
assert np.array_equal(inverse_shuffle(image, r_z), stack)

###############################################################################
# The distance matrix for channel 1 at r_z = 2 on a 1 mm grid. The centre
# column sits half a sparse step from the output voxel.
p = fdm(1, 3, 1.0, 1.0, 2)
print(np.round(p.values, 4))

# distances are in millimetres, so doubling the spacing doubles every entry
assert np.allclose(fdm(1, 3, 2.0, 2.0, 2).values, 2 * p.values)

###############################################################################
# One matrix per interpolated channel; the observed channel is not generated.
print(fdm_stack(3, 0.8, 2.5, 4).shape)
