"""
Augmentation and training-set mixing
====================================

Sketches can be rotated about the vertical axis or stretched independently
along each axis while training. Synthetic sketches can be mixed into the
human training set at a fixed ratio.
"""

import numpy as np

from vrsketch import augmentation, geometry, toy

sketch, _ = toy.make_toy_chair(0)
cloud = geometry.sample_sketch_cloud(sketch, 512)
rng = np.random.default_rng(0)

rotated = augmentation.random_axis_rotation(cloud, rng, axis="z", renormalize=False, degrees=30)
d0 = np.linalg.norm(cloud[:, None] - cloud[None], axis=-1)
d1 = np.linalg.norm(rotated[:, None] - rotated[None], axis=-1)
print("rotation changes pairwise distances by", np.abs(d0 - d1).max())

stretched = augmentation.random_anisotropic_scale(cloud, rng, (0.9, 1.1), renormalize=False)
print("extent before", np.ptp(cloud, 0).round(3), "after", np.ptp(stretched, 0).round(3))

cfg = augmentation.AugmentConfig(scale_enabled=True)
out = augmentation.augment(cloud, cfg, rng)
print("renormalized after distortion:", geometry.is_normalized(out))

# mixing: 281 human sketches plus floor(1.5 * 281) synthetic ones
human = [f"human{i}" for i in range(281)]
synthetic = [f"synthetic{i}" for i in range(1000)]
for ratio in (0.5, 1.0, 1.5, 2.0):
    mixed = augmentation.compose_training_set(human, synthetic, ratio, seed=0)
    print(f"ratio {ratio}: {len(mixed)} training sketches ({len(mixed) - 281} synthetic)")
