"""
Sketch and shape point clouds
=============================

A VR sketch is a set of 3D strokes and a shape is a triangle mesh. Both are
turned into normalized point clouds of the same size before encoding.
"""

import numpy as np

from vrsketch import geometry, toy

# a toy chair: box parts as a mesh, and a jittered wireframe of them as a sketch
sketch, mesh = toy.make_toy_chair(seed=3)
print(f"sketch: {len(sketch.strokes)} strokes, {sum(len(s.points) for s in sketch.strokes)} raw points")
print(f"mesh:   {len(mesh.vertices)} vertices, {len(mesh.faces)} faces, area {mesh.face_areas().sum():.3f}")

# strokes are resampled by arc length, thinned by farthest point sampling,
# then centred on the bounding box and scaled so the largest extent is 1
sketch_cloud = geometry.sample_sketch_cloud(sketch, 1024)
print("sketch cloud", sketch_cloud.shape, "normalized:", geometry.is_normalized(sketch_cloud))

# meshes are sampled area-weighted (4x oversampling) and thinned the same way;
# the seed fixes the cloud so a shape is identical in every run
shape_cloud = geometry.sample_mesh_cloud(mesh, 1024, np.random.default_rng(0))
print("shape cloud", shape_cloud.shape, "extent", np.ptp(shape_cloud, axis=0).round(3))

# normalization is idempotent
again = geometry.normalize_cloud(shape_cloud)
print("re-normalizing moves points by", np.abs(again - shape_cloud).max())

# farthest point sampling and kNN break ties deterministically, so a
# shuffled cloud selects the same set of points
perm = np.random.default_rng(1).permutation(1024)
a = {tuple(p) for p in shape_cloud[geometry.farthest_point_sample(shape_cloud, 64)]}
b = {tuple(p) for p in shape_cloud[perm][geometry.farthest_point_sample(shape_cloud[perm], 64)]}
print("FPS selection survives shuffling:", a == b)

nbrs = geometry.knn_indices(shape_cloud[:16], 3)
print("3 nearest neighbours of point 0:", nbrs[0])

# arc-length allocation gives every stroke at least two samples
lengths = [s.length for s in sketch.strokes]
alloc = geometry.allocate_by_length(lengths, 200)
print("samples per stroke (first five):", alloc[:5], "total", alloc.sum())
