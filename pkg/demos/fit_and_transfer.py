"""Build the procedural rig, move it onto a new face, and fit one synthetic frame.

    python3 demos/fit_and_transfer.py
"""

import time

import numpy as np

from blendrig.defxfer import transfer_rig
from blendrig.evaluation import mne
from blendrig.fitter import FitOptions, fit_frame
from blendrig.mesh import LandmarkSet, RigidPose, euler_to_rotation, geodesic_angle
from blendrig.prior import default_prior, sample_coefficients
from blendrig.synth import default_camera, make_identity, make_template, render_landmarks

tpl = make_template()
print(f"template: {tpl.neutral.n_vertices} vertices, {len(tpl.shapes)} blendshapes")

# a new identity, with all 52 shapes carried over by deformation transfer
face = make_identity(tpl, 42)
t = time.perf_counter()
rig = transfer_rig(tpl, face)
print(f"transferred rig onto identity 42 in {time.perf_counter() - t:.1f}s")

# a plausible expression under a moderate head pose, seen by the default camera
prior, cam = default_prior(), default_camera()
w = sample_coefficients(prior, 7)
pose = RigidPose.from_matrix(euler_to_rotation(*np.deg2rad([10, -20, 5])), [0.05, -0.1, 0.2])
target = render_landmarks(rig, w, pose, cam)
print("active shapes:", ", ".join(f"{rig.names[i]}={w[i]:.2f}" for i in np.flatnonzero(w)))

t = time.perf_counter()
res = fit_frame(rig, LandmarkSet(target), FitOptions(target_space="2d"), camera=cam)
print(f"fit in {time.perf_counter() - t:.1f}s, {res.iterations} iterations")
print(f"  landmark MNE {mne(render_landmarks(rig, res.coefficients, res.pose, cam), target, rig.landmark_map):.4f}%")
print(f"  coefficient max abs error {np.max(np.abs(res.coefficients - w)):.3f}")
print(f"  rotation error {np.rad2deg(geodesic_angle(res.pose.rotation, pose.rotation)):.3f} deg")
