"""Adversarial robustness lab for visual SLAM.

Transforms clean dataset sequences into adversarial ones with
physically-parameterized, depth-aware perturbations, runs SLAM systems on
clean and perturbed data, scores trajectories (ATE/RPE), diagnoses
feature tracking, and bisects the severity at which a system first fails.
"""

__version__ = "0.1.0"
