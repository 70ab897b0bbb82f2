"""Spin Drift-Diffusion - 自旋漂移扩散有限体积模拟器"""

__version__ = "0.1.0"
__description__ = "Finite-volume Scharfetter-Gummel solver for the spinorial matrix drift-diffusion model."
