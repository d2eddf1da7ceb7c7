"""Cross-modal RGB+X latent diffusion at desk scale.

Library entry points:

- rgbx.diffusion: schedules, forward noising, training loss, sampling
- rgbx.vae: the dual-path VAE and its loss
- rgbx.conditioning: layout/caption embedders and gated fusion
- rgbx.unet: the conditional noise predictor
- rgbx.scenes / rgbx.dataset: synthetic paired data and on-disk format
- rgbx.metrics: PSNR, SSIM, set distance, layout alignment
- rgbx.train / rgbx.sweeps: training orchestration and ablations
- rgbx.cli: the `rgbx` command line

The numba/numpy kernel lane is picked by the RGBX_KERNELS env var
(auto|numba|numpy); both lanes are bit-identical.
"""

__version__ = "0.1.0"
