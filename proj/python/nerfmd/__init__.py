"""Radiance-field mirror detection pipeline."""

from ._core import (
    PipelineConfig,
    detect,
    eval,
    generate,
    mean_ssim_files,
    psnr_files,
    render,
    stage1,
    stage2,
)

__all__ = [
    "PipelineConfig",
    "detect",
    "eval",
    "generate",
    "mean_ssim_files",
    "psnr_files",
    "render",
    "stage1",
    "stage2",
]
