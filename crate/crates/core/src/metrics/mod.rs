//! Image quality metrics and architecture cost accounting.

mod cost;
mod quality;

pub use cost::{conv_flops, count_flops, count_params, CostReport, CostRow};
pub use quality::{
    crop_border, psnr, ssim, ssim_window, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
