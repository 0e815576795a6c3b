//! PSNR, PSNR-gain reports and Bjontegaard delta rate.

mod bdrate;
mod psnr;
mod report;

pub use bdrate::{bd_rate, fit_log_rate, overlap, LogRateCubic, RdCurve, RdPoint, BD_POINTS};
pub use psnr::{delta_psnr_report, mse_samples, psnr, psnr_from_mse, psnr_samples, DeltaPsnrReport, PSNR_CAP_DB};
pub use report::{format_gain_curves, format_report_table, ReportRow};
