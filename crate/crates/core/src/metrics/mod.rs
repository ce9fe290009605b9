//! Evaluation metrics: SSIM, FID, KID and Inception Score.

pub mod backend;
pub mod distance;
pub mod inception;
pub mod report;
pub mod ssim;

pub use backend::{EmbeddingBackend, SeededConvBackend};
pub use distance::{fid, kid, mmd2_unbiased, poly_kernel};
pub use inception::{inception_score, inception_score_with_splits};
pub use report::{evaluate_images, ComparisonReport, EvalMode, EvalSample, MetricReport, MetricRow, ALL_LABEL};
pub use ssim::ssim;
