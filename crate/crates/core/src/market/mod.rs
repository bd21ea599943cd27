//! Market model: correlated GBM assets, a European call portfolio, loss
//! generation, and the offline dataset pipeline.

mod blackscholes;
mod cholesky;
mod config;
mod dataset;
mod sim;

pub use blackscholes::{bs_call, norm_cdf, portfolio_value_0};
pub use cholesky::{build_covariance_factor, covariance_matrix, CovarianceFactor};
pub use config::MarketConfig;
pub use dataset::{generate_offline_dataset, DatasetMetadata, OfflineDataset};
pub use sim::{LossMode, Market, DEFAULT_M_INNER, DEFAULT_N_ORACLE};
