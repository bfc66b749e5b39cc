//! Interval algebra, least squares and normal distribution functions shared by
//! the path solvers and the inference engine.

mod interval;
mod linalg;
mod normal;

pub use interval::IntervalSet;
pub use linalg::{least_squares_apply, numerical_rank, pseudo_inverse};
pub use normal::{
    ln_binomial, log_normal_sf, log_std_normal_mass, log_sum_exp, normal_cdf, normal_pdf,
    normal_quantile, normal_sf, truncated_normal_cdf, truncated_normal_eval, GaussianParams,
    TruncatedEval, MIN_REGION_MASS,
};
