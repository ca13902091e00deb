//! Probability modelling and entropy coding of quantized codes.

pub mod bits;
pub mod logistic;
pub mod model;
pub mod rangecoder;

pub use logistic::{logistic_cdf, logistic_pmf, pmf_table, BETA_FLOOR, P_MIN};
pub use model::{
    build_baseline_context, build_context, codelength_proxy, fit_entropy_model, EntropyFitConfig, EntropyModel,
    FitReport, GroupSample, SymbolContext,
};
pub use rangecoder::{range_decode, range_encode, Cdf, RangeDecoder, RangeEncoder, PROB_BITS, PROB_TOTAL};
