//! Measurement analyses on click streams: pair-delay histograms and g²(τ)
//! fits, Raman-ratio thermometry, and bath-temperature fitting.

mod g2fit;
mod histogram;
mod minimize;
mod thermometry;

pub use g2fit::{analyze_g2, fit_g2, BandPoint, G2Analysis, G2Fit, G2Options};
pub use histogram::{build_histogram, normalize_g2, CoincidenceHistogram, G2Point, Normalization};
pub use thermometry::{
    fit_bath_temperature, occupancy_from_ratio, occupancy_model, raman_ratio, thermometry, CavityUncertainty,
    OccupancyPoint, RamanCounts, RatioEstimate, TemperatureFit, ThermometryResult,
};
