pub mod audio;
pub mod cli;
pub mod denoiser;
pub mod diff;
pub mod fsio;
pub mod masker;
pub mod metrics;
pub mod model;
pub mod separate;
pub mod trainer;
