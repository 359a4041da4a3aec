pub mod autoencoder;
pub mod cli;
pub mod densities;
pub mod energy_sampler;
pub mod local_moments;
pub mod nonparametric;
pub mod numerics;
