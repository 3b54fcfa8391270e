pub mod numerics;
pub mod pose;
pub mod streams;
pub mod completion;
pub mod qrnn;
pub mod synth;
pub mod forecast;
pub mod baselines;
pub mod io;
#[cfg(feature = "cli")]
pub mod cli;
