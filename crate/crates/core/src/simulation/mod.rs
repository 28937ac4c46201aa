//! Simulation data-generating process, Monte Carlo driver and the Type I
//! error table.

pub mod dgp;
pub mod montecarlo;
pub mod table1;

pub use dgp::*;
pub use montecarlo::*;
pub use table1::*;
