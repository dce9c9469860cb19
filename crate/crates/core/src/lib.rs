pub mod error;
pub mod measure;
pub mod quad;
pub mod special;
pub mod rates;
pub mod path;
pub mod rng;
pub mod stats;
pub mod lookdown;
pub mod kernel;
pub mod sde;
pub mod parallel;
pub mod dual;
pub mod scenario;
pub mod harness;
