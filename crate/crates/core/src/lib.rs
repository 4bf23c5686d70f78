pub mod backbone;
pub mod config;
pub mod error;
pub mod haa;
pub mod hcl;
pub mod hierlabel;
pub mod model;
pub mod ndgrad;
pub mod params;
pub mod pipeline;
pub mod uac;
pub use error::{Error, Result};
#[cfg(test)]
mod testutil;
