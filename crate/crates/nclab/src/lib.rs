pub mod basis;
pub mod darboux;
pub mod error;
pub mod gauge;
pub mod kinematics;
pub mod linalg;
pub mod moyal;
pub mod par;
pub mod params;
pub mod report;
pub mod twisted;

pub use error::{Error, Result};
pub use params::ParameterSet;
pub use report::{Check, Report};
