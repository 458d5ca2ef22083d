//! Lipschitz functions with prescribed derivative sets on normed spaces.

pub mod blend;
pub mod cylinder;
pub mod error;
pub mod formats;
pub mod func;
pub mod game;
pub mod hexf;
pub mod operator;
pub mod prescribe;
pub mod puresets;
pub mod real;
pub mod region;
pub mod smooth;
pub mod space;
pub mod steep;
pub mod verify;

pub use error::{Error, Result};
pub use func::LipFn;
pub use operator::{LinOp, Matrix, OperatorFamily};
pub use real::{Mp, Real};
pub use region::Region;
pub use space::NormedSpace;
