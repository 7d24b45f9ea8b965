pub mod autodiff;
pub mod bench;
#[cfg(feature = "cli")]
pub mod cli;
pub mod ident;
pub mod linalg;
pub mod lpvmodel;
mod seeds;
pub mod ssparam;
pub mod verify;
