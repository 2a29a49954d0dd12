//! Exact computations for diagonal flows on the space of `Z[1/p]`-lattices in
//! `Q_S^{n+1}` (`S = {p, ∞}`) and the Diophantine exponents they encode.

pub mod dioph;
pub mod error;
pub mod experiments;
pub mod flows;
pub mod geometry;
pub mod lattice;
pub mod sarith;
pub mod svec;

pub use error::{Error, Result};
pub use sarith::{CertifiedNorm, PExact, PNorm, PadicPoint, Precision, Prime};
pub use svec::{content, wedge, Content, SPoint, WedgeVector};
