//! Growth-fragmentation semigroups through h-transformed piecewise
//! deterministic Markov processes.
//!
//! The crate covers the whole pipeline: coefficients and the generator
//! ([`model`]), the growth flow ([`flow`]), Lyapunov weights and the closed-form
//! criteria ([`lyapunov`]), Monte Carlo evaluation of the semigroup
//! ([`pdmp`]), a finite-volume density solver ([`pde`]), Perron eigenelements
//! and the convergence rate ([`spectral`]) and a Fleming–Viot estimator of the
//! quasi-stationary objects ([`qsd`]).

pub mod error;
pub mod flow;
pub mod lyapunov;
pub mod model;
pub mod optim;
pub mod pde;
pub mod pdmp;
pub mod qsd;
pub mod quad;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/criteria.md")]
    mod criteria {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/finite-volumes.md")]
    mod finite_volumes {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/qsd.md")]
    mod qsd {}
}
