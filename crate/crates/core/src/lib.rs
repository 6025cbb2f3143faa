//! Event-triggered boundary control of 2x2 semilinear hyperbolic systems
//!
//! ```text
//! u_t + lambda_u(x) u_x = f_u(u, v, x)
//! v_t - lambda_v(x) v_x = f_v(u, v, x)
//! u(0, t) = g(v(0, t), t),   v(1, t) = U(t)
//! ```
//!
//! on `x in [0, 1]`, with a predictor-based feedback that is only re-evaluated
//! when a prediction of the boundary value `v(0, .)` drifts too far from its
//! reference.

pub mod controller;
pub mod error;
pub mod expr;
pub mod linear;
pub mod model;
pub mod predictor;
pub mod scenario;
pub mod sim;

pub use error::{Error, ParseError, Result};
pub use expr::CoeffFn;
pub use model::{Grid, ModelBounds, NodeTimes, SystemModel};
pub use predictor::{CharacteristicSlice, Predictor};
pub use sim::{InputSignal, StateProfile, Trajectory};
