//! Pseudospectral tools for measuring how fast the rescaled anisotropic
//! Navier-Stokes system converges to the primitive equations as the aspect
//! parameter `eps` tends to zero.
//!
//! Everything lives on the periodic cell `(0,1)^2 x (-1,1)` with wavenumbers
//! `kappa = (2*pi*k1, 2*pi*k2, pi*k3)`. Horizontal velocities and pressure
//! are even in `z`, the vertical velocity is odd; parity is carried as a tag
//! on every field and enforced as a coefficient symmetry so violations stay
//! measurable. The two systems are integrated with the same implicit
//! trapezoid (diffusion) + two-step extrapolated (advection) scheme, their
//! trajectories are differenced, and the scaled difference `(V, eps*W)` is
//! measured in a parabolic space-time norm whose decay rate in `eps` is the
//! quantity of interest.

pub mod dynamics;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod io;
pub mod norms;
pub mod projection;
pub mod spectral;

pub use dynamics::{integrate, NsState, PeState, StepperConfig, System, Trajectory};
pub use fields::{HorizontalField, HorizontalScalar, VelocityField};
pub use grid::{build_grid, GridSpec, SpectralGrid};
pub use norms::{NormSpec, SpaceTimeNorm};
pub use projection::AnisotropyParam;
pub use spectral::{Parity, ScalarField};

/// Errors shared across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid spec invalid: {0}")]
    GridInvalid(String),

    #[error("sample array shape {got:?} does not match grid {want:?}")]
    ShapeMismatch { want: [usize; 3], got: Vec<usize> },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("anisotropy parameter must satisfy 0 < eps <= 1, got {0}")]
    InvalidEpsilon(f64),

    #[error("barotropic divergence {residual:.3e} exceeds tolerance {tol:.3e}")]
    BarotropicDivergence { residual: f64, tol: f64 },

    #[error("band limit {band_limit} exceeds the dealias range {max} of the grid")]
    BandLimit { band_limit: usize, max: usize },

    #[error("state lost finiteness at t = {t}")]
    NonFinite { t: f64 },

    #[error("invalid norm exponent: {0}")]
    InvalidExponent(String),

    #[error("trajectories sample different time points")]
    SampleMismatch,

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("rate fit requires positive values, found {0}")]
    NonPositiveRate(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot file corrupt: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
