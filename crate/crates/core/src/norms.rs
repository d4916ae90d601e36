//! Discrete space-time norms.
//!
//! Spatial norms are evaluated by inverse transform to the collocation grid
//! and equal-weight quadrature (spectrally accurate for smooth periodic
//! integrands; exact Parseval at `q = 2`). The `H^{2,q}` norm uses the
//! `(I - lap)` multiplier `(1 + |kappa|^2)` on coefficients, an exact
//! equivalent norm. Time integration is composite trapezoid on `g(t)^p`.
//!
//! The maximal-regularity aggregate over a sampled trajectory is
//!
//! ```text
//! E1(T) = ||u||_{Lp(0,T;H^{2,q})} + ||u||_{Lp(0,T;Lq)} + ||du/dt||_{Lp(0,T;Lq)}
//! ```
//!
//! realized as the SUM of the three components (equivalent to the max up to
//! a factor 3; the choice is recorded in reports so rates stay comparable).
//! Tendencies come from stored right-hand sides, not finite differences, so
//! the time-derivative part carries no dt-order error of its own.

use crate::dynamics::Trajectory;
use crate::fields::VelocityField;
use crate::projection::AnisotropyParam;
use crate::spectral::ScalarField;
use crate::{Error, Result};

/// Exponent triple selecting a space-time norm.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormSpec {
    /// Time exponent, in (1, infinity).
    pub p: f64,
    /// Space exponent, in (1, infinity).
    pub q: f64,
    /// Spatial smoothness of the strongest component; 0 or 2.
    pub s: f64,
}

impl NormSpec {
    pub fn new(p: f64, q: f64, s: f64) -> Result<Self> {
        check_exponent("p", p)?;
        check_exponent("q", q)?;
        if !(s == 0.0 || s == 2.0) {
            return Err(Error::InvalidExponent(format!(
                "smoothness s must be 0 or 2, got {s}"
            )));
        }
        Ok(Self { p, q, s })
    }
}

fn check_exponent(name: &str, x: f64) -> Result<()> {
    if !(x > 1.0) || !x.is_finite() {
        return Err(Error::InvalidExponent(format!(
            "{name} must lie in (1, inf), got {x}"
        )));
    }
    Ok(())
}

/// Value and components of an evaluated E1-type norm.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpaceTimeNorm {
    /// `Lp`-in-time of the `H^{2,q}` spatial norm.
    pub h2q: f64,
    /// `Lp`-in-time of the `Lq` spatial norm.
    pub lq: f64,
    /// `Lp`-in-time of the `Lq` norm of the stored tendency.
    pub dt: f64,
}

impl SpaceTimeNorm {
    pub const ZERO: Self = Self { h2q: 0.0, lq: 0.0, dt: 0.0 };

    /// The intersection norm: sum of the components.
    pub fn value(&self) -> f64 {
        self.h2q + self.lq + self.dt
    }
}

/// `(int |f|^q)^{1/q}` over the cell `(0,1)^2 x (-1,1)`.
pub fn lq_norm(f: &ScalarField, q: f64) -> f64 {
    let samples = f.to_samples();
    let vol = f.grid().cell_volume();
    let sum: f64 = samples.iter().map(|v| v.abs().powf(q)).sum();
    (vol * sum).powf(1.0 / q)
}

/// `Lq` norm of the pointwise Euclidean magnitude of a velocity field.
pub fn lq_norm_vec(u: &VelocityField, q: f64) -> f64 {
    let a = u.v1.to_samples();
    let b = u.v2.to_samples();
    let c = u.w.to_samples();
    let vol = u.grid().cell_volume();
    let mut sum = 0.0;
    for ((x, y), z) in a.iter().zip(b.iter()).zip(c.iter()) {
        sum += (x * x + y * y + z * z).powf(0.5 * q);
    }
    (vol * sum).powf(1.0 / q)
}

fn bessel_multiplied(f: &ScalarField, s: f64) -> ScalarField {
    let mut g = f.clone();
    let grid = f.grid().clone();
    for ((i, j, l), c) in g.coeffs_mut().indexed_iter_mut() {
        let [kx, ky, kz] = grid.kappa(i, j, l);
        *c *= (1.0 + kx * kx + ky * ky + kz * kz).powf(0.5 * s);
    }
    g
}

/// Bessel-potential norm via the `(1 + |kappa|^2)^{s/2}` multiplier;
/// `s = 0` reduces to `lq_norm`, `s = 2` is exactly the `(I - lap)` norm.
pub fn bessel_norm(f: &ScalarField, s: f64, q: f64) -> f64 {
    if s == 0.0 {
        return lq_norm(f, q);
    }
    lq_norm(&bessel_multiplied(f, s), q)
}

/// Vector Bessel norm: the multiplier acts componentwise, the magnitude is
/// pointwise Euclidean.
pub fn bessel_norm_vec(u: &VelocityField, s: f64, q: f64) -> f64 {
    if s == 0.0 {
        return lq_norm_vec(u, q);
    }
    let mut g = u.clone();
    g.v1 = bessel_multiplied(&u.v1, s);
    g.v2 = bessel_multiplied(&u.v2, s);
    g.w = bessel_multiplied(&u.w, s);
    lq_norm_vec(&g, q)
}

/// `(int_0^T g(t)^p dt)^{1/p}` by composite trapezoid on `g^p`.
pub fn time_lp(times: &[f64], values: &[f64], p: f64) -> Result<f64> {
    check_exponent("p", p)?;
    if times.len() != values.len() {
        return Err(Error::SampleMismatch);
    }
    if times.len() < 2 {
        return Err(Error::TooFewPoints { need: 2, got: times.len() });
    }
    let mut acc = 0.0;
    for i in 1..times.len() {
        let h = times[i] - times[i - 1];
        if h <= 0.0 {
            return Err(Error::Config("sample times must be strictly increasing".into()));
        }
        acc += 0.5 * h * (values[i - 1].powf(p) + values[i].powf(p));
    }
    Ok(acc.powf(1.0 / p))
}

/// The three E1 integrands of one sample: `H^{2,q}` and `Lq` of the field,
/// `Lq` of its tendency.
pub fn sample_integrands(u: &VelocityField, du: &VelocityField, q: f64) -> [f64; 3] {
    [bessel_norm_vec(u, 2.0, q), lq_norm_vec(u, q), lq_norm_vec(du, q)]
}

/// Assemble a `SpaceTimeNorm` from per-sample integrand triples.
pub fn aggregate_integrands(times: &[f64], g: &[[f64; 3]], p: f64) -> Result<SpaceTimeNorm> {
    if times.len() != g.len() {
        return Err(Error::SampleMismatch);
    }
    if times.len() == 1 {
        // A single sample spans a degenerate time interval.
        check_exponent("p", p)?;
        return Ok(SpaceTimeNorm::ZERO);
    }
    let pick = |k: usize| g.iter().map(|row| row[k]).collect::<Vec<_>>();
    Ok(SpaceTimeNorm {
        h2q: time_lp(times, &pick(0), p)?,
        lq: time_lp(times, &pick(1), p)?,
        dt: time_lp(times, &pick(2), p)?,
    })
}

/// Evaluate the maximal-regularity norm of a sampled trajectory.
pub fn e1_norm(traj: &Trajectory, p: f64, q: f64) -> Result<SpaceTimeNorm> {
    check_exponent("q", q)?;
    let g: Vec<[f64; 3]> = traj
        .fields()
        .iter()
        .zip(traj.tendencies().iter())
        .map(|(u, du)| sample_integrands(u, du, q))
        .collect();
    aggregate_integrands(traj.times(), &g, p)
}

/// Scaled difference of two samples: horizontal components subtracted as
/// they are, vertical difference multiplied by eps.
pub fn scaled_difference(ns: &VelocityField, pe: &VelocityField, eps: f64) -> VelocityField {
    let mut d = ns.sub(pe);
    d.w.scale(eps);
    d
}

/// The convergence functional: E1 norm of `(v_ns - v_pe, eps (w_ns - w_pe))`
/// with tendencies differenced and scaled the same way.
pub fn x_eps(
    traj_ns: &Trajectory,
    traj_pe: &Trajectory,
    eps: AnisotropyParam,
    p: f64,
    q: f64,
) -> Result<f64> {
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    if traj_ns.len() != traj_pe.len() {
        return Err(Error::SampleMismatch);
    }
    let same_time = traj_ns
        .times()
        .iter()
        .zip(traj_pe.times())
        .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    if !same_time {
        return Err(Error::SampleMismatch);
    }
    if !crate::grid::same_grid(traj_ns.grid(), traj_pe.grid()) {
        return Err(Error::GridMismatch);
    }
    let e = eps.value();
    let mut g = Vec::with_capacity(traj_ns.len());
    for i in 0..traj_ns.len() {
        let d = scaled_difference(&traj_ns.fields()[i], &traj_pe.fields()[i], e);
        let dd = scaled_difference(&traj_ns.tendencies()[i], &traj_pe.tendencies()[i], e);
        g.push(sample_integrands(&d, &dd, q));
    }
    Ok(aggregate_integrands(traj_ns.times(), &g, p)?.value())
}
