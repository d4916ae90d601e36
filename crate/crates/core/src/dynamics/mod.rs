//! Time integration of the two systems.
//!
//! After constraint projection both systems take the form
//! `du/dt = N(u) + lap u` with `N` the projected advection (plus any
//! forcing). Diffusion is integrated by the implicit trapezoid rule,
//! exactly solvable per mode; `N` by two-step Adams-Bashforth
//! extrapolation, with an implicit-Euler/explicit-Euler first step. The
//! combination is second order and unconditionally stable in the
//! diffusive part, which matters because the sweep holds `dt` fixed
//! across eps while viscosity stays at unity.
//!
//! The anisotropic state keeps the physical velocity `(v1, v2, w)`. The
//! scaled pair `(v1, v2, eps w)` is divergence-free in the scaled sense
//! exactly when the physical field is divergence-free in the plain sense,
//! so the projector is applied conjugated by the vertical scaling and one
//! residual serves both bookkeepings. The hydrostatic state is the
//! horizontal pair alone; `w` is reconstructed on demand and the pressure
//! has no vertical structure by representation.

pub mod diagnostics;
pub mod mms;

use std::sync::Arc;

use ndarray::Zip;

use crate::fields::{
    hydrostatic_w, project_barotropic, Advector, HorizontalField, VelocityField,
};
use crate::grid::SpectralGrid;
use crate::projection::{leray_eps, solve_pe_pressure, AnisotropyParam};
use crate::spectral::{Parity, ScalarField};
use crate::{Error, Result};

/// Which system a state evolves under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum System {
    /// Anisotropic system at a fixed aspect parameter.
    Ns(AnisotropyParam),
    /// The hydrostatic limit system.
    Pe,
}

impl System {
    /// The eps recorded on trajectories; 0 tags the limit system.
    pub fn eps_tag(self) -> f64 {
        match self {
            System::Ns(eps) => eps.value(),
            System::Pe => 0.0,
        }
    }
}

/// Fixed-scheme stepper parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Trajectory sampling interval in steps; t = 0 and t = t_end are
    /// always included.
    pub sample_stride: usize,
    /// Transport on/off; disabling it leaves the linear (Stokes) part,
    /// used by diagnostics and the linearized-equality check.
    pub advection: bool,
}

impl StepperConfig {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        let cfg = Self { dt, t_end, sample_stride: 1, advection: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stride(mut self, sample_stride: usize) -> Self {
        self.sample_stride = sample_stride;
        self
    }

    pub fn without_advection(mut self) -> Self {
        self.advection = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("horizon must be >= 0, got {}", self.t_end)));
        }
        if self.sample_stride == 0 {
            return Err(Error::Config("sample_stride must be >= 1".into()));
        }
        self.n_steps().map(|_| ())
    }

    /// Number of steps to reach the horizon; `t_end` must be an integer
    /// multiple of `dt` so sample times match across runs.
    pub fn n_steps(&self) -> Result<usize> {
        let ratio = self.t_end / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-6 * (1.0 + ratio.abs()) {
            return Err(Error::Config(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// `lap f`: per-mode multiplication by `-|kappa|^2`.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid().clone();
    let mut out = f.clone();
    for ((i, j, l), c) in out.coeffs_mut().indexed_iter_mut() {
        let [kx, ky, kz] = grid.kappa(i, j, l);
        *c *= -(kx * kx + ky * ky + kz * kz);
    }
    out
}

/// Apply the anisotropic Leray projector to a physical-component field:
/// scale the vertical part by eps, project, scale back.
pub fn project_ns(u: &mut VelocityField, eps: AnisotropyParam) {
    let e = eps.value();
    u.w.scale(e);
    leray_eps(u, eps);
    u.w.scale(1.0 / e);
}

/// Additional right-hand-side term, evaluated at the current time.
pub trait Forcing {
    fn eval(&self, t: f64) -> VelocityField;
}

/// State of the anisotropic system: physical velocity plus multistep
/// memory. Construction enforces the constraint and parity pattern.
#[derive(Debug, Clone)]
pub struct NsState {
    pub u: VelocityField,
    pub eps: AnisotropyParam,
    pub t: f64,
    prev: Option<VelocityField>,
}

impl NsState {
    pub fn new(mut u: VelocityField, eps: AnisotropyParam) -> Self {
        project_ns(&mut u, eps);
        u.parity_symmetrize();
        Self { u, eps, t: 0.0, prev: None }
    }
}

/// State of the limit system: the horizontal pair plus multistep memory.
#[derive(Debug, Clone)]
pub struct PeState {
    pub v1: ScalarField,
    pub v2: ScalarField,
    pub t: f64,
    prev: Option<(ScalarField, ScalarField)>,
}

impl PeState {
    pub fn new(mut v1: ScalarField, mut v2: ScalarField) -> Self {
        project_barotropic(&mut v1, &mut v2);
        v1.parity_symmetrize(Parity::Even);
        v2.parity_symmetrize(Parity::Even);
        Self { v1, v2, t: 0.0, prev: None }
    }

    /// Keep the horizontal components; `w` is rebuilt hydrostatically.
    pub fn from_velocity(u: &VelocityField) -> Self {
        Self::new(u.v1.clone(), u.v2.clone())
    }

    /// The full velocity with the reconstructed vertical component.
    pub fn velocity(&self) -> Result<VelocityField> {
        let w = hydrostatic_w(&self.v1, &self.v2)?;
        Ok(VelocityField::new(self.v1.clone(), self.v2.clone(), w))
    }
}

/// Explicit (non-diffusive) tendency of the anisotropic system.
fn ns_explicit(
    u: &VelocityField,
    eps: AnisotropyParam,
    advection: bool,
    forcing: Option<&dyn Forcing>,
    t: f64,
) -> VelocityField {
    let grid = u.grid().clone();
    let mut n = VelocityField::zero(grid);
    if advection {
        let adv = Advector::new(u);
        n.v1 = adv.apply(&u.v1);
        n.v2 = adv.apply(&u.v2);
        n.w = adv.apply(&u.w);
        n.scale(-1.0);
    }
    if let Some(f) = forcing {
        n.add_scaled(&f.eval(t), 1.0);
    }
    project_ns(&mut n, eps);
    n
}

/// Explicit tendency of the limit system: advection, forcing, and the
/// planar pressure gradient, barotropically projected.
fn pe_explicit(
    v1: &ScalarField,
    v2: &ScalarField,
    advection: bool,
    forcing: Option<&dyn Forcing>,
    t: f64,
) -> Result<(ScalarField, ScalarField)> {
    let grid = v1.grid().clone();
    let w = hydrostatic_w(v1, v2)?;
    let u = VelocityField::new(v1.clone(), v2.clone(), w);

    let mut n1 = ScalarField::zero(grid.clone(), Parity::Even);
    let mut n2 = ScalarField::zero(grid.clone(), Parity::Even);
    if advection {
        let adv = Advector::new(&u);
        n1 = adv.apply(v1);
        n1.scale(-1.0);
        n2 = adv.apply(v2);
        n2.scale(-1.0);
    }
    if let Some(f) = forcing {
        let fu = f.eval(t);
        n1.add_scaled(&fu.v1, 1.0);
        n2.add_scaled(&fu.v2, 1.0);
    }

    // Pressure source: depth integral of (advection - forcing) = -n here,
    // twice the horizontal-mean plane on a cell of height 2.
    let [nx, ny, _] = grid.shape();
    let mut src = HorizontalField::zero(grid);
    for i in 0..nx {
        for j in 0..ny {
            src.x.coeffs_mut()[[i, j]] = -2.0 * n1.coeffs()[[i, j, 0]];
            src.y.coeffs_mut()[[i, j]] = -2.0 * n2.coeffs()[[i, j, 0]];
        }
    }
    let p = solve_pe_pressure(&src);
    n1.add_scaled(&p.derivative(0).embed(), -1.0);
    n2.add_scaled(&p.derivative(1).embed(), -1.0);

    project_barotropic(&mut n1, &mut n2);
    Ok((n1, n2))
}

fn add_diffusion(n: &VelocityField, u: &VelocityField) -> VelocityField {
    let mut du = n.clone();
    du.v1.add_scaled(&laplacian(&u.v1), 1.0);
    du.v2.add_scaled(&laplacian(&u.v2), 1.0);
    du.w.add_scaled(&laplacian(&u.w), 1.0);
    du
}

/// Full right side of the anisotropic system at the current state.
pub fn ns_rhs(state: &NsState) -> VelocityField {
    let n = ns_explicit(&state.u, state.eps, true, None, state.t);
    add_diffusion(&n, &state.u)
}

/// Full right side of the limit system at the current state.
pub fn pe_rhs(state: &PeState) -> Result<(ScalarField, ScalarField)> {
    let (n1, n2) = pe_explicit(&state.v1, &state.v2, true, None, state.t)?;
    let mut d1 = n1;
    d1.add_scaled(&laplacian(&state.v1), 1.0);
    let mut d2 = n2;
    d2.add_scaled(&laplacian(&state.v2), 1.0);
    Ok((d1, d2))
}

/// One implicit-trapezoid/extrapolated-advection update of a component.
fn advance_component(
    u: &mut ScalarField,
    n_cur: &ScalarField,
    n_prev: Option<&ScalarField>,
    dt: f64,
) {
    let grid = u.grid().clone();
    let (kx, ky, kz) = (grid.kx().to_vec(), grid.ky().to_vec(), grid.kz().to_vec());
    match n_prev {
        Some(np) => {
            Zip::indexed(u.coeffs_mut())
                .and(n_cur.coeffs())
                .and(np.coeffs())
                .for_each(|(i, j, l), c, n, p| {
                    let k2 = kx[i] * kx[i] + ky[j] * ky[j] + kz[l] * kz[l];
                    let a = 0.5 * dt * k2;
                    *c = ((1.0 - a) * *c + dt * (1.5 * n - 0.5 * p)) / (1.0 + a);
                });
        }
        None => {
            Zip::indexed(u.coeffs_mut()).and(n_cur.coeffs()).for_each(|(i, j, l), c, n| {
                let k2 = kx[i] * kx[i] + ky[j] * ky[j] + kz[l] * kz[l];
                *c = (*c + dt * n) / (1.0 + dt * k2);
            });
        }
    }
}

fn advance_ns(state: &mut NsState, n: VelocityField, dt: f64) -> Result<()> {
    advance_component(&mut state.u.v1, &n.v1, state.prev.as_ref().map(|p| &p.v1), dt);
    advance_component(&mut state.u.v2, &n.v2, state.prev.as_ref().map(|p| &p.v2), dt);
    advance_component(&mut state.u.w, &n.w, state.prev.as_ref().map(|p| &p.w), dt);
    project_ns(&mut state.u, state.eps);
    state.u.parity_symmetrize();
    state.t += dt;
    state.prev = Some(n);
    if !state.u.is_finite() {
        return Err(Error::NonFinite { t: state.t });
    }
    Ok(())
}

fn advance_pe(state: &mut PeState, n: (ScalarField, ScalarField), dt: f64) -> Result<()> {
    advance_component(&mut state.v1, &n.0, state.prev.as_ref().map(|p| &p.0), dt);
    advance_component(&mut state.v2, &n.1, state.prev.as_ref().map(|p| &p.1), dt);
    project_barotropic(&mut state.v1, &mut state.v2);
    state.v1.parity_symmetrize(Parity::Even);
    state.v2.parity_symmetrize(Parity::Even);
    state.t += dt;
    state.prev = Some(n);
    if !(state.v1.is_finite() && state.v2.is_finite()) {
        return Err(Error::NonFinite { t: state.t });
    }
    Ok(())
}

/// One scheme step of the anisotropic system.
pub fn step_ns(
    state: &mut NsState,
    cfg: &StepperConfig,
    forcing: Option<&dyn Forcing>,
) -> Result<()> {
    let n = ns_explicit(&state.u, state.eps, cfg.advection, forcing, state.t);
    advance_ns(state, n, cfg.dt)
}

/// One scheme step of the limit system.
pub fn step_pe(
    state: &mut PeState,
    cfg: &StepperConfig,
    forcing: Option<&dyn Forcing>,
) -> Result<()> {
    let n = pe_explicit(&state.v1, &state.v2, cfg.advection, forcing, state.t)?;
    advance_pe(state, n, cfg.dt)
}

/// Time-sampled fields and tendencies; the carrier of space-time norms.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    fields: Vec<VelocityField>,
    tendencies: Vec<VelocityField>,
    eps: f64,
}

impl Trajectory {
    pub fn from_parts(
        times: Vec<f64>,
        fields: Vec<VelocityField>,
        tendencies: Vec<VelocityField>,
        eps: f64,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::TooFewPoints { need: 1, got: 0 });
        }
        if times.len() != fields.len() || times.len() != tendencies.len() {
            return Err(Error::SampleMismatch);
        }
        if times[0] != 0.0 {
            return Err(Error::Config("trajectory must start at t = 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sample times must be strictly increasing".into()));
        }
        Ok(Self { times, fields, tendencies, eps })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[VelocityField] {
        &self.fields
    }

    pub fn tendencies(&self) -> &[VelocityField] {
        &self.tendencies
    }

    /// The aspect parameter of the generating run; 0 for the limit system.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.fields[0].grid()
    }

    /// The prefix with sample times `<= t_max`.
    pub fn truncated(&self, t_max: f64) -> Result<Self> {
        let keep = self.times.iter().take_while(|&&t| t <= t_max).count();
        Self::from_parts(
            self.times[..keep].to_vec(),
            self.fields[..keep].to_vec(),
            self.tendencies[..keep].to_vec(),
            self.eps,
        )
    }
}

/// Integrate and hand every sample `(index, t, field, tendency)` to the
/// sink instead of storing a trajectory. The sink sees t = 0 and
/// t = t_end always, interior samples every `sample_stride` steps.
pub fn integrate_with(
    u0: &VelocityField,
    system: System,
    cfg: &StepperConfig,
    forcing: Option<&dyn Forcing>,
    sink: &mut dyn FnMut(usize, f64, &VelocityField, &VelocityField) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    let n_steps = cfg.n_steps()?;
    let mut sample_idx = 0;
    match system {
        System::Ns(eps) => {
            let mut state = NsState::new(u0.clone(), eps);
            for step in 0..=n_steps {
                let n = ns_explicit(&state.u, eps, cfg.advection, forcing, state.t);
                if step % cfg.sample_stride == 0 || step == n_steps {
                    let du = add_diffusion(&n, &state.u);
                    sink(sample_idx, state.t, &state.u, &du)?;
                    sample_idx += 1;
                }
                if step == n_steps {
                    break;
                }
                advance_ns(&mut state, n, cfg.dt)?;
                // Snap to the exact multiple to keep sample times
                // bit-identical across runs and systems.
                state.t = (step + 1) as f64 * cfg.dt;
            }
        }
        System::Pe => {
            let mut state = PeState::from_velocity(u0);
            for step in 0..=n_steps {
                let n = pe_explicit(&state.v1, &state.v2, cfg.advection, forcing, state.t)?;
                if step % cfg.sample_stride == 0 || step == n_steps {
                    let u = state.velocity()?;
                    let mut d1 = n.0.clone();
                    d1.add_scaled(&laplacian(&state.v1), 1.0);
                    let mut d2 = n.1.clone();
                    d2.add_scaled(&laplacian(&state.v2), 1.0);
                    let dw = hydrostatic_w(&d1, &d2)?;
                    let du = VelocityField::new(d1, d2, dw);
                    sink(sample_idx, state.t, &u, &du)?;
                    sample_idx += 1;
                }
                if step == n_steps {
                    break;
                }
                advance_pe(&mut state, n, cfg.dt)?;
                state.t = (step + 1) as f64 * cfg.dt;
            }
        }
    }
    Ok(())
}

/// Integrate under an extra forcing term and collect the trajectory.
pub fn integrate_forced(
    u0: &VelocityField,
    system: System,
    cfg: &StepperConfig,
    forcing: Option<&dyn Forcing>,
) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut fields = Vec::new();
    let mut tendencies = Vec::new();
    integrate_with(u0, system, cfg, forcing, &mut |_, t, u, du| {
        times.push(t);
        fields.push(u.clone());
        tendencies.push(du.clone());
        Ok(())
    })?;
    Trajectory::from_parts(times, fields, tendencies, system.eps_tag())
}

/// Integrate the unforced system and collect the trajectory.
pub fn integrate(u0: &VelocityField, system: System, cfg: &StepperConfig) -> Result<Trajectory> {
    integrate_forced(u0, system, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_initial_data;
    use crate::grid::{build_grid, GridSpec};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn grid16() -> Arc<SpectralGrid> {
        build_grid(GridSpec::new(16, 16, 16)).unwrap()
    }

    fn seeded(grid: &Arc<SpectralGrid>, seed: u64) -> VelocityField {
        make_initial_data(grid, seed, 4, 2.5, 1.0).unwrap()
    }

    #[test]
    fn stepper_config_validation() {
        assert!(StepperConfig::new(1e-3, 0.1).is_ok());
        assert!(StepperConfig::new(0.0, 0.1).is_err());
        assert!(StepperConfig::new(-1e-3, 0.1).is_err());
        assert!(StepperConfig::new(1e-3, -0.1).is_err());
        // Horizon must divide evenly.
        assert!(StepperConfig::new(3e-3, 0.01).is_err());
        assert_eq!(StepperConfig::new(1e-3, 0.1).unwrap().n_steps().unwrap(), 100);
        let mut cfg = StepperConfig::new(1e-3, 0.1).unwrap();
        cfg.sample_stride = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let g = grid16();
        let zero = VelocityField::zero(g);
        let cfg = StepperConfig::new(1e-2, 0.05).unwrap();
        let ns = integrate(&zero, System::Ns(AnisotropyParam::new(0.5).unwrap()), &cfg).unwrap();
        let pe = integrate(&zero, System::Pe, &cfg).unwrap();
        for traj in [ns, pe] {
            for u in traj.fields() {
                assert_eq!(u.v1.coeff_linf(), 0.0);
                assert_eq!(u.w.coeff_linf(), 0.0);
            }
        }
    }

    #[test]
    fn rhs_of_zero_is_zero() {
        let g = grid16();
        let state = NsState::new(VelocityField::zero(g.clone()), AnisotropyParam::isotropic());
        assert_eq!(ns_rhs(&state).v1.coeff_linf(), 0.0);
        let pe = PeState::new(
            ScalarField::zero(g.clone(), Parity::Even),
            ScalarField::zero(g, Parity::Even),
        );
        let (d1, d2) = pe_rhs(&pe).unwrap();
        assert_eq!(d1.coeff_linf(), 0.0);
        assert_eq!(d2.coeff_linf(), 0.0);
    }

    #[test]
    fn diffusion_only_rhs_is_minus_k2() {
        // Without advection the explicit part vanishes and the full right
        // side of a single mode is -|kappa|^2 u.
        let g = grid16();
        let mut u = VelocityField::zero(g);
        u.v1.coeffs_mut()[[1, 0, 1]] = Complex64::new(0.3, 0.1);
        u.v1.coeffs_mut()[[15, 0, 15]] = Complex64::new(0.3, -0.1);
        let n = ns_explicit(&u, AnisotropyParam::isotropic(), false, None, 0.0);
        let du = add_diffusion(&n, &u);
        let k2 = 4.0 * PI * PI + PI * PI;
        let want = Complex64::new(0.3, 0.1) * (-k2);
        assert!((du.v1.coeffs()[[1, 0, 1]] - want).norm() < 1e-12);

        let (p1, _) = pe_explicit(&u.v1, &u.v2, false, None, 0.0).unwrap();
        assert_eq!(p1.coeff_linf(), 0.0);
    }

    #[test]
    fn ns_rhs_matches_dense_convolution_oracle() {
        // Full right side against an independent assembly: dense
        // convolution for the advection, explicit per-mode anisotropic
        // projection, and -|kappa|^2 diffusion, at 8^3 where the retained
        // band is alias-free.
        let g = build_grid(GridSpec::new(8, 8, 8)).unwrap();
        let u = make_initial_data(&g, 31, 2, 2.0, 1.0).unwrap();
        let eps = AnisotropyParam::new(0.3).unwrap();
        let state = NsState::new(u.clone(), eps);
        let got = ns_rhs(&state);

        let n = 8i64;
        let wrap = |s: i64| s.rem_euclid(n) as usize;
        let comp = |f: &ScalarField, i: usize, j: usize, l: usize| f.coeffs()[[i, j, l]];
        // Dense convolution of u . grad f over the +-2 band.
        let adv_dense = |f: &ScalarField, i: i64, j: i64, l: i64| {
            let mut acc = Complex64::new(0.0, 0.0);
            for a in -2i64..=2 {
                for b in -2i64..=2 {
                    for c in -2i64..=2 {
                        let (p, q, r) = (i - a, j - b, l - c);
                        if p.abs() > 2 || q.abs() > 2 || r.abs() > 2 {
                            continue;
                        }
                        let grad = [
                            Complex64::new(0.0, 2.0 * PI * p as f64),
                            Complex64::new(0.0, 2.0 * PI * q as f64),
                            Complex64::new(0.0, PI * r as f64),
                        ];
                        let fv = comp(f, wrap(p), wrap(q), wrap(r));
                        let uv = [
                            comp(&u.v1, wrap(a), wrap(b), wrap(c)),
                            comp(&u.v2, wrap(a), wrap(b), wrap(c)),
                            comp(&u.w, wrap(a), wrap(b), wrap(c)),
                        ];
                        acc += (uv[0] * grad[0] + uv[1] * grad[1] + uv[2] * grad[2]) * fv;
                    }
                }
            }
            acc
        };
        let scale = 1.0
            + got.v1.coeff_linf().max(got.v2.coeff_linf()).max(got.w.coeff_linf());
        for i in -2i64..=2 {
            for j in -2i64..=2 {
                for l in -2i64..=2 {
                    let raw = [
                        -adv_dense(&state.u.v1, i, j, l),
                        -adv_dense(&state.u.v2, i, j, l),
                        -adv_dense(&state.u.w, i, j, l),
                    ];
                    // Anisotropic projection of the scaled components.
                    let ke = [
                        2.0 * PI * i as f64,
                        2.0 * PI * j as f64,
                        PI * l as f64 / eps.value(),
                    ];
                    let n2 = ke[0] * ke[0] + ke[1] * ke[1] + ke[2] * ke[2];
                    let scaled = [raw[0], raw[1], raw[2] * eps.value()];
                    let mut proj = scaled;
                    if n2 > 0.0 {
                        let dot = (ke[0] * scaled[0] + ke[1] * scaled[1] + ke[2] * scaled[2]) / n2;
                        for (p, k) in proj.iter_mut().zip(ke.iter()) {
                            *p -= k * dot;
                        }
                    }
                    let (iw, jw, lw) = (wrap(i), wrap(j), wrap(l));
                    let k2 = (2.0 * PI * i as f64).powi(2)
                        + (2.0 * PI * j as f64).powi(2)
                        + (PI * l as f64).powi(2);
                    let want = [
                        proj[0] - k2 * comp(&state.u.v1, iw, jw, lw),
                        proj[1] - k2 * comp(&state.u.v2, iw, jw, lw),
                        proj[2] / eps.value() - k2 * comp(&state.u.w, iw, jw, lw),
                    ];
                    let have = [
                        comp(&got.v1, iw, jw, lw),
                        comp(&got.v2, iw, jw, lw),
                        comp(&got.w, iw, jw, lw),
                    ];
                    for (h, w) in have.iter().zip(want.iter()) {
                        assert!((h - w).norm() < 1e-12 * scale, "mode ({i},{j},{l})");
                    }
                }
            }
        }
    }

    #[test]
    fn heat_kernel_temporal_order_two() {
        // Pure diffusion of one mode: amplitude after time T is
        // exp(-|kappa|^2 T); the trapezoid rule converges at order two.
        let g = grid16();
        let k2 = 4.0 * PI * PI + PI * PI;
        let t_end = 0.02;
        let mut errors = Vec::new();
        for dt in [2e-3, 1e-3, 5e-4] {
            // cos(2 pi x) cos(pi z) e2: kappa . u = 0, so the projection
            // leaves the mode alone and the decay is a clean heat kernel.
            let mut u = VelocityField::zero(g.clone());
            for (i, l) in [(1, 1), (1, 15), (15, 1), (15, 15)] {
                u.v2.coeffs_mut()[[i, 0, l]] = Complex64::new(0.25, 0.0);
            }
            let cfg = StepperConfig::new(dt, t_end).unwrap().without_advection();
            let traj =
                integrate(&u, System::Ns(AnisotropyParam::isotropic()), &cfg).unwrap();
            let last = traj.fields().last().unwrap();
            let got = last.v2.coeffs()[[1, 0, 1]].re;
            errors.push((got - 0.25 * (-k2 * t_end).exp()).abs());
        }
        let order1 = (errors[0] / errors[1]).log2();
        let order2 = (errors[1] / errors[2]).log2();
        assert!(
            (1.8..=2.2).contains(&order1) && (1.8..=2.2).contains(&order2),
            "orders {order1:.3}, {order2:.3}"
        );
    }

    #[test]
    fn trajectory_sampling_includes_endpoints() {
        let g = grid16();
        let u = seeded(&g, 5);
        let cfg = StepperConfig::new(1e-3, 0.01).unwrap().with_stride(3);
        let traj = integrate(&u, System::Pe, &cfg).unwrap();
        // Steps 0, 3, 6, 9 plus the forced final step 10.
        let want: Vec<f64> = [0.0, 3.0, 6.0, 9.0, 10.0].iter().map(|s| s * 1e-3).collect();
        assert_eq!(traj.times(), want.as_slice());
        let zero_t = StepperConfig::new(1e-3, 0.0).unwrap();
        let single = integrate(&u, System::Pe, &zero_t).unwrap();
        assert_eq!(single.times(), &[0.0]);
    }

    #[test]
    fn constraints_hold_along_both_runs() {
        let g = grid16();
        let u = seeded(&g, 11);
        let cfg = StepperConfig::new(1e-3, 0.03).unwrap().with_stride(5);
        let eps = AnisotropyParam::new(0.1).unwrap();
        let ns = integrate(&u, System::Ns(eps), &cfg).unwrap();
        for s in ns.fields() {
            assert!(s.divergence_residual() < 1e-10);
            assert!(s.parity_violation() < 1e-10);
        }
        let pe = integrate(&u, System::Pe, &cfg).unwrap();
        for s in pe.fields() {
            assert!(crate::fields::barotropic_divergence_residual(&s.v1, &s.v2) < 1e-10);
            assert!(s.parity_violation() < 1e-10);
        }
    }

    #[test]
    fn stored_tendency_matches_centered_difference() {
        // The sampled tendency is the exact semi-discrete right side; the
        // centered difference of the discrete path agrees to O(dt^2), with
        // constants set by the stiff tail. Checking that the mismatch drops
        // fourfold under halving pins the order without guessing constants.
        let g = grid16();
        let u = seeded(&g, 2);
        let mismatch = |dt: f64, mid: usize| -> f64 {
            let cfg = StepperConfig::new(dt, 8e-3).unwrap();
            let traj = integrate(&u, System::Pe, &cfg).unwrap();
            let mut fd = traj.fields()[mid + 1].sub(&traj.fields()[mid - 1]);
            fd.scale(1.0 / (2.0 * dt));
            let du = &traj.tendencies()[mid];
            let num = fd.sub(du);
            let err = num.v1.coeff_l2() + num.v2.coeff_l2() + num.w.coeff_l2();
            let den = du.v1.coeff_l2() + du.v2.coeff_l2() + du.w.coeff_l2();
            err / den
        };
        // Both probes sit at t = 4e-3.
        let coarse = mismatch(4e-4, 10);
        let fine = mismatch(2e-4, 20);
        assert!(coarse < 1e-2, "relative tendency mismatch {coarse}");
        let ratio = coarse / fine;
        assert!((3.0..=5.5).contains(&ratio), "halving ratio {ratio}");
    }

    #[test]
    fn linearized_runs_coincide_for_every_eps() {
        // With transport off the v-equations of the two systems are the
        // same heat flow and the projections act trivially, so the full
        // velocities agree for any eps.
        let g = grid16();
        let u = seeded(&g, 19);
        let cfg = StepperConfig::new(1e-3, 0.02).unwrap().without_advection();
        let pe = integrate(&u, System::Pe, &cfg).unwrap();
        for eps_v in [1.0, 0.2, 0.01] {
            let eps = AnisotropyParam::new(eps_v).unwrap();
            let ns = integrate(&u, System::Ns(eps), &cfg).unwrap();
            for (a, b) in ns.fields().iter().zip(pe.fields()) {
                let d = a.sub(b);
                let err = d.v1.coeff_linf().max(d.v2.coeff_linf()).max(d.w.coeff_linf());
                assert!(err < 1e-12, "eps {eps_v}: linearized mismatch {err}");
            }
        }
    }

    #[test]
    fn isotropic_run_matches_independent_reference() {
        // eps = 1 against a self-contained reference integrator with its
        // own classical Leray projector.
        let g = grid16();
        let u0 = seeded(&g, 23);
        let dt = 1e-3;
        let n_steps = 100;
        let cfg = StepperConfig::new(dt, dt * n_steps as f64).unwrap().with_stride(10);
        let traj =
            integrate(&u0, System::Ns(AnisotropyParam::isotropic()), &cfg).unwrap();

        let leray_iso = |f: &mut VelocityField| {
            let grid = f.grid().clone();
            let [nx, ny, nz] = grid.shape();
            for i in 0..nx {
                for j in 0..ny {
                    for l in 0..nz {
                        let [kx, ky, kz] = grid.kappa(i, j, l);
                        let n2 = kx * kx + ky * ky + kz * kz;
                        if n2 == 0.0 {
                            continue;
                        }
                        let a = f.v1.coeffs()[[i, j, l]];
                        let b = f.v2.coeffs()[[i, j, l]];
                        let c = f.w.coeffs()[[i, j, l]];
                        let dot = (kx * a + ky * b + kz * c) / n2;
                        f.v1.coeffs_mut()[[i, j, l]] = a - kx * dot;
                        f.v2.coeffs_mut()[[i, j, l]] = b - ky * dot;
                        f.w.coeffs_mut()[[i, j, l]] = c - kz * dot;
                    }
                }
            }
        };
        let mut state = u0.clone();
        leray_iso(&mut state);
        state.parity_symmetrize();
        let mut prev: Option<VelocityField> = None;
        let mut sample = 0usize;
        for step in 0..=n_steps {
            if step % 10 == 0 || step == n_steps {
                let d = state.sub(&traj.fields()[sample]);
                let err = d.v1.coeff_linf().max(d.v2.coeff_linf()).max(d.w.coeff_linf());
                assert!(err < 1e-12, "step {step}: isotropic mismatch {err}");
                sample += 1;
            }
            if step == n_steps {
                break;
            }
            let adv = Advector::new(&state);
            let mut n = VelocityField::zero(g.clone());
            n.v1 = adv.apply(&state.v1);
            n.v2 = adv.apply(&state.v2);
            n.w = adv.apply(&state.w);
            n.scale(-1.0);
            leray_iso(&mut n);
            advance_component(&mut state.v1, &n.v1, prev.as_ref().map(|p| &p.v1), dt);
            advance_component(&mut state.v2, &n.v2, prev.as_ref().map(|p| &p.v2), dt);
            advance_component(&mut state.w, &n.w, prev.as_ref().map(|p| &p.w), dt);
            leray_iso(&mut state);
            state.parity_symmetrize();
            prev = Some(n);
        }
        assert_eq!(sample, traj.len());
    }

    #[test]
    fn unstable_dt_reports_nonfinite() {
        // Far above the advective stability limit the explicit part blows
        // up in finite time and the failure carries its time stamp.
        let g = grid16();
        let mut u = seeded(&g, 3);
        u.scale(2e4);
        let cfg = StepperConfig::new(0.5, 100.0).unwrap().with_stride(10);
        match integrate(&u, System::Ns(AnisotropyParam::isotropic()), &cfg) {
            Err(Error::NonFinite { t }) => assert!(t > 0.0 && t <= 100.0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_from_parts_validation() {
        let g = grid16();
        let z = || VelocityField::zero(g.clone());
        assert!(Trajectory::from_parts(vec![], vec![], vec![], 0.0).is_err());
        assert!(Trajectory::from_parts(vec![0.0], vec![z()], vec![], 0.0).is_err());
        assert!(Trajectory::from_parts(vec![0.1], vec![z()], vec![z()], 0.0).is_err());
        assert!(
            Trajectory::from_parts(vec![0.0, 0.0], vec![z(), z()], vec![z(), z()], 0.0).is_err()
        );
        let ok = Trajectory::from_parts(vec![0.0, 0.5], vec![z(), z()], vec![z(), z()], 0.25);
        assert_eq!(ok.unwrap().eps(), 0.25);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let g = grid16();
        let u = seeded(&g, 9);
        let cfg = StepperConfig::new(1e-3, 0.01).unwrap().with_stride(2);
        let traj = integrate(&u, System::Pe, &cfg).unwrap();
        let cut = traj.truncated(0.0045).unwrap();
        assert_eq!(cut.times(), &[0.0, 0.002, 0.004]);
        assert_eq!(cut.eps(), 0.0);
    }

    #[test]
    fn pe_tendency_depth_mean_is_solenoidal() {
        // The planar pressure is built exactly so the depth-mean of the
        // tendency stays divergence-free.
        let g = grid16();
        let u = seeded(&g, 40);
        let state = PeState::from_velocity(&u);
        let (d1, d2) = pe_rhs(&state).unwrap();
        assert!(crate::fields::barotropic_divergence_residual(&d1, &d2) < 1e-10);
    }

    #[test]
    fn streamed_and_stored_integration_agree() {
        let g = grid16();
        let u = seeded(&g, 14);
        let cfg = StepperConfig::new(1e-3, 0.01).unwrap().with_stride(4);
        let eps = AnisotropyParam::new(0.3).unwrap();
        let traj = integrate(&u, System::Ns(eps), &cfg).unwrap();
        let mut count = 0usize;
        integrate_with(&u, System::Ns(eps), &cfg, None, &mut |i, t, f, df| {
            assert_eq!(t, traj.times()[i]);
            let d = f.sub(&traj.fields()[i]);
            assert_eq!(d.v1.coeff_linf(), 0.0);
            let dd = df.sub(&traj.tendencies()[i]);
            assert_eq!(dd.w.coeff_linf(), 0.0);
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, traj.len());
    }
}
