//! Difference-system diagnostics.
//!
//! The gap fields `V = v_ns - v_pe`, `W = w_ns - w_pe` satisfy a forced
//! system whose right sides are assembled here sample by sample; the gap
//! trajectory itself always comes from subtracting independently computed
//! runs, never from integrating the difference system.
//!
//! The vertical integral operator used by the `w`-equation residual is
//!
//! ```text
//! I(g)(z) = int_z^1 g - int_{-1}^z g + z int_{-1}^1 g
//! ```
//!
//! For band-limited periodic `g` this reduces exactly: writing `S` for the
//! per-mode antiderivative (coefficients `g_m / (i pi m)`, mean slot
//! empty) and `A = S + g0 z` for the true antiderivative,
//!
//! ```text
//! I(g)(z) = -2 A(z) + [A(1) + A(-1)] + z [A(1) - A(-1)]
//! ```
//!
//! and since `exp(i pi m z)` takes the same value at both ends,
//! `A(1) - A(-1) = 2 g0`, so every term linear in `z` cancels identically:
//! `I(g) = -2 S(z) + 2 c` with the constant `c = sum_m g_m (-1)^m / (i pi m)`.
//! No series expansion of the factor `z` is needed; the reduction is
//! exact, which keeps the operator band-limited and alias-free.

use num_complex::Complex64;

use super::{laplacian, Trajectory};
use crate::fields::{Advector, VelocityField};
use crate::grid::same_grid;
use crate::norms::lq_norm;
use crate::projection::AnisotropyParam;
use crate::spectral::ScalarField;
use crate::{Error, Result};

/// The exact vertical integral `I(g)` above.
pub fn vertical_integral(g: &ScalarField) -> ScalarField {
    let grid = g.grid().clone();
    let [nx, ny, nz] = grid.shape();
    let iz = grid.index_z().to_vec();
    let mut out = ScalarField::zero(grid.clone(), g.parity().flipped());
    for i in 0..nx {
        for j in 0..ny {
            let mut c = Complex64::new(0.0, 0.0);
            for l in 0..nz {
                let m = iz[l];
                if m == 0 || l == nz / 2 {
                    continue;
                }
                let km = std::f64::consts::PI * m as f64;
                // 1 / (i km) = -i / km.
                let s = g.coeffs()[[i, j, l]] * Complex64::new(0.0, -1.0 / km);
                out.coeffs_mut()[[i, j, l]] = -2.0 * s;
                let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                c += 2.0 * sign * s;
            }
            out.coeffs_mut()[[i, j, 0]] = c;
        }
    }
    out
}

/// The source `f = -(1/2) I(div_H (u . grad v))` of the heat equation
/// `dt w - lap w = f` satisfied by the reconstructed `w`.
///
/// Sign check: with `q = div_H (u . grad v)` and `Q(z) = int_{-1}^z q`,
/// integrating the horizontal momentum equation gives
/// `dt w - lap w = Q - (1+z) Q(1)/2`, while
/// `I(q)/2 = (1+z) Q(1)/2 - Q`; e.g. `q = cos(pi z)` (per horizontal
/// mode) forces `sin(pi z)/pi = -I(q)/2` on the right side.
pub fn w_heat_source(u: &VelocityField) -> ScalarField {
    let adv = Advector::new(u);
    let a1 = adv.apply(&u.v1);
    let a2 = adv.apply(&u.v2);
    let mut h = a1.derivative(0);
    h.add_scaled(&a2.derivative(1), 1.0);
    let mut f = vertical_integral(&h);
    f.scale(-0.5);
    f
}

/// `L^2` size of `dt w - lap w - f(v, w)` at one sample of a limit-system
/// trajectory; zero up to discretization error for a solution.
pub fn w_heat_residual(traj: &Trajectory, idx: usize) -> Result<f64> {
    if idx >= traj.len() {
        return Err(Error::SampleMismatch);
    }
    let u = &traj.fields()[idx];
    let du = &traj.tendencies()[idx];
    let f = w_heat_source(u);
    let mut r = du.w.clone();
    r.add_scaled(&laplacian(&u.w), -1.0);
    r.add_scaled(&f, -1.0);
    Ok(lq_norm(&r, 2.0))
}

/// Right sides of the difference system at one shared sample index:
/// `F_H = -U.grad v - u.grad V - U.grad V` componentwise, and the scaled
/// vertical part `eps F_z` with
/// `F_z = -U.grad w - u.grad W - U.grad W - dt w - u.grad w + lap w`,
/// where `U = u_ns - u_pe`, lower case is the limit solution, and `dt w`
/// comes from the stored tendency.
pub fn difference_forcing(
    traj_ns: &Trajectory,
    traj_pe: &Trajectory,
    idx: usize,
    eps: AnisotropyParam,
) -> Result<(ScalarField, ScalarField, ScalarField)> {
    if idx >= traj_ns.len() || idx >= traj_pe.len() {
        return Err(Error::SampleMismatch);
    }
    if !same_grid(traj_ns.grid(), traj_pe.grid()) {
        return Err(Error::GridMismatch);
    }
    let (t_ns, t_pe) = (traj_ns.times()[idx], traj_pe.times()[idx]);
    if (t_ns - t_pe).abs() > 1e-12 * (1.0 + t_ns.abs()) {
        return Err(Error::SampleMismatch);
    }

    let u = &traj_pe.fields()[idx];
    let du = &traj_pe.tendencies()[idx];
    let cap = traj_ns.fields()[idx].sub(u);

    let adv_u = Advector::new(u);
    let adv_cap = Advector::new(&cap);

    let mut f1 = adv_cap.apply(&u.v1);
    f1.add_scaled(&adv_u.apply(&cap.v1), 1.0);
    f1.add_scaled(&adv_cap.apply(&cap.v1), 1.0);
    f1.scale(-1.0);

    let mut f2 = adv_cap.apply(&u.v2);
    f2.add_scaled(&adv_u.apply(&cap.v2), 1.0);
    f2.add_scaled(&adv_cap.apply(&cap.v2), 1.0);
    f2.scale(-1.0);

    let mut fz = adv_cap.apply(&u.w);
    fz.add_scaled(&adv_u.apply(&cap.w), 1.0);
    fz.add_scaled(&adv_cap.apply(&cap.w), 1.0);
    fz.add_scaled(&du.w, 1.0);
    fz.add_scaled(&adv_u.apply(&u.w), 1.0);
    fz.scale(-1.0);
    fz.add_scaled(&laplacian(&u.w), 1.0);
    fz.scale(eps.value());

    Ok((f1, f2, fz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, StepperConfig, System};
    use crate::fields::make_initial_data;
    use crate::grid::{build_grid, GridSpec, SpectralGrid};
    use crate::spectral::Parity;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid16() -> Arc<SpectralGrid> {
        build_grid(GridSpec::new(16, 16, 16)).unwrap()
    }

    fn pure_z_mode(grid: &Arc<SpectralGrid>, m: usize, even: bool) -> ScalarField {
        // cos(pi m z) or sin(pi m z).
        let zs = grid.z_coords();
        let mut s = ndarray::Array3::<f64>::zeros(grid.shape());
        for ((_, _, l), v) in s.indexed_iter_mut() {
            let arg = PI * m as f64 * zs[l];
            *v = if even { arg.cos() } else { arg.sin() };
        }
        let parity = if even { Parity::Even } else { Parity::Odd };
        ScalarField::from_samples(grid.clone(), parity, s.view()).unwrap()
    }

    #[test]
    fn vertical_integral_of_cosine() {
        // I(cos(pi z)) = -2 sin(pi z) / pi; the even input has no
        // endpoint constant.
        let g = grid16();
        let out = vertical_integral(&pure_z_mode(&g, 1, true));
        let want = pure_z_mode(&g, 1, false);
        let mut diff = out.clone();
        diff.add_scaled(&want, 2.0 / PI);
        assert!(diff.coeff_linf() < 1e-13);
    }

    #[test]
    fn vertical_integral_of_sine() {
        // I(sin(pi z)) = (2 cos(pi z) + 2) / pi: the odd input feeds the
        // endpoint constant c.
        let g = grid16();
        let out = vertical_integral(&pure_z_mode(&g, 1, false));
        let mut want = pure_z_mode(&g, 1, true);
        want.scale(2.0 / PI);
        want.coeffs_mut()[[0, 0, 0]] += Complex64::new(2.0 / PI, 0.0);
        let diff = out.sub(&want);
        assert!(diff.coeff_linf() < 1e-13);
    }

    #[test]
    fn vertical_integral_matches_quadrature_oracle() {
        // Random band-limited g against dense trapezoid quadrature of the
        // three defining integrals, evaluated mode-exactly in z.
        let g = grid16();
        let f = make_initial_data(&g, 77, 4, 2.0, 1.0).unwrap().v1;
        let out = vertical_integral(&f);
        let fine = 4000usize;
        // Column under scrutiny: fixed (i, j), dense in z.
        let (i, j) = (2usize, 3usize);
        let eval = |field: &ScalarField, z: f64| -> Complex64 {
            let mut acc = Complex64::new(0.0, 0.0);
            let nz = field.grid().shape()[2];
            for l in 0..nz {
                let m = field.grid().index_z()[l];
                acc += field.coeffs()[[i, j, l]]
                    * Complex64::from_polar(1.0, PI * m as f64 * z);
            }
            acc
        };
        let h = 2.0 / fine as f64;
        let mut cumulative = vec![Complex64::new(0.0, 0.0); fine + 1];
        for s in 1..=fine {
            let z0 = -1.0 + (s - 1) as f64 * h;
            let z1 = -1.0 + s as f64 * h;
            cumulative[s] = cumulative[s - 1] + 0.5 * h * (eval(&f, z0) + eval(&f, z1));
        }
        let total = cumulative[fine];
        for (frac, z) in [(0.25, -0.5), (0.5, 0.0), (0.875, 0.75)] {
            let s = (frac * fine as f64) as usize;
            // int_z^1 - int_{-1}^z + z int_{-1}^1.
            let want = (total - cumulative[s]) - cumulative[s] + z * total;
            let got = eval(&out, z);
            assert!(
                (want - got).norm() < 1e-5,
                "z = {z}: quadrature {want}, operator {got}"
            );
        }
    }

    #[test]
    fn heat_residual_of_zero_is_zero() {
        let g = grid16();
        let zero = VelocityField::zero(g);
        let traj = Trajectory::from_parts(
            vec![0.0, 1.0],
            vec![zero.clone(), zero.clone()],
            vec![zero.clone(), zero],
            0.0,
        )
        .unwrap();
        assert_eq!(w_heat_residual(&traj, 0).unwrap(), 0.0);
        assert_eq!(w_heat_residual(&traj, 1).unwrap(), 0.0);
        assert!(w_heat_residual(&traj, 2).is_err());
    }

    #[test]
    fn heat_residual_sits_at_round_off_on_a_live_run() {
        // The sampled tendency reconstructs w from the horizontal
        // tendency, so the heat identity holds structurally: every
        // sample's residual is pure round-off, far below any
        // discretization error.
        let g = grid16();
        let u0 = make_initial_data(&g, 6, 4, 2.5, 0.8).unwrap();
        let cfg = StepperConfig::new(1e-3, 0.01).unwrap().with_stride(5);
        let traj = integrate(&u0, System::Pe, &cfg).unwrap();
        let size = 1.0 + crate::norms::lq_norm(&u0.w, 2.0);
        for idx in 0..traj.len() {
            let r = w_heat_residual(&traj, idx).unwrap();
            assert!(r < 1e-10 * size, "sample {idx}: residual {r:.3e}");
        }
    }

    #[test]
    fn difference_forcing_horizontal_vanishes_for_equal_runs() {
        let g = grid16();
        let u0 = make_initial_data(&g, 8, 4, 2.5, 1.0).unwrap();
        let cfg = StepperConfig::new(1e-3, 5e-3).unwrap().with_stride(5);
        let traj = integrate(&u0, System::Pe, &cfg).unwrap();
        let eps = AnisotropyParam::new(0.1).unwrap();
        let (f1, f2, fz) = difference_forcing(&traj, &traj, 1, eps).unwrap();
        assert_eq!(f1.coeff_linf(), 0.0);
        assert_eq!(f2.coeff_linf(), 0.0);
        // The vertical part keeps its limit-solution terms.
        assert!(fz.coeff_linf() > 0.0);
    }

    #[test]
    fn difference_forcing_drops_terms_for_zero_limit() {
        // With u = 0 the horizontal forcing is the self-advection of the
        // gap alone.
        let g = grid16();
        let zero = VelocityField::zero(g.clone());
        let cap = make_initial_data(&g, 4, 4, 2.5, 1.0).unwrap();
        let times = vec![0.0, 1.0];
        let mk = |f: &VelocityField| {
            Trajectory::from_parts(
                times.clone(),
                vec![f.clone(), f.clone()],
                vec![zero.clone(), zero.clone()],
                0.0,
            )
            .unwrap()
        };
        let traj_pe = mk(&zero);
        let traj_ns = mk(&cap);
        let eps = AnisotropyParam::new(0.25).unwrap();
        let (f1, _, _) = difference_forcing(&traj_ns, &traj_pe, 0, eps).unwrap();
        let adv = Advector::new(&cap);
        let mut want = adv.apply(&cap.v1);
        want.scale(-1.0);
        let diff = f1.sub(&want);
        assert!(diff.coeff_linf() < 1e-14);
    }

    #[test]
    fn difference_forcing_matches_dense_convolution() {
        // Single-mode gap and limit fields at 8^3, assembled against a
        // dense convolution of the defining formula.
        let g = build_grid(GridSpec::new(8, 8, 8)).unwrap();
        let u = make_initial_data(&g, 10, 2, 2.0, 0.7).unwrap();
        let ns = make_initial_data(&g, 11, 2, 2.0, 0.9).unwrap();
        let zero = VelocityField::zero(g.clone());
        let times = vec![0.0, 1.0];
        let mk = |f: &VelocityField, d: &VelocityField| {
            Trajectory::from_parts(
                times.clone(),
                vec![f.clone(), f.clone()],
                vec![d.clone(), d.clone()],
                0.0,
            )
            .unwrap()
        };
        let traj_pe = mk(&u, &zero);
        let traj_ns = mk(&ns, &zero);
        let eps = AnisotropyParam::new(0.5).unwrap();
        let (f1, _, _) = difference_forcing(&traj_ns, &traj_pe, 0, eps).unwrap();

        let cap = ns.sub(&u);
        let n = 8i64;
        let wrap = |s: i64| s.rem_euclid(n) as usize;
        let adv_dense = |a: &VelocityField, f: &ScalarField, i: i64, j: i64, l: i64| {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in -2i64..=2 {
                for q in -2i64..=2 {
                    for r in -2i64..=2 {
                        let (x, y, z) = (i - p, j - q, l - r);
                        if x.abs() > 2 || y.abs() > 2 || z.abs() > 2 {
                            continue;
                        }
                        let grad = [
                            Complex64::new(0.0, 2.0 * PI * x as f64),
                            Complex64::new(0.0, 2.0 * PI * y as f64),
                            Complex64::new(0.0, PI * z as f64),
                        ];
                        let fv = f.coeffs()[[wrap(x), wrap(y), wrap(z)]];
                        let (pi_, qi, ri) = (wrap(p), wrap(q), wrap(r));
                        acc += (a.v1.coeffs()[[pi_, qi, ri]] * grad[0]
                            + a.v2.coeffs()[[pi_, qi, ri]] * grad[1]
                            + a.w.coeffs()[[pi_, qi, ri]] * grad[2])
                            * fv;
                    }
                }
            }
            acc
        };
        let scale = 1.0 + f1.coeff_linf();
        for i in -2i64..=2 {
            for j in -2i64..=2 {
                for l in -2i64..=2 {
                    let want = -(adv_dense(&cap, &u.v1, i, j, l)
                        + adv_dense(&u, &cap.v1, i, j, l)
                        + adv_dense(&cap, &cap.v1, i, j, l));
                    let got = f1.coeffs()[[wrap(i), wrap(j), wrap(l)]];
                    assert!(
                        (want - got).norm() < 1e-12 * scale,
                        "mode ({i},{j},{l}): {want} vs {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn vertical_integral_is_linear() {
        let g = grid16();
        let a = make_initial_data(&g, 1, 3, 2.0, 1.0).unwrap().v1;
        let b = make_initial_data(&g, 2, 3, 2.0, 1.0).unwrap().v1;
        let mut sum = a.clone();
        sum.add_scaled(&b, 2.5);
        let lhs = vertical_integral(&sum);
        let mut rhs = vertical_integral(&a);
        rhs.add_scaled(&vertical_integral(&b), 2.5);
        let d = lhs.sub(&rhs);
        assert!(d.coeff_linf() < 1e-13);
        assert_abs_diff_eq!(
            vertical_integral(&ScalarField::zero(g, Parity::Even)).coeff_l2(),
            0.0
        );
    }
}
