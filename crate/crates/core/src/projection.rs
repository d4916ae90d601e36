//! Anisotropic Leray projection and the two pressure solves.
//!
//! With `kappa_eps = (kappa_1, kappa_2, kappa_3/eps)` the projector acts
//! mode by mode as `u -> u - kappa_eps (kappa_eps . u) / |kappa_eps|^2`:
//! the orthogonal complement of scaled gradients. It is idempotent,
//! non-expansive per mode, annihilates `grad_eps` fields and preserves the
//! (even, even, odd) parity pattern. Both pressures are diagnostic
//! quantities; time stepping only ever applies the projector.

use ndarray::Array2;
use num_complex::Complex64;

use crate::fields::{Advector, HorizontalField, HorizontalScalar, VelocityField};
use crate::spectral::{Parity, ScalarField};
use crate::{Error, Result};

/// Validated aspect parameter, `0 < eps <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnisotropyParam(f64);

impl AnisotropyParam {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) || !eps.is_finite() {
            return Err(Error::InvalidEpsilon(eps));
        }
        Ok(Self(eps))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The isotropic case, where the projector is the classical Leray one.
    pub fn isotropic() -> Self {
        Self(1.0)
    }
}

/// Apply the anisotropic Leray projector in place. The zero mode is left
/// untouched; there is nothing to project there.
pub fn leray_eps(u: &mut VelocityField, eps: AnisotropyParam) {
    let grid = u.grid().clone();
    let inv_eps = 1.0 / eps.value();
    let [nx, ny, nz] = grid.shape();
    let (kx, ky, kz) = (grid.kx().to_vec(), grid.ky().to_vec(), grid.kz().to_vec());
    for i in 0..nx {
        for j in 0..ny {
            for l in 0..nz {
                let ke = [kx[i], ky[j], kz[l] * inv_eps];
                let n2 = ke[0] * ke[0] + ke[1] * ke[1] + ke[2] * ke[2];
                if n2 == 0.0 {
                    continue;
                }
                let a = u.v1.coeffs()[[i, j, l]];
                let b = u.v2.coeffs()[[i, j, l]];
                let c = u.w.coeffs()[[i, j, l]];
                let dot = (ke[0] * a + ke[1] * b + ke[2] * c) / n2;
                u.v1.coeffs_mut()[[i, j, l]] = a - ke[0] * dot;
                u.v2.coeffs_mut()[[i, j, l]] = b - ke[1] * dot;
                u.w.coeffs_mut()[[i, j, l]] = c - ke[2] * dot;
            }
        }
    }
}

/// Diagnostic pressure of the anisotropic projection: the `P` solving
/// `-(lap_H + eps^-2 dzz) P = div(f_H, eps^-1 f_z)` with zero mean.
/// The projector itself never forms this field.
pub fn pressure_eps(f: &VelocityField, eps: AnisotropyParam) -> ScalarField {
    let grid = f.grid().clone();
    let inv_eps = 1.0 / eps.value();
    let mut p = ScalarField::zero(grid.clone(), Parity::Even);
    let [nx, ny, nz] = grid.shape();
    for i in 0..nx {
        for j in 0..ny {
            for l in 0..nz {
                let [kxv, kyv, kzv] = grid.kappa(i, j, l);
                let ke = [kxv, kyv, kzv * inv_eps];
                let n2 = ke[0] * ke[0] + ke[1] * ke[1] + ke[2] * ke[2];
                if n2 == 0.0 {
                    continue;
                }
                let fh = ke[0] * f.v1.coeffs()[[i, j, l]] + ke[1] * f.v2.coeffs()[[i, j, l]];
                let fz = ke[2] * f.w.coeffs()[[i, j, l]];
                p.coeffs_mut()[[i, j, l]] = Complex64::i() * (fh + fz) / n2;
            }
        }
    }
    p
}

/// Solve `2 lap_H p = -div_H n` on the plane with mean-free gauge:
/// `p = i (kappa_H . n) / (2 |kappa_H|^2)` away from the horizontal mean.
pub fn solve_pe_pressure(n: &HorizontalField) -> HorizontalScalar {
    let grid = n.x.grid().clone();
    let [nx, ny, _] = grid.shape();
    let mut p = Array2::<Complex64>::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            let (k1, k2) = (grid.kx()[i], grid.ky()[j]);
            let h2 = k1 * k1 + k2 * k2;
            if h2 == 0.0 {
                continue;
            }
            let dot = k1 * n.x.coeffs()[[i, j]] + k2 * n.y.coeffs()[[i, j]];
            p[[i, j]] = Complex64::i() * dot / (2.0 * h2);
        }
    }
    HorizontalScalar::from_plane(grid, p).expect("plane shape matches grid")
}

/// Vertically integrated advection `n = int_{-1}^{1} (u . grad v) dz`,
/// the source of the limit-system pressure.
pub fn mean_advection(u: &VelocityField) -> HorizontalField {
    let adv = Advector::new(u);
    let a1 = adv.apply(&u.v1);
    let a2 = adv.apply(&u.v2);
    mean_advection_from(&a1, &a2)
}

/// Same, starting from precomputed advection terms `u . grad v1/2`.
/// The depth integral over a cell of height 2 is twice the `k3 = 0` plane.
pub fn mean_advection_from(a1: &ScalarField, a2: &ScalarField) -> HorizontalField {
    let grid = a1.grid().clone();
    let [nx, ny, _] = grid.shape();
    let mut n = HorizontalField::zero(grid);
    for i in 0..nx {
        for j in 0..ny {
            n.x.coeffs_mut()[[i, j]] = 2.0 * a1.coeffs()[[i, j, 0]];
            n.y.coeffs_mut()[[i, j]] = 2.0 * a2.coeffs()[[i, j, 0]];
        }
    }
    n
}

/// Pressure of the limit system: `2 lap_H p = -div_H int_{-1}^{1} u . grad v`,
/// mean-free, with no vertical structure by representation.
pub fn pe_pressure(u: &VelocityField) -> HorizontalScalar {
    solve_pe_pressure(&mean_advection(u))
}
