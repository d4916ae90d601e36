//! Scalar fields: complex coefficients plus a vertical parity tag.
//!
//! A field is stored purely spectrally. Real-valued fields keep Hermitian
//! symmetry `c(-k) = conj(c(k))`; vertical parity is the coefficient
//! symmetry `c(k1,k2,-k3) = +/- c(k1,k2,k3)`. Both are preserved by every
//! operation here and can be measured, never assumed silently.

use std::sync::Arc;

use ndarray::{Array3, ArrayView3};
use num_complex::Complex64;

use crate::grid::{same_grid, SpectralGrid};
use crate::{Error, Result};

/// Vertical symmetry of a field: even survives `z -> -z`, odd flips sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    /// Parity of a pointwise product.
    pub fn product(self, other: Parity) -> Parity {
        if self == other {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    /// Parity after one vertical derivative.
    pub fn flipped(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

/// A real scalar field in spectral representation.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<SpectralGrid>,
    parity: Parity,
    coeffs: Array3<Complex64>,
}

impl ScalarField {
    pub fn zero(grid: Arc<SpectralGrid>, parity: Parity) -> Self {
        let shape = grid.shape();
        Self { grid, parity, coeffs: Array3::zeros(shape) }
    }

    /// Wrap an existing coefficient array; the caller vouches for the tag.
    pub fn from_coeffs(
        grid: Arc<SpectralGrid>,
        parity: Parity,
        coeffs: Array3<Complex64>,
    ) -> Result<Self> {
        if coeffs.shape() != grid.shape() {
            return Err(Error::ShapeMismatch { want: grid.shape(), got: coeffs.shape().to_vec() });
        }
        Ok(Self { grid, parity, coeffs })
    }

    /// Forward-transform real physical samples.
    pub fn from_samples(
        grid: Arc<SpectralGrid>,
        parity: Parity,
        samples: ArrayView3<'_, f64>,
    ) -> Result<Self> {
        let coeffs = grid.forward(samples)?;
        Ok(Self { grid, parity, coeffs })
    }

    /// Inverse-transform to real physical samples.
    pub fn to_samples(&self) -> Array3<f64> {
        let mut data = self.coeffs.clone();
        self.grid.inverse_inplace(&mut data);
        data.mapv(|c| c.re)
    }

    /// Inverse transform keeping the imaginary round-off, for diagnostics.
    pub fn to_samples_complex(&self) -> Array3<Complex64> {
        let mut data = self.coeffs.clone();
        self.grid.inverse_inplace(&mut data);
        data
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn coeffs(&self) -> &Array3<Complex64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.coeffs
    }

    pub fn set_parity_tag(&mut self, parity: Parity) {
        self.parity = parity;
    }

    /// Spectral derivative along `axis` (0 = x, 1 = y, 2 = z).
    ///
    /// The Nyquist plane of the differentiated axis is zeroed: its `i*k`
    /// image has no Hermitian partner, and every dealiased field is zero
    /// there anyway. A z-derivative flips the parity tag.
    pub fn derivative(&self, axis: usize) -> ScalarField {
        assert!(axis < 3, "axis must be 0, 1 or 2");
        let mut out = self.clone();
        let n = self.grid.shape()[axis];
        let half = n / 2;
        let k_axis: &[f64] = match axis {
            0 => self.grid.kx(),
            1 => self.grid.ky(),
            _ => self.grid.kz(),
        };
        for ((i, j, l), c) in out.coeffs.indexed_iter_mut() {
            let pos = [i, j, l][axis];
            if pos == half {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c *= Complex64::new(0.0, k_axis[pos]);
            }
        }
        if axis == 2 {
            out.parity = self.parity.flipped();
        }
        out
    }

    /// Zero every mode outside the two-thirds retention mask. Idempotent.
    pub fn dealias(&mut self) {
        let grid = self.grid.clone();
        let (kx, ky, kz) = (grid.keep_x(), grid.keep_y(), grid.keep_z());
        for ((i, j, l), c) in self.coeffs.indexed_iter_mut() {
            if !(kx[i] && ky[j] && kz[l]) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Project onto the requested vertical parity and set the tag.
    ///
    /// Self-mirrored planes (`k3 = 0` and the vertical Nyquist) are kept by
    /// the even projection and zeroed by the odd one.
    pub fn parity_symmetrize(&mut self, parity: Parity) {
        let grid = self.grid.clone();
        let nz = grid.shape()[2];
        let sign = parity.sign();
        let (nx, ny) = (grid.shape()[0], grid.shape()[1]);
        for i in 0..nx {
            for j in 0..ny {
                for l in 0..nz {
                    let m = grid.mirror_z(l);
                    if m == l {
                        if parity == Parity::Odd {
                            self.coeffs[[i, j, l]] = Complex64::new(0.0, 0.0);
                        }
                    } else if l < m {
                        let a = self.coeffs[[i, j, l]];
                        let b = self.coeffs[[i, j, m]];
                        let s = 0.5 * (a + sign * b);
                        self.coeffs[[i, j, l]] = s;
                        self.coeffs[[i, j, m]] = sign * s;
                    }
                }
            }
        }
        self.parity = parity;
    }

    /// Relative size of the component violating the tagged parity.
    pub fn parity_violation(&self) -> f64 {
        let grid = &self.grid;
        let sign = self.parity.sign();
        let mut bad = 0.0f64;
        let mut total = 0.0f64;
        for ((i, j, l), c) in self.coeffs.indexed_iter() {
            let m = grid.mirror_z(l);
            let mirrored = self.coeffs[[i, j, m]];
            bad += (c - sign * mirrored).norm_sqr();
            total += c.norm_sqr();
        }
        // Each violating pair is counted from both ends; the factor cancels
        // in the relative measure apart from the harmless factor 2.
        if total == 0.0 {
            0.0
        } else {
            0.5 * (bad / total).sqrt()
        }
    }

    /// Relative size of the component violating Hermitian symmetry.
    pub fn hermitian_violation(&self) -> f64 {
        let [nx, ny, nz] = self.grid.shape();
        let mut bad = 0.0f64;
        let mut total = 0.0f64;
        for ((i, j, l), c) in self.coeffs.indexed_iter() {
            let (mi, mj, ml) = ((nx - i) % nx, (ny - j) % ny, (nz - l) % nz);
            let partner = self.coeffs[[mi, mj, ml]];
            bad += (c - partner.conj()).norm_sqr();
            total += c.norm_sqr();
        }
        if total == 0.0 {
            0.0
        } else {
            0.5 * (bad / total).sqrt()
        }
    }

    /// Project onto the Hermitian (real-valued) subspace.
    pub fn hermitian_symmetrize(&mut self) {
        let [nx, ny, nz] = self.grid.shape();
        let snapshot = self.coeffs.clone();
        for ((i, j, l), c) in self.coeffs.indexed_iter_mut() {
            let (mi, mj, ml) = ((nx - i) % nx, (ny - j) % ny, (nz - l) % nz);
            *c = 0.5 * (*c + snapshot[[mi, mj, ml]].conj());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Root-mean-square of the coefficients; a cheap scale estimate.
    pub fn coeff_l2(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn coeff_linf(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &ScalarField, factor: f64) {
        assert!(same_grid(&self.grid, &other.grid), "fields must share a grid");
        ndarray::Zip::from(&mut self.coeffs).and(&other.coeffs).for_each(|a, b| *a += factor * b);
    }

    pub fn scale(&mut self, factor: f64) {
        self.coeffs.mapv_inplace(|c| factor * c);
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        assert!(same_grid(&self.grid, &other.grid), "fields must share a grid");
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }
}

/// Pseudospectral product: multiply on the physical grid, transform back and
/// dealias. The tag follows the parity product rule.
pub fn multiply_dealiased(a: &ScalarField, b: &ScalarField) -> ScalarField {
    assert!(same_grid(a.grid(), b.grid()), "fields must share a grid");
    let pa = a.to_samples();
    let pb = b.to_samples();
    let prod = &pa * &pb;
    let mut out = ScalarField::from_samples(a.grid().clone(), a.parity().product(b.parity()), prod.view())
        .expect("product keeps the grid shape");
    out.dealias();
    out
}
