//! Grid geometry, wavenumbers, dealias masks and the shared FFT machinery.
//!
//! The cell is `(0,1)^2 x (-1,1)`: unit periods horizontally, period 2
//! vertically. Mode `(k1,k2,k3)` carries the wavenumber
//! `kappa = (2*pi*k1, 2*pi*k2, pi*k3)` and coefficients are stored against
//! the basis `exp(i*kappa.x)` in FFT index order, so the signed index range
//! per axis of length `n` is `{-n/2, .., n/2-1}`. The forward transform
//! divides by the sample count: the zero mode stores the arithmetic mean.

use std::sync::Arc;

use ndarray::{Array3, ArrayView3, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Number of retained modes per axis; all must be even and at least 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny), ("nz", self.nz)] {
            if n < 4 {
                return Err(Error::GridInvalid(format!("{name} = {n} is below 4")));
            }
            if n % 2 != 0 {
                return Err(Error::GridInvalid(format!("{name} = {n} is odd")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn mode_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}

/// Signed FFT-order index for position `i` on an axis of length `n`.
fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Precomputed geometry shared by every field on a grid.
pub struct SpectralGrid {
    spec: GridSpec,
    /// Physical wavenumber component per index, one vector per axis.
    kx: Vec<f64>,
    ky: Vec<f64>,
    kz: Vec<f64>,
    /// Signed integer mode indices per axis.
    ix: Vec<i64>,
    iy: Vec<i64>,
    iz: Vec<i64>,
    /// Two-thirds-rule retention per axis: `|k| <= floor(n/3)`.
    keep_x: Vec<bool>,
    keep_y: Vec<bool>,
    keep_z: Vec<bool>,
    /// Index of the mirrored mode `k3 -> -k3` per vertical position.
    mirror_z: Vec<usize>,
    /// Basis phase `(-1)^k3` translating between the z in `(-1,1)` basis and
    /// raw DFT output on samples starting at `z = -1`.
    zphase: Vec<f64>,
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid").field("spec", &self.spec).finish()
    }
}

/// Build the shared grid object for a validated spec.
pub fn build_grid(spec: GridSpec) -> Result<Arc<SpectralGrid>> {
    spec.validate()?;
    let axis_setup = |n: usize, unit: f64| {
        let cutoff = (n / 3) as i64;
        let mut k = Vec::with_capacity(n);
        let mut idx = Vec::with_capacity(n);
        let mut keep = Vec::with_capacity(n);
        for i in 0..n {
            let s = signed_index(i, n);
            idx.push(s);
            k.push(unit * s as f64);
            keep.push(s.abs() <= cutoff);
        }
        (k, idx, keep)
    };
    let (kx, ix, keep_x) = axis_setup(spec.nx, 2.0 * std::f64::consts::PI);
    let (ky, iy, keep_y) = axis_setup(spec.ny, 2.0 * std::f64::consts::PI);
    let (kz, iz, keep_z) = axis_setup(spec.nz, std::f64::consts::PI);
    let mirror_z = (0..spec.nz).map(|l| (spec.nz - l) % spec.nz).collect();
    let zphase = (0..spec.nz).map(|l| if l % 2 == 0 { 1.0 } else { -1.0 }).collect();

    let mut planner = FftPlanner::new();
    let fwd = [
        planner.plan_fft_forward(spec.nx),
        planner.plan_fft_forward(spec.ny),
        planner.plan_fft_forward(spec.nz),
    ];
    let inv = [
        planner.plan_fft_inverse(spec.nx),
        planner.plan_fft_inverse(spec.ny),
        planner.plan_fft_inverse(spec.nz),
    ];

    Ok(Arc::new(SpectralGrid {
        spec,
        kx,
        ky,
        kz,
        ix,
        iy,
        iz,
        keep_x,
        keep_y,
        keep_z,
        mirror_z,
        zphase,
        fwd,
        inv,
    }))
}

impl SpectralGrid {
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn shape(&self) -> [usize; 3] {
        self.spec.shape()
    }

    /// Physical wavenumber vector of the mode at array position `(i, j, l)`.
    pub fn kappa(&self, i: usize, j: usize, l: usize) -> [f64; 3] {
        [self.kx[i], self.ky[j], self.kz[l]]
    }

    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    pub fn kz(&self) -> &[f64] {
        &self.kz
    }

    /// Signed integer mode indices per axis.
    pub fn index_x(&self) -> &[i64] {
        &self.ix
    }

    pub fn index_y(&self) -> &[i64] {
        &self.iy
    }

    pub fn index_z(&self) -> &[i64] {
        &self.iz
    }

    /// Largest retained `|k|` per axis under the two-thirds rule.
    pub fn dealias_cutoff(&self) -> [usize; 3] {
        [self.spec.nx / 3, self.spec.ny / 3, self.spec.nz / 3]
    }

    /// Whether mode `(i, j, l)` survives the two-thirds rule on every axis.
    pub fn retained(&self, i: usize, j: usize, l: usize) -> bool {
        self.keep_x[i] && self.keep_y[j] && self.keep_z[l]
    }

    pub fn keep_x(&self) -> &[bool] {
        &self.keep_x
    }

    pub fn keep_y(&self) -> &[bool] {
        &self.keep_y
    }

    pub fn keep_z(&self) -> &[bool] {
        &self.keep_z
    }

    /// Array position of the vertically mirrored mode `k3 -> -k3`.
    pub fn mirror_z(&self, l: usize) -> usize {
        self.mirror_z[l]
    }

    /// Physical sample coordinates: `x_i = i/nx`, likewise `y`; `z_l = -1 + 2l/nz`.
    pub fn x_coords(&self) -> Vec<f64> {
        (0..self.spec.nx).map(|i| i as f64 / self.spec.nx as f64).collect()
    }

    pub fn y_coords(&self) -> Vec<f64> {
        (0..self.spec.ny).map(|j| j as f64 / self.spec.ny as f64).collect()
    }

    pub fn z_coords(&self) -> Vec<f64> {
        (0..self.spec.nz).map(|l| -1.0 + 2.0 * l as f64 / self.spec.nz as f64).collect()
    }

    /// Volume of one quadrature cell: `|Omega| / N` with `|Omega| = 2`.
    pub fn cell_volume(&self) -> f64 {
        2.0 / self.spec.mode_count() as f64
    }

    /// In-place forward transform: physical samples to mean-normalized
    /// coefficients against `exp(i*kappa.x)`.
    pub fn forward_inplace(&self, data: &mut Array3<Complex64>) {
        assert_eq!(data.shape(), self.shape(), "array shape must match grid");
        self.fft_pass(data, true);
        let scale = 1.0 / self.spec.mode_count() as f64;
        let zphase = &self.zphase;
        for mut row in data.rows_mut() {
            for (l, v) in row.iter_mut().enumerate() {
                *v *= scale * zphase[l];
            }
        }
    }

    /// In-place inverse transform: coefficients back to physical samples.
    pub fn inverse_inplace(&self, data: &mut Array3<Complex64>) {
        assert_eq!(data.shape(), self.shape(), "array shape must match grid");
        let zphase = &self.zphase;
        for mut row in data.rows_mut() {
            for (l, v) in row.iter_mut().enumerate() {
                *v *= zphase[l];
            }
        }
        self.fft_pass(data, false);
    }

    pub fn forward(&self, samples: ArrayView3<'_, f64>) -> Result<Array3<Complex64>> {
        if samples.shape() != self.shape() {
            return Err(Error::ShapeMismatch { want: self.shape(), got: samples.shape().to_vec() });
        }
        let mut data = samples.mapv(|r| Complex64::new(r, 0.0));
        self.forward_inplace(&mut data);
        Ok(data)
    }

    /// Inverse transform keeping the (round-off level) imaginary parts.
    pub fn inverse(&self, coeffs: &Array3<Complex64>) -> Result<Array3<Complex64>> {
        if coeffs.shape() != self.shape() {
            return Err(Error::ShapeMismatch { want: self.shape(), got: coeffs.shape().to_vec() });
        }
        let mut data = coeffs.clone();
        self.inverse_inplace(&mut data);
        Ok(data)
    }

    /// One complex FFT along each axis. The z axis is contiguous and handled
    /// by chunks; x and y lanes go through a gather/scatter buffer.
    fn fft_pass(&self, data: &mut Array3<Complex64>, forward: bool) {
        let plans = if forward { &self.fwd } else { &self.inv };
        let nz = self.spec.nz;
        {
            let slice = data.as_slice_mut().expect("coefficient arrays are standard layout");
            let mut scratch = vec![Complex64::default(); plans[2].get_inplace_scratch_len()];
            for chunk in slice.chunks_exact_mut(nz) {
                plans[2].process_with_scratch(chunk, &mut scratch);
            }
        }
        for (axis, plan) in [(0usize, &plans[0]), (1usize, &plans[1])] {
            let n = self.spec.shape()[axis];
            let mut buf = vec![Complex64::default(); n];
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            for mut lane in data.lanes_mut(Axis(axis)) {
                for (b, v) in buf.iter_mut().zip(lane.iter()) {
                    *b = *v;
                }
                plan.process_with_scratch(&mut buf, &mut scratch);
                for (v, b) in lane.iter_mut().zip(buf.iter()) {
                    *v = *b;
                }
            }
        }
    }

    /// Visit every mode as `(i, j, l, kappa)` in row-major order.
    pub fn for_each_mode(&self, mut f: impl FnMut(usize, usize, usize, [f64; 3])) {
        for i in 0..self.spec.nx {
            for j in 0..self.spec.ny {
                for l in 0..self.spec.nz {
                    f(i, j, l, [self.kx[i], self.ky[j], self.kz[l]]);
                }
            }
        }
    }

    /// Mutable per-mode visitor over a coefficient array on this grid.
    pub fn map_modes(
        &self,
        coeffs: &mut Array3<Complex64>,
        mut f: impl FnMut([f64; 3], &mut Complex64),
    ) {
        for ((i, j, l), c) in coeffs.indexed_iter_mut() {
            f([self.kx[i], self.ky[j], self.kz[l]], c);
        }
    }
}

/// Two grids are interchangeable when their specs agree.
pub fn same_grid(a: &SpectralGrid, b: &SpectralGrid) -> bool {
    std::ptr::eq(a, b) || a.spec() == b.spec()
}
