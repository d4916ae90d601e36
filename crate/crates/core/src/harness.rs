//! Sweep orchestration: admissibility checks, the eps-sweep driver, rate
//! fitting, and report emission.
//!
//! A sweep integrates the limit system once, then each scaled system from
//! the same (optionally perturbed) data, measuring the scaled difference
//! in the `E1` space-time norm sample by sample; scaled runs are
//! streamed, never stored. Blow-up at large eps is reported per row, not
//! fatal. Reports are deterministic byte-for-byte apart from wallclock
//! fields, independent of the worker-thread count.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::dynamics::{integrate, integrate_with, StepperConfig, System, Trajectory};
use crate::fields::{make_initial_data, VelocityField};
use crate::grid::{build_grid, GridSpec};
use crate::norms::{
    aggregate_integrands, bessel_norm_vec, sample_integrands, scaled_difference, NormSpec,
};
use crate::projection::AnisotropyParam;
use crate::{Error, Result};

/// Size of the perturbation direction relative to the base data (in the
/// `H^{2,q}` measure) before the per-eps schedule factor is applied.
/// Chosen so a sqrt-eps schedule dominates the intrinsic eps-linear gap
/// over the sweep range without driving the scheme unstable.
pub const PERTURBATION_GAIN: f64 = 2.5;

/// Admissible exponent region: `q > 4/3`, and `1/p + 1/q <= 1` for
/// `q >= 2`, `2/(3p) + 4/(3q) <= 1` for `q <= 2` (the two agree at
/// `q = 2`).
pub fn check_assumption_a(p: f64, q: f64) -> bool {
    if !(p > 1.0 && q > 4.0 / 3.0) {
        return false;
    }
    if q >= 2.0 {
        1.0 / p + 1.0 / q <= 1.0
    } else {
        2.0 / (3.0 * p) + 4.0 / (3.0 * q) <= 1.0
    }
}

/// Full description of one sweep; the JSON config file deserializes into
/// exactly these fields.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: GridSpec,
    pub dt: f64,
    pub t_end: f64,
    pub p: f64,
    pub q: f64,
    /// Strictly decreasing, at least three entries.
    pub eps: Vec<f64>,
    pub seed: u64,
    pub band_limit: usize,
    pub decay_rate: f64,
    pub amplitude: f64,
    /// Perturbation schedule exponent `r`: the scaled system starts from
    /// data perturbed by `eps^r` times the gained direction. Absent means
    /// shared data for every run.
    #[serde(default)]
    pub delta_eps: Option<f64>,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    #[serde(default)]
    pub output_dir: Option<std::path::PathBuf>,
    /// Permit exponents outside the admissible region (for probing).
    #[serde(default)]
    pub assumption_a_override: bool,
}

fn default_stride() -> usize {
    1
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        NormSpec::new(self.p, self.q, 0.0)?;
        if self.eps.len() < 3 {
            return Err(Error::Config(format!(
                "eps list needs at least 3 entries for a rate fit, got {}",
                self.eps.len()
            )));
        }
        for &e in &self.eps {
            AnisotropyParam::new(e)?;
        }
        if !self.eps.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config("eps list must be strictly decreasing".into()));
        }
        if self.band_limit == 0 {
            return Err(Error::Config("band_limit must be at least 1".into()));
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Config(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if !(self.decay_rate >= 0.0) || !self.decay_rate.is_finite() {
            return Err(Error::Config(format!(
                "decay_rate must be nonnegative, got {}",
                self.decay_rate
            )));
        }
        if self.sample_stride == 0 {
            return Err(Error::Config("sample_stride must be at least 1".into()));
        }
        if let Some(r) = self.delta_eps {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Config(format!(
                    "delta_eps exponent must be positive, got {r}"
                )));
            }
        }
        if !self.assumption_a_override && !check_assumption_a(self.p, self.q) {
            return Err(Error::Config(format!(
                "exponents (p, q) = ({}, {}) lie outside the admissible region; \
                 set assumption_a_override to probe them anyway",
                self.p, self.q
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn stepper(&self) -> Result<StepperConfig> {
        Ok(StepperConfig::new(self.dt, self.t_end)?.with_stride(self.sample_stride))
    }
}

/// One measured run of the scaled system.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub x_eps: Option<f64>,
    pub e1_h2q: Option<f64>,
    pub e1_lq: Option<f64>,
    pub e1_dt: Option<f64>,
    pub wallclock_s: f64,
    pub status: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    /// Some measured gap was exactly zero: a rate fit would be meaningless.
    pub degenerate: bool,
    /// Richardson estimate of the time-discretization error of the limit
    /// run in the same norm, when the step lattice admits a half-rate
    /// companion run.
    pub time_error_estimate: Option<f64>,
    /// Set when the time error is not at least an order below the
    /// smallest measured gap, i.e. dt pollutes the rate.
    pub dt_marginal: bool,
    pub config_hash: String,
    /// How the three-component space-time norm is collapsed to a number.
    pub norm_realization: String,
    pub config: SweepConfig,
}

/// Least squares on `(ln eps, ln x)`: returns slope, intercept, and R^2.
pub fn fit_rate(eps: &[f64], xs: &[f64]) -> Result<(f64, f64, f64)> {
    if eps.len() != xs.len() {
        return Err(Error::SampleMismatch);
    }
    if eps.len() < 3 {
        return Err(Error::TooFewPoints { need: 3, got: eps.len() });
    }
    for &e in eps {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::Config(format!("nonpositive eps {e} in rate fit")));
        }
    }
    for &x in xs {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::NonPositiveRate(x));
        }
    }
    let n = eps.len() as f64;
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("eps values must not all coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((slope, intercept, r2))
}

/// Run a job per index on up to `threads` workers; results land in input
/// order and are bitwise independent of the thread count (jobs share
/// nothing mutable).
pub fn parallel_map_with_threads<R, F>(n: usize, threads: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                *slots[i].lock().expect("result slot poisoned") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot poisoned").expect("job completed"))
        .collect()
}

/// `HYDROLIM_THREADS`-capped worker count (default: available cores).
pub fn thread_budget(jobs: usize) -> usize {
    let avail = std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1);
    let cap = std::env::var("HYDROLIM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(avail);
    cap.min(jobs.max(1))
}

pub fn parallel_map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    parallel_map_with_threads(n, thread_budget(n), f)
}

/// The scaled-system integration seam: eps, initial data, stepper, sample
/// sink. Swappable so sweeps can be exercised against a stub.
pub type ScaledRunner<'a> = dyn Fn(
        AnisotropyParam,
        &VelocityField,
        &StepperConfig,
        &mut dyn FnMut(usize, f64, &VelocityField, &VelocityField) -> Result<()>,
    ) -> Result<()>
    + Sync
    + 'a;

fn default_runner(
    eps: AnisotropyParam,
    u0: &VelocityField,
    cfg: &StepperConfig,
    sink: &mut dyn FnMut(usize, f64, &VelocityField, &VelocityField) -> Result<()>,
) -> Result<()> {
    integrate_with(u0, System::Ns(eps), cfg, None, sink)
}

/// Richardson estimate of the limit run's time-discretization error in
/// the sweep norm: integrate again at twice the step and compare on the
/// shared sample times. None when the lattice does not admit the
/// companion run.
fn limit_time_error(
    u0: &VelocityField,
    stepper: &StepperConfig,
    fine: &Trajectory,
    p: f64,
    q: f64,
) -> Result<Option<f64>> {
    let coarse_cfg = match StepperConfig::new(2.0 * stepper.dt, stepper.t_end) {
        Ok(c) => c.with_stride(stepper.sample_stride),
        Err(_) => return Ok(None),
    };
    if coarse_cfg.n_steps().is_err() {
        return Ok(None);
    }
    let coarse = integrate(u0, System::Pe, &coarse_cfg)?;
    let mut times = Vec::new();
    let mut g = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < fine.len() && j < coarse.len() {
        let (a, b) = (fine.times()[i], coarse.times()[j]);
        if (a - b).abs() <= 1e-12 * (1.0 + a.abs()) {
            let d = scaled_difference(&fine.fields()[i], &coarse.fields()[j], 1.0);
            let dd = scaled_difference(&fine.tendencies()[i], &coarse.tendencies()[j], 1.0);
            g.push(sample_integrands(&d, &dd, q));
            times.push(a);
            i += 1;
            j += 1;
        } else if a < b {
            i += 1;
        } else {
            j += 1;
        }
    }
    if times.len() < 2 {
        return Ok(None);
    }
    // Second-order scheme: err(dt) ~ (difference to the 2dt run) / 3.
    Ok(Some(aggregate_integrands(&times, &g, p)?.value() / 3.0))
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    run_sweep_with(cfg, &default_runner)
}

pub fn run_sweep_with(cfg: &SweepConfig, runner: &ScaledRunner<'_>) -> Result<SweepReport> {
    cfg.validate()?;
    let grid = build_grid(cfg.grid)?;
    let stepper = cfg.stepper()?;
    stepper.n_steps()?;
    let u0 = make_initial_data(&grid, cfg.seed, cfg.band_limit, cfg.decay_rate, cfg.amplitude)?;

    let limit_traj = integrate(&u0, System::Pe, &stepper)?;
    let time_error = limit_time_error(&u0, &stepper, &limit_traj, cfg.p, cfg.q)?;

    // One shared perturbation direction, sized relative to the data.
    let perturbation = match cfg.delta_eps {
        Some(_) => {
            let mut pi = make_initial_data(&grid, cfg.seed + 1, cfg.band_limit, cfg.decay_rate, 1.0)?;
            let base = bessel_norm_vec(&u0, 2.0, cfg.q);
            let size = bessel_norm_vec(&pi, 2.0, cfg.q);
            pi.scale(PERTURBATION_GAIN * base / size);
            Some(pi)
        }
        None => None,
    };

    let jobs: Vec<Result<SweepRow>> = parallel_map_indexed(cfg.eps.len(), |i| {
        let start = Instant::now();
        let eps = AnisotropyParam::new(cfg.eps[i]).expect("validated eps");
        let mut data = u0.clone();
        if let (Some(pi), Some(r)) = (&perturbation, cfg.delta_eps) {
            data.add_scaled(pi, eps.value().powf(r));
        }
        let mut times = Vec::new();
        let mut g = Vec::new();
        let outcome = runner(eps, &data, &stepper, &mut |k, t, u, du| {
            if k >= limit_traj.len() {
                return Err(Error::SampleMismatch);
            }
            let tl = limit_traj.times()[k];
            if (t - tl).abs() > 1e-12 * (1.0 + tl.abs()) {
                return Err(Error::SampleMismatch);
            }
            let d = scaled_difference(u, &limit_traj.fields()[k], eps.value());
            let dd = scaled_difference(du, &limit_traj.tendencies()[k], eps.value());
            g.push(sample_integrands(&d, &dd, cfg.q));
            times.push(t);
            Ok(())
        });
        let wallclock_s = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => {
                let nrm = aggregate_integrands(&times, &g, cfg.p)?;
                Ok(SweepRow {
                    eps: cfg.eps[i],
                    x_eps: Some(nrm.value()),
                    e1_h2q: Some(nrm.h2q),
                    e1_lq: Some(nrm.lq),
                    e1_dt: Some(nrm.dt),
                    wallclock_s,
                    status: "ok".into(),
                })
            }
            Err(Error::NonFinite { .. }) => Ok(SweepRow {
                eps: cfg.eps[i],
                x_eps: None,
                e1_h2q: None,
                e1_lq: None,
                e1_dt: None,
                wallclock_s,
                status: "nonfinite".into(),
            }),
            Err(e) => Err(e),
        }
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for job in jobs {
        rows.push(job?);
    }

    let degenerate = rows.iter().any(|r| r.x_eps == Some(0.0));
    let fit_pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.x_eps.filter(|&x| x > 0.0).map(|x| (r.eps, x)))
        .collect();
    let (slope, intercept, r_squared) = if !degenerate && fit_pairs.len() >= 3 {
        let (e, x): (Vec<f64>, Vec<f64>) = fit_pairs.iter().copied().unzip();
        let (s, b, r2) = fit_rate(&e, &x)?;
        (Some(s), Some(b), Some(r2))
    } else {
        (None, None, None)
    };

    let min_x = fit_pairs.iter().map(|&(_, x)| x).fold(f64::INFINITY, f64::min);
    let dt_marginal = match time_error {
        Some(err) if min_x.is_finite() => err * 10.0 > min_x,
        _ => false,
    };

    Ok(SweepReport {
        rows,
        slope,
        intercept,
        r_squared,
        degenerate,
        time_error_estimate: time_error,
        dt_marginal,
        config_hash: cfg.hash(),
        norm_realization: "sum".into(),
        config: cfg.clone(),
    })
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Write `report.csv` and `report.json` under `dir`.
pub fn emit_report(report: &SweepReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("eps,x_eps,e1_h2q,e1_lq,e1_dt,wallclock_s,status\n");
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.eps,
            csv_cell(r.x_eps),
            csv_cell(r.e1_h2q),
            csv_cell(r.e1_lq),
            csv_cell(r.e1_dt),
            r.wallclock_s,
            r.status
        ));
    }
    std::fs::write(dir.join("report.csv"), csv)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<SweepReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Parse `report.csv` back into rows; numeric cells round-trip exactly.
pub fn read_csv_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Corrupt("empty csv".into()))?;
    if header != "eps,x_eps,e1_h2q,e1_lq,e1_dt,wallclock_s,status" {
        return Err(Error::Corrupt("unexpected csv header".into()));
    }
    let cell = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>().map(Some).map_err(|_| Error::Corrupt(format!("bad csv number {s}")))
    };
    let mut rows = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Corrupt(format!("csv row has {} cells", parts.len())));
        }
        rows.push(SweepRow {
            eps: cell(parts[0])?.ok_or_else(|| Error::Corrupt("missing eps cell".into()))?,
            x_eps: cell(parts[1])?,
            e1_h2q: cell(parts[2])?,
            e1_lq: cell(parts[3])?,
            e1_dt: cell(parts[4])?,
            wallclock_s: cell(parts[5])?
                .ok_or_else(|| Error::Corrupt("missing wallclock cell".into()))?,
            status: parts[6].to_string(),
        });
    }
    Ok(rows)
}
