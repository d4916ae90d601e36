//! Command-line driver: convergence sweeps, single-system runs, stored
//! trajectory norms, and the verification battery.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 every scaled run left the finite range, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hydrolim::dynamics::mms::mms_verify;
use hydrolim::fields::make_initial_data;
use hydrolim::harness::{emit_report, run_sweep, SweepConfig};
use hydrolim::io::{load_trajectory, save_trajectory};
use hydrolim::norms::{bessel_norm, e1_norm};
use hydrolim::projection::leray_eps;
use hydrolim::{
    build_grid, integrate, AnisotropyParam, Error, StepperConfig, System, VelocityField,
};

#[derive(Parser)]
#[command(name = "hydrolim", version, about = "Hydrostatic-limit convergence experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full sweep described by a JSON config; writes report.csv
    /// and report.json into the configured output directory.
    Sweep { config: PathBuf },
    /// Integrate the limit system once and store its sampled trajectory.
    RunPe { config: PathBuf },
    /// Integrate the scaled system at one aspect ratio and store its
    /// sampled trajectory.
    RunNs {
        config: PathBuf,
        #[arg(long)]
        eps: f64,
    },
    /// Manufactured-solution orders plus projection and norm batteries.
    Verify,
    /// Print the space-time norm components of a stored trajectory.
    Norms {
        manifest: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
    },
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl std::fmt::Display) -> CliError {
    CliError { code, message: message.to_string() }
}

/// Post-configuration errors keep their natural exit class.
fn classify(e: Error) -> CliError {
    let code = match &e {
        Error::Io(_) | Error::Json(_) | Error::Corrupt(_) => 4,
        Error::NonFinite { .. } => 3,
        _ => 2,
    };
    fail(code, e)
}

fn read_config(path: &Path) -> Result<SweepConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(4, format!("reading {}: {e}", path.display())))?;
    SweepConfig::from_json(&text).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn output_dir(cfg: &SweepConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn sweep(path: &Path) -> Result<(), CliError> {
    let cfg = read_config(path)?;
    let report = run_sweep(&cfg).map_err(classify)?;
    let dir = output_dir(&cfg);
    emit_report(&report, &dir).map_err(|e| fail(4, e))?;
    for row in &report.rows {
        match row.x_eps {
            Some(x) => println!("eps {:<8} x_eps {:.6e}  ({:.1}s)", row.eps, x, row.wallclock_s),
            None => println!("eps {:<8} {}  ({:.1}s)", row.eps, row.status, row.wallclock_s),
        }
    }
    match (report.slope, report.r_squared) {
        (Some(s), Some(r2)) => println!("slope {s:.4}  r^2 {r2:.4}"),
        _ if report.degenerate => println!("degenerate: zero gap, no rate fitted"),
        _ => println!("no rate fitted (fewer than 3 finite runs)"),
    }
    if report.dt_marginal {
        println!("warning: dt resolution is marginal for the smallest measured gap");
    }
    println!("report written to {}", dir.join("report.json").display());
    if report.rows.iter().all(|r| r.status == "nonfinite") {
        return Err(fail(3, "every scaled run left the finite range"));
    }
    Ok(())
}

fn initial_data(cfg: &SweepConfig) -> Result<VelocityField, CliError> {
    let grid = build_grid(cfg.grid).map_err(classify)?;
    make_initial_data(&grid, cfg.seed, cfg.band_limit, cfg.decay_rate, cfg.amplitude)
        .map_err(classify)
}

fn stepper(cfg: &SweepConfig) -> Result<StepperConfig, CliError> {
    let s = StepperConfig::new(cfg.dt, cfg.t_end)
        .map_err(classify)?
        .with_stride(cfg.sample_stride);
    s.validate().map_err(classify)?;
    Ok(s)
}

fn run_single(path: &Path, system: System, stem: &str) -> Result<(), CliError> {
    let cfg = read_config(path)?;
    let u0 = initial_data(&cfg)?;
    let traj = integrate(&u0, system, &stepper(&cfg)?).map_err(classify)?;
    let dir = output_dir(&cfg).join(stem);
    let manifest = save_trajectory(&dir, stem, &traj).map_err(|e| fail(4, e))?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn norms_cmd(manifest: &Path, p: f64, q: f64) -> Result<(), CliError> {
    let traj = load_trajectory(manifest).map_err(classify)?;
    let nrm = e1_norm(&traj, p, q).map_err(|e| fail(2, e))?;
    let doc = serde_json::json!({
        "h2q": nrm.h2q,
        "lq": nrm.lq,
        "dt": nrm.dt,
        "value": nrm.value(),
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("norm report serializes"));
    Ok(())
}

struct Battery {
    failures: usize,
}

impl Battery {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        if pass {
            println!("ok   {name}: {detail}");
        } else {
            println!("FAIL {name}: {detail}");
            self.failures += 1;
        }
    }
}

/// Worst projection residuals over random fields and a span of aspect
/// ratios: (gradient annihilation, idempotence, scaled divergence).
fn projection_battery() -> Result<(f64, f64, f64), Error> {
    let grid = build_grid(hydrolim::GridSpec::new(8, 8, 8))?;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for (k, &eps) in [1e-3, 1e-2, 0.1, 0.5, 1.0].iter().enumerate() {
        let eps = AnisotropyParam::new(eps)?;
        let raw = make_initial_data(&grid, 1000 + k as u64, 2, 1.0, 1.0)?;
        // A deliberately non-solenoidal field: reuse one component thrice.
        let mut u = VelocityField::new(raw.v1.clone(), raw.v1.clone(), {
            let mut w = raw.w.clone();
            w.add_scaled(&raw.v1.derivative(2), 0.7);
            w
        });
        leray_eps(&mut u, eps);
        let scale = 1.0 + u.v1.coeff_linf().max(u.w.coeff_linf());

        let mut div = u.v1.derivative(0);
        div.add_scaled(&u.v2.derivative(1), 1.0);
        let mut wz = u.w.derivative(2);
        wz.scale(1.0 / eps.value());
        div.add_scaled(&wz, 1.0);
        worst.2 = worst.2.max(div.coeff_linf() / (scale / eps.value().min(1.0)));

        let mut twice = u.clone();
        leray_eps(&mut twice, eps);
        let drift = twice.sub(&u);
        let idem = drift.v1.coeff_linf().max(drift.v2.coeff_linf()).max(drift.w.coeff_linf());
        worst.1 = worst.1.max(idem / scale);

        let phi = raw.v2.clone();
        let mut gz = phi.derivative(2);
        gz.scale(1.0 / eps.value());
        let mut grad = VelocityField::new(phi.derivative(0), phi.derivative(1), gz);
        let gscale =
            1.0 + grad.v1.coeff_linf().max(grad.v2.coeff_linf()).max(grad.w.coeff_linf());
        leray_eps(&mut grad, eps);
        let left = grad.v1.coeff_linf().max(grad.v2.coeff_linf()).max(grad.w.coeff_linf());
        worst.0 = worst.0.max(left / gscale);
    }
    Ok(worst)
}

/// Worst relative gap between the transform-side norm and the direct
/// coefficient sum at s = q = 2.
fn parseval_battery() -> Result<f64, Error> {
    let grid = build_grid(hydrolim::GridSpec::new(8, 8, 8))?;
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let f = make_initial_data(&grid, 2000 + seed, 2, 1.0, 1.0)?.v1;
        let via_norm = bessel_norm(&f, 2.0, 2.0);
        let mut sum = 0.0;
        for ((i, j, l), c) in f.coeffs().indexed_iter() {
            let k = f.grid().kappa(i, j, l);
            let m = 1.0 + k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            sum += m * m * c.norm_sqr();
        }
        let direct = (2.0 * sum).sqrt();
        worst = worst.max((via_norm - direct).abs() / direct.max(1e-300));
    }
    Ok(worst)
}

fn verify() -> Result<(), CliError> {
    let mut battery = Battery { failures: 0 };

    let (annihilation, idempotence, div) = projection_battery().map_err(|e| fail(1, e))?;
    battery.check(
        "projection annihilates scaled gradients",
        annihilation < 1e-11,
        format!("worst relative residual {annihilation:.2e}"),
    );
    battery.check(
        "projection idempotent",
        idempotence < 1e-12,
        format!("worst relative drift {idempotence:.2e}"),
    );
    battery.check(
        "projected fields scaled-divergence-free",
        div < 1e-11,
        format!("worst scaled residual {div:.2e}"),
    );

    let parseval = parseval_battery().map_err(|e| fail(1, e))?;
    battery.check(
        "norm matches coefficient sums",
        parseval < 1e-10,
        format!("worst relative gap {parseval:.2e}"),
    );

    let report = mms_verify().map_err(|e| fail(1, e))?;
    battery.check(
        "steady manufactured states are fixed points",
        report.steady_residual_ns < 1e-8 && report.steady_residual_pe < 1e-8,
        format!("residuals {:.2e} / {:.2e}", report.steady_residual_ns, report.steady_residual_pe),
    );
    battery.check(
        "temporal order near two",
        (1.8..=2.2).contains(&report.temporal_order_ns)
            && (1.8..=2.2).contains(&report.temporal_order_pe),
        format!("orders {:.3} / {:.3}", report.temporal_order_ns, report.temporal_order_pe),
    );
    battery.check(
        "vertical refinement collapses the error",
        report.spatial_ratio_ns > 10.0 && report.spatial_ratio_pe > 10.0,
        format!("ratios {:.1} / {:.1}", report.spatial_ratio_ns, report.spatial_ratio_pe),
    );

    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("verification report serializes")
    );
    if battery.failures > 0 {
        return Err(fail(1, format!("{} verification check(s) failed", battery.failures)));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Sweep { config } => sweep(&config),
        Command::RunPe { config } => run_single(&config, System::Pe, "pe"),
        Command::RunNs { config, eps } => {
            let param = AnisotropyParam::new(eps).map_err(|e| fail(2, e))?;
            let stem = format!("ns_{eps}");
            run_single(&config, System::Ns(param), &stem)
        }
        Command::Verify => verify(),
        Command::Norms { manifest, p, q } => norms_cmd(&manifest, p, q),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
