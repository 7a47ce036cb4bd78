//! Experiment runner: reproducible Monte Carlo capacity sweeps over colored
//! scattering environments, emitting a CSV of sweep points plus a flat
//! key-value manifest, or (with `--validate`) a machine-readable diagnostics
//! report of the numerical property suites.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use colored_scatter::capacity::{ergodic_sweep, SweepConfig};
use colored_scatter::channel::CALIBRATION_HALF_COUNT;
use colored_scatter::kernel::{
    cross_expansion_coefficients, deep_plateau_count, eigendecompose, epsilon_transition,
    KernelSpec, DEFAULT_POINTS_PER_UNIT,
};
use colored_scatter::scatter::{
    covariance_factor, kl_whiteness_check, Bounce, FieldModel, ScatterConfig,
};
use colored_scatter::AngularSupport;

/// Environment variable consulted for the seed when neither a flag nor a
/// config-file entry provides one.
const SEED_ENV: &str = "COLORED_SCATTER_SEED";

const DEFAULT_OMEGA: &str = "-1:-0.7,-0.15:0.15,0.7:1";
const DEFAULT_GAMMAS: [f64; 3] = [0.005, 0.02, 0.1];
const DEFAULT_SNRS_DB: [f64; 4] = [0.0, 15.0, 30.0, 45.0];
const DEFAULT_ANTENNAS: [usize; 6] = [9, 21, 41, 61, 81, 99];
const DEFAULT_GRID_K: u32 = 512;
const DEFAULT_TRIALS: usize = 500;
const PAPER_GRID_K: u32 = 2048;
const PAPER_TRIALS: usize = 10_000;

const CSV_HEADER: &str = "gamma,antennas,snr_db,mi_equal_power_bits,capacity_wf_bits,c0_bits,\
                          mi_norm,cap_norm,ci_mi,ci_cap,dof_limit,trials,seed";

#[derive(Parser, Debug)]
#[command(
    name = "colored-scatter",
    version,
    about = "Monte Carlo ergodic-capacity sweeps for colored-scattering MIMO channels"
)]
struct Cli {
    /// Optional flat key=value config file (keys are the flag names);
    /// explicit flags override its entries.
    config: Option<PathBuf>,

    /// Angular support as colon intervals: "a:b,c:d,…" in [-1, 1].
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<String>,

    /// Correlation widths Γ to sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,

    /// SNR points in dB (comma separated).
    #[arg(long = "snr-db", value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,

    /// Antenna counts per array (comma separated, odd).
    #[arg(long, value_delimiter = ',')]
    antennas: Option<Vec<usize>>,

    /// Angular grid parameter K (nodes at k/K for k = -K…K).
    #[arg(long = "grid-k")]
    grid_k: Option<u32>,

    /// Monte Carlo trials per sweep point.
    #[arg(long)]
    trials: Option<usize>,

    /// RNG seed; falls back to $COLORED_SCATTER_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,

    /// Scattering support model: "multi" or "single".
    #[arg(long)]
    bounce: Option<String>,

    /// Worker threads (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,

    /// Output CSV path; the manifest lands next to it as <output>.manifest.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Full-scale run: grid-k 2048, trials 10000 (slow; prints a warning).
    #[arg(long = "paper-scale")]
    paper_scale: bool,

    /// Run the numerical property suites instead of a sweep and print one
    /// machine-readable pass/fail line per check.
    #[arg(long)]
    validate: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

// ---------------------------------------------------------------------------
// Config resolution: defaults < env seed < file < --paper-scale < flags
// ---------------------------------------------------------------------------

/// One layer of partially specified options.
#[derive(Debug, Default)]
struct Partial {
    omega: Option<String>,
    gamma: Option<Vec<f64>>,
    snr_db: Option<Vec<f64>>,
    antennas: Option<Vec<usize>>,
    grid_k: Option<u32>,
    trials: Option<usize>,
    seed: Option<u64>,
    bounce: Option<String>,
    workers: Option<usize>,
    output: Option<PathBuf>,
}

impl Partial {
    /// Returns `self` overridden by everything set in `over`.
    fn overridden_by(self, over: Partial) -> Partial {
        Partial {
            omega: over.omega.or(self.omega),
            gamma: over.gamma.or(self.gamma),
            snr_db: over.snr_db.or(self.snr_db),
            antennas: over.antennas.or(self.antennas),
            grid_k: over.grid_k.or(self.grid_k),
            trials: over.trials.or(self.trials),
            seed: over.seed.or(self.seed),
            bounce: over.bounce.or(self.bounce),
            workers: over.workers.or(self.workers),
            output: over.output.or(self.output),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug)]
struct Resolved {
    omega_text: String,
    omega: AngularSupport,
    gammas: Vec<f64>,
    snrs_db: Vec<f64>,
    antennas: Vec<usize>,
    grid_k: u32,
    trials: usize,
    seed: u64,
    bounce: Bounce,
    workers: usize,
    output: PathBuf,
    paper_scale: bool,
}

impl Resolved {
    /// The canonical flag-name/value block echoed into the manifest and
    /// hashed for reproducibility tracking.
    fn canonical_text(&self) -> String {
        let join_f64 = |xs: &[f64]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let _ = writeln!(s, "omega={}", self.omega_text);
        let _ = writeln!(s, "gamma={}", join_f64(&self.gammas));
        let _ = writeln!(s, "snr-db={}", join_f64(&self.snrs_db));
        let _ = writeln!(
            s,
            "antennas={}",
            self.antennas
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "grid-k={}", self.grid_k);
        let _ = writeln!(s, "trials={}", self.trials);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "bounce={}", self.bounce);
        let _ = writeln!(s, "workers={}", self.workers);
        let _ = writeln!(s, "output={}", self.output.display());
        let _ = writeln!(s, "paper-scale={}", self.paper_scale);
        s
    }
}

fn parse_config_file(path: &Path) -> Result<Partial, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    let mut part = Partial::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value, got '{line}'", lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let context = |e: String| format!("config line {} ({key}): {e}", lineno + 1);
        match key {
            "omega" => part.omega = Some(value.to_string()),
            "gamma" => part.gamma = Some(parse_f64_list(value).map_err(context)?),
            "snr-db" => part.snr_db = Some(parse_f64_list(value).map_err(context)?),
            "antennas" => part.antennas = Some(parse_usize_list(value).map_err(context)?),
            "grid-k" => part.grid_k = Some(parse_scalar(value).map_err(context)?),
            "trials" => part.trials = Some(parse_scalar(value).map_err(context)?),
            "seed" => part.seed = Some(parse_scalar(value).map_err(context)?),
            "bounce" => part.bounce = Some(value.to_string()),
            "workers" => part.workers = Some(parse_scalar(value).map_err(context)?),
            "output" => part.output = Some(PathBuf::from(value)),
            other => {
                return Err(format!(
                    "config line {}: unknown key '{other}' (expected a flag name)",
                    lineno + 1
                ))
            }
        }
    }
    Ok(part)
}

fn parse_f64_list(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number '{}': {e}", v.trim()))
        })
        .collect()
}

fn parse_usize_list(value: &str) -> Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad count '{}': {e}", v.trim()))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("bad value '{value}': {e}"))
}

fn resolve(cli: &Cli) -> Result<Resolved, String> {
    let mut layers = Partial::default();

    if let Ok(env_seed) = std::env::var(SEED_ENV) {
        let seed = env_seed
            .parse::<u64>()
            .map_err(|e| format!("{SEED_ENV}='{env_seed}' is not a valid seed: {e}"))?;
        layers = layers.overridden_by(Partial {
            seed: Some(seed),
            ..Partial::default()
        });
    }
    if let Some(path) = &cli.config {
        layers = layers.overridden_by(parse_config_file(path)?);
    }
    if cli.paper_scale {
        layers = layers.overridden_by(Partial {
            grid_k: Some(PAPER_GRID_K),
            trials: Some(PAPER_TRIALS),
            ..Partial::default()
        });
    }
    layers = layers.overridden_by(Partial {
        omega: cli.omega.clone(),
        gamma: cli.gamma.clone(),
        snr_db: cli.snr_db.clone(),
        antennas: cli.antennas.clone(),
        grid_k: cli.grid_k,
        trials: cli.trials,
        seed: cli.seed,
        bounce: cli.bounce.clone(),
        workers: cli.workers,
        output: cli.output.clone(),
    });

    let omega_text = layers.omega.unwrap_or_else(|| DEFAULT_OMEGA.to_string());
    let omega = AngularSupport::parse(&omega_text).map_err(|e| e.to_string())?;
    let bounce: Bounce = layers
        .bounce
        .as_deref()
        .unwrap_or("multi")
        .parse()
        .map_err(|e: colored_scatter::Error| e.to_string())?;
    Ok(Resolved {
        omega_text,
        omega,
        gammas: layers.gamma.unwrap_or_else(|| DEFAULT_GAMMAS.to_vec()),
        snrs_db: layers.snr_db.unwrap_or_else(|| DEFAULT_SNRS_DB.to_vec()),
        antennas: layers.antennas.unwrap_or_else(|| DEFAULT_ANTENNAS.to_vec()),
        grid_k: layers.grid_k.unwrap_or(DEFAULT_GRID_K),
        trials: layers.trials.unwrap_or(DEFAULT_TRIALS),
        seed: layers.seed.unwrap_or(0),
        bounce,
        workers: layers.workers.unwrap_or(0),
        output: layers.output.unwrap_or_else(|| PathBuf::from("sweep.csv")),
        paper_scale: cli.paper_scale,
    })
}

// ---------------------------------------------------------------------------
// Run modes
// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<ExitCode, String> {
    let resolved = resolve(&cli)?;
    if resolved.paper_scale {
        eprintln!(
            "warning: paper-scale run (grid-k={}, trials={}) — expect a long runtime",
            resolved.grid_k, resolved.trials
        );
    }
    if cli.validate {
        validate(&resolved);
        Ok(ExitCode::SUCCESS)
    } else {
        sweep(&resolved)?;
        Ok(ExitCode::SUCCESS)
    }
}

fn sweep(resolved: &Resolved) -> Result<(), String> {
    // Claim both output files before computing anything.
    let csv_file = File::create(&resolved.output)
        .map_err(|e| format!("cannot write output {}: {e}", resolved.output.display()))?;
    let manifest_path = manifest_path(&resolved.output);
    let manifest_file = File::create(&manifest_path)
        .map_err(|e| format!("cannot write manifest {}: {e}", manifest_path.display()))?;

    let config = SweepConfig {
        rx_support: resolved.omega.clone(),
        tx_support: resolved.omega.clone(),
        gammas: resolved.gammas.clone(),
        antennas: resolved.antennas.clone(),
        snrs_db: resolved.snrs_db.clone(),
        grid_k: resolved.grid_k,
        trials: resolved.trials,
        seed: resolved.seed,
        bounce: resolved.bounce,
        workers: resolved.workers,
    };
    let started = Instant::now();
    let rows = ergodic_sweep(&config).map_err(|e| e.to_string())?;
    let wall = started.elapsed().as_secs_f64();

    let mut csv = BufWriter::new(csv_file);
    let io_err = |e: std::io::Error| format!("writing {}: {e}", resolved.output.display());
    writeln!(csv, "{CSV_HEADER}").map_err(io_err)?;
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.gamma,
            r.antennas,
            r.snr_db,
            r.mi_equal_power_bits,
            r.capacity_wf_bits,
            r.c0_bits,
            r.mi_norm,
            r.cap_norm,
            r.ci_mi,
            r.ci_cap,
            r.dof_limit,
            r.trials,
            resolved.seed
        )
        .map_err(io_err)?;
    }
    csv.flush().map_err(io_err)?;

    let canonical = resolved.canonical_text();
    let mut manifest = BufWriter::new(manifest_file);
    let m_err = |e: std::io::Error| format!("writing {}: {e}", manifest_path.display());
    write!(manifest, "{canonical}").map_err(m_err)?;
    writeln!(manifest, "config-hash={:016x}", fnv1a64(canonical.as_bytes())).map_err(m_err)?;
    writeln!(manifest, "version={}", env!("CARGO_PKG_VERSION")).map_err(m_err)?;
    writeln!(manifest, "wall-time-seconds={wall:.3}").map_err(m_err)?;
    writeln!(manifest, "rows={}", rows.len()).map_err(m_err)?;
    manifest.flush().map_err(m_err)?;
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    output.with_file_name(name)
}

/// 64-bit FNV-1a over the canonical config text.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ---------------------------------------------------------------------------
// Validation report
// ---------------------------------------------------------------------------

/// Tallies check outcomes while echoing each report line.
#[derive(Default)]
struct Report {
    total: usize,
    failed: usize,
}

impl Report {
    fn add(&mut self, pass: bool, line: String) {
        self.total += 1;
        if !pass {
            self.failed += 1;
        }
        println!("{line}");
    }
}

/// Runs the numerical property suites against the resolved config and prints
/// one `check=… pass=…` line per property. Failures are report entries, not
/// process errors; the exit code stays zero.
fn validate(resolved: &Resolved) {
    let mut report = Report::default();

    let mut gammas = resolved.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let l_max = resolved
        .antennas
        .iter()
        .map(|a| (a - 1) / 2)
        .max()
        .unwrap_or(CALIBRATION_HALF_COUNT) as f64;
    let measure = resolved.omega.measure();
    let clusters = resolved.omega.cluster_count();

    for &gamma in &gammas {
        // Covariance synthesis: grid resolution, positive semidefiniteness,
        // clipped mass. A too-narrow correlation width reports the
        // under-resolved failure here.
        match covariance_factor(&resolved.omega, gamma, resolved.grid_k) {
            Ok(cov) => {
                let ratio = cov.clipped_mass() / cov.trace();
                report.add(
                    true,
                    format!(
                        "check=scatter_covariance gamma={gamma} pass=true rank={} clipped_mass_ratio={ratio:.3e}",
                        cov.rank()
                    ),
                );
            }
            Err(e) => report.add(
                false,
                format!("check=scatter_covariance gamma={gamma} pass=false error=\"{e}\""),
            ),
        }

        // Eigenvalue counting at the half threshold, where the count should
        // equal the support-bandwidth product to within ±2.
        let delta = l_max.min(1.0 / gamma);
        let aw = measure * delta;
        match KernelSpec::new(resolved.omega.clone(), delta).and_then(|s| eigendecompose(&s)) {
            Ok(spectrum) => {
                let count = spectrum.count_above(0.5);
                let residual = (count as f64 - aw).abs();
                let pass = residual <= 2.0;
                report.add(
                    pass,
                    format!(
                        "check=eigen_count_mid gamma={gamma} pass={pass} count={count} expected={aw:.3} residual={residual:.3}"
                    ),
                );
            }
            Err(e) => report.add(
                false,
                format!("check=eigen_count_mid gamma={gamma} pass=false error=\"{e}\""),
            ),
        }

        // Transition width: the plunge parameter exists and solves the
        // counting equation to near machine precision.
        if aw > 1.0 {
            match epsilon_transition(aw, clusters) {
                Ok(eps) => {
                    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
                    let resid = aw
                        + clusters as f64 / pi2
                            * (eps / (1.0 - eps)).ln()
                            * (2.0 * std::f64::consts::PI * aw).ln();
                    let pass = resid.abs() < 1e-10;
                    report.add(
                        pass,
                        format!(
                            "check=transition_width gamma={gamma} pass={pass} epsilon={eps:.4e} residual={:.3e}",
                            resid.abs()
                        ),
                    );
                }
                Err(e) => report.add(
                    false,
                    format!("check=transition_width gamma={gamma} pass=false error=\"{e}\""),
                ),
            }
        }
    }

    // Cross-expansion identities between a wide and a narrow kernel on the
    // configured support, at canonical bandwidths 20 and 10.
    let cross = (|| -> colored_scatter::Result<(usize, f64, f64)> {
        let fine = eigendecompose(&KernelSpec::with_resolution(
            resolved.omega.clone(),
            20.0,
            DEFAULT_POINTS_PER_UNIT,
        )?)?;
        let coarse = eigendecompose(&KernelSpec::with_resolution(
            resolved.omega.clone(),
            10.0,
            2 * DEFAULT_POINTS_PER_UNIT,
        )?)?;
        let count = deep_plateau_count(&coarse)?;
        let x = cross_expansion_coefficients(&fine, &coarse, count)?;
        Ok((
            count,
            x.row_orthonormality_residual(),
            x.weighted_identity_residual(),
        ))
    })();
    match cross {
        Ok((count, row, weighted)) => {
            let pass = row < 1e-3 && weighted < 1e-3;
            report.add(
                pass,
                format!(
                    "check=cross_expansion pass={pass} functions={count} row_residual={row:.3e} weighted_residual={weighted:.3e}"
                ),
            );
        }
        Err(e) => report.add(false, format!("check=cross_expansion pass=false error=\"{e}\"")),
    }

    // Karhunen-Loève whiteness of the synthesized field at the widest
    // configured correlation width (fewest modes, fastest check).
    let whiteness = (|| -> colored_scatter::Result<_> {
        let gamma = *gammas.last().expect("validated nonempty");
        let config = ScatterConfig::new(
            resolved.omega.clone(),
            resolved.omega.clone(),
            gamma,
            gamma,
            resolved.grid_k,
            Bounce::Multi,
        )?;
        let model = FieldModel::new(config)?;
        let whiteness = kl_whiteness_check(&model, model.rx(), model.tx(), 1000, resolved.seed)?;
        Ok((gamma, whiteness))
    })();
    match whiteness {
        Ok((gamma, w)) => {
            let pass = w.passes();
            report.add(
                pass,
                format!(
                    "check=kl_whiteness gamma={gamma} pass={pass} trials={} max_mean={:.3e} max_diag_dev={:.3e} max_offdiag={:.3e} max_pseudo={:.3e} threshold={:.3e}",
                    w.trials, w.max_mean_abs, w.max_diag_dev, w.max_offdiag_cov, w.max_pseudo, w.threshold
                ),
            );
        }
        Err(e) => report.add(false, format!("check=kl_whiteness pass=false error=\"{e}\"")),
    }

    let result = if report.failed == 0 { "pass" } else { "fail" };
    println!(
        "result={result} checks={} failed={}",
        report.total, report.failed
    );
}
