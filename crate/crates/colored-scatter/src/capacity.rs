//! Capacity functionals and the Monte Carlo ergodic sweep.
//!
//! Two surrogates bracket the ergodic capacity of a sampled channel:
//! equal-power mutual information `Ĩ` (no channel knowledge at the
//! transmitter) and waterfilling capacity `C̃` (full knowledge), with
//! `C̃ ≥ Ĩ` pointwise. Monte Carlo averages of both, normalized by the
//! single-antenna capacity `C0 = log2(1 + P/σ²)`, are what the sweep emits.
//! Against these sit the theoretical ceilings: the degrees-of-freedom limit
//! `|Ω| · min{L, 1/Γ}`, the spectrum-sum bound over concentration-kernel
//! eigenvalues, its closed two-term form, and the diversity limits.
//!
//! The sweep is deterministic for a fixed (config, seed) regardless of worker
//! count: per-trial draws are keyed by `seed ⊕ trial_index` and the reduction
//! runs in trial order.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::{center_block, ChannelAssembler};
use crate::error::{Error, Result};
use crate::kernel::EigenSpectrum;
use crate::scatter::{Bounce, FieldModel, ScatterConfig};
use crate::support::AngularSupport;

/// Eigenvalues below this are excluded from spectrum-sum capacity bounds.
pub const SPECTRUM_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// SNR bookkeeping
// ---------------------------------------------------------------------------

/// Transmit power budget and noise variance, with the dB ratio kept in sync.
#[derive(Debug, Clone, Copy)]
pub struct SnrPoint {
    pub power: f64,
    pub noise_var: f64,
    pub snr_db: f64,
}

impl SnrPoint {
    pub fn from_db(snr_db: f64) -> Self {
        Self {
            power: 10f64.powf(snr_db / 10.0),
            noise_var: 1.0,
            snr_db,
        }
    }

    pub fn new(power: f64, noise_var: f64) -> Result<Self> {
        if !power.is_finite() || power <= 0.0 || !noise_var.is_finite() || noise_var <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "power {power} and noise variance {noise_var} must be positive"
            )));
        }
        Ok(Self {
            power,
            noise_var,
            snr_db: 10.0 * (power / noise_var).log10(),
        })
    }

    /// `P/σ²`.
    pub fn rho(&self) -> f64 {
        self.power / self.noise_var
    }
}

// ---------------------------------------------------------------------------
// Waterfilling
// ---------------------------------------------------------------------------

/// Optimal power allocation over parallel channels: maximizes
/// `Σ log2(1 + g_i p_i)` subject to `Σ p_i = P`, by the exact sorted
/// water-level construction. Returns the per-channel allocation (in input
/// order) and the capacity in bits. All-zero gains yield an empty allocation
/// and zero capacity.
pub fn waterfill(gains: &[f64], power: f64) -> Result<(Vec<f64>, f64)> {
    if !power.is_finite() || power <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "power budget must be positive and finite, got {power}"
        )));
    }
    let mut positive: Vec<(usize, f64)> = Vec::with_capacity(gains.len());
    for (i, &g) in gains.iter().enumerate() {
        if !g.is_finite() || g < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gains must be finite and nonnegative, got {g} at index {i}"
            )));
        }
        if g > 0.0 {
            positive.push((i, g));
        }
    }
    if positive.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    positive.sort_by(|a, b| b.1.total_cmp(&a.1));

    // Water level with the top k channels active: μ_k = (P + Σ 1/g)/k.
    // The correct k is the largest for which the weakest active channel still
    // receives nonnegative power.
    let mut inv_sum = 0.0;
    let mut active = 0;
    let mut level = 0.0;
    for (k, &(_, g)) in positive.iter().enumerate() {
        let trial_level = (power + inv_sum + 1.0 / g) / (k + 1) as f64;
        if trial_level >= 1.0 / g {
            inv_sum += 1.0 / g;
            active = k + 1;
            level = trial_level;
        } else {
            break;
        }
    }

    let mut allocation = vec![0.0; gains.len()];
    let mut capacity = 0.0;
    for &(i, g) in positive.iter().take(active) {
        allocation[i] = level - 1.0 / g;
        capacity += (level * g).ln();
    }
    Ok((allocation, capacity / std::f64::consts::LN_2))
}

/// Worst normalized KKT violation of an allocation: budget mismatch,
/// negative power, unequal inverse water levels among active channels, or an
/// inactive channel whose gain exceeds the water level's cutoff.
pub fn waterfill_kkt_residual(gains: &[f64], allocation: &[f64], power: f64) -> f64 {
    assert_eq!(gains.len(), allocation.len(), "allocation length mismatch");
    let total: f64 = allocation.iter().sum();
    let mut worst = (total - power).abs() / power;
    // λ = g/(1 + g p) must be one constant on active channels and an upper
    // bound on the gain of inactive ones.
    let mut lambda = 0.0;
    let mut active = 0;
    for (&g, &p) in gains.iter().zip(allocation) {
        worst = worst.max(-p / power);
        if p > 0.0 {
            lambda += g / (1.0 + g * p);
            active += 1;
        }
    }
    if active == 0 {
        return worst;
    }
    lambda /= active as f64;
    for (&g, &p) in gains.iter().zip(allocation) {
        if p > 0.0 {
            let li = g / (1.0 + g * p);
            worst = worst.max((li - lambda).abs() / lambda);
        } else if g > lambda {
            worst = worst.max((g - lambda) / lambda);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Mutual information
// ---------------------------------------------------------------------------

/// Equal-power mutual information from squared singular values:
/// `Σ log2(1 + (P/(σ² n_t)) s_i²)`, accumulated via `ln_1p` for stability.
pub fn mi_equal_power_from_gains(
    squared_singulars: &[f64],
    snr: &SnrPoint,
    tx_antennas: usize,
) -> f64 {
    let per_branch = snr.rho() / tx_antennas as f64;
    squared_singulars
        .iter()
        .map(|&s2| (per_branch * s2).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2
}

/// Equal-power mutual information `log2 det(I + (P/(σ² n_t)) H Hᴴ)` of an
/// assembled channel, computed through its singular values.
pub fn mi_equal_power(channel: &DMatrix<Complex64>, snr: &SnrPoint) -> Result<f64> {
    if channel.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Numerical(
            "channel matrix contains non-finite entries".into(),
        ));
    }
    let gains = squared_singular_values(channel);
    Ok(mi_equal_power_from_gains(&gains, snr, channel.ncols()))
}

/// Squared singular values of a complex matrix, descending.
pub fn squared_singular_values(channel: &DMatrix<Complex64>) -> Vec<f64> {
    let svd = channel.clone().svd(false, false);
    let mut gains: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    gains.sort_by(|a, b| b.total_cmp(a));
    gains
}

// ---------------------------------------------------------------------------
// Theoretical ceilings
// ---------------------------------------------------------------------------

/// Degrees-of-freedom limit `|Ω| · min{L, 1/Γ}`: the aperture in wavelengths
/// saturates once it exceeds the scattering coherence scale `1/Γ`.
pub fn dof_limit(support: &AngularSupport, gamma: f64, half_count: f64) -> f64 {
    assert!(gamma > 0.0, "correlation width must be positive");
    assert!(half_count >= 0.0, "aperture must be nonnegative");
    support.measure() * half_count.min(1.0 / gamma)
}

/// Capacity ceiling as a sum over concentration-kernel eigenvalues:
/// `Σ log2(1 + (P/σ²) e_l)` over eigenvalues above [`SPECTRUM_FLOOR`].
pub fn capacity_bound_eigen(spectrum: &EigenSpectrum, snr: &SnrPoint) -> f64 {
    let rho = snr.rho();
    spectrum
        .eigenvalues
        .iter()
        .filter(|&&e| e > SPECTRUM_FLOOR)
        .map(|&e| (rho * e).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2
}

/// SNR-dependent DoF excess per cluster: `f(ρ) = max(ln ρ, 0) / (2π²)`.
fn snr_excess(rho: f64) -> f64 {
    rho.ln().max(0.0) / (2.0 * std::f64::consts::PI * std::f64::consts::PI)
}

/// Two-term closed form of the capacity ceiling, in bits.
///
/// Multi-bounce: `[|Ω|Δ + M·ln(2π|Ω|Δ)·f(ρ)] · log2(1 + ρ)`. Single-bounce:
/// the per-cluster split `[|Ω|Δ + Σ_i ln(2π|Ω_i|Δ)·f(ρ/M)] · log2(1 + ρ/M)`
/// with the power budget divided across clusters. `Δ` is the effective
/// aperture `min{L, 1/Γ}`.
pub fn capacity_bound_closed_form(
    support: &AngularSupport,
    delta: f64,
    snr: &SnrPoint,
    bounce: Bounce,
) -> Result<f64> {
    let aw = support.measure() * delta;
    if aw <= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "closed-form bound needs |Ω|Δ > 1, got {aw}"
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let bits = match bounce {
        Bounce::Multi => {
            let rho = snr.rho();
            let m = support.cluster_count() as f64;
            (aw + m * (two_pi * aw).ln() * snr_excess(rho)) * rho.ln_1p()
        }
        Bounce::Single => {
            let rho = snr.rho() / support.cluster_count() as f64;
            let log_sum: f64 = support
                .intervals()
                .iter()
                .map(|&(a, b)| (two_pi * (b - a) * delta).ln())
                .sum();
            (aw + log_sum * snr_excess(rho)) * rho.ln_1p()
        }
    };
    Ok(bits / std::f64::consts::LN_2)
}

/// Diversity ceiling: `|Ω_t||Ω_r|/(Γ_t Γ_r)` for multi-bounce scattering, or
/// the per-cluster sum `Σ_i |Ω_{t,i}||Ω_{r,i}|/(Γ_t Γ_r)` for single-bounce.
pub fn diversity_limits(
    tx_support: &AngularSupport,
    rx_support: &AngularSupport,
    gamma_t: f64,
    gamma_r: f64,
    bounce: Bounce,
) -> Result<f64> {
    if !gamma_t.is_finite() || gamma_t <= 0.0 || !gamma_r.is_finite() || gamma_r <= 0.0 {
        return Err(Error::InvalidConfig(
            "correlation widths must be positive".into(),
        ));
    }
    match bounce {
        Bounce::Multi => Ok(tx_support.measure() * rx_support.measure() / (gamma_t * gamma_r)),
        Bounce::Single => {
            if tx_support.cluster_count() != rx_support.cluster_count() {
                return Err(Error::InvalidConfig(format!(
                    "single-bounce pairing needs equal cluster counts, got {} vs {}",
                    tx_support.cluster_count(),
                    rx_support.cluster_count()
                )));
            }
            Ok(tx_support
                .intervals()
                .iter()
                .zip(rx_support.intervals())
                .map(|(&(ta, tb), &(ra, rb))| (tb - ta) * (rb - ra))
                .sum::<f64>()
                / (gamma_t * gamma_r))
        }
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo ergodic sweep
// ---------------------------------------------------------------------------

/// Everything the sweep needs: environment geometry, the grid of sweep
/// points, Monte Carlo size, and determinism/parallelism knobs.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub rx_support: AngularSupport,
    pub tx_support: AngularSupport,
    /// Correlation widths, applied to both axes.
    pub gammas: Vec<f64>,
    /// Total antenna counts per array; each must be odd.
    pub antennas: Vec<usize>,
    pub snrs_db: Vec<f64>,
    pub grid_k: u32,
    pub trials: usize,
    pub seed: u64,
    pub bounce: Bounce,
    /// Worker threads; 0 uses the default pool size.
    pub workers: usize,
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.antennas.is_empty() || self.snrs_db.is_empty() {
            return Err(Error::InvalidConfig(
                "gamma, antenna, and SNR lists must be nonempty".into(),
            ));
        }
        for &a in &self.antennas {
            if a % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "antenna counts must be odd (centered arrays), got {a}"
                )));
            }
            if a > 2 * self.grid_k as usize + 1 {
                return Err(Error::InvalidConfig(format!(
                    "antenna count {a} exceeds the grid's {} nodes",
                    2 * self.grid_k as usize + 1
                )));
            }
        }
        if self.trials < 2 {
            return Err(Error::InvalidConfig(
                "confidence intervals need trials >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// One sweep point: Monte Carlo means with confidence half-widths, the
/// normalizer, and the theoretical DoF limit.
#[derive(Debug, Clone)]
pub struct CapacitySweepResult {
    pub gamma: f64,
    pub antennas: usize,
    pub snr_db: f64,
    /// Mean equal-power mutual information, bits.
    pub mi_equal_power_bits: f64,
    /// Mean waterfilling capacity, bits.
    pub capacity_wf_bits: f64,
    /// `C0 = log2(1 + P/σ²)`, bits.
    pub c0_bits: f64,
    /// `mi_equal_power_bits / c0_bits`.
    pub mi_norm: f64,
    /// `capacity_wf_bits / c0_bits`.
    pub cap_norm: f64,
    /// 95% confidence half-width of the mutual-information mean, bits.
    pub ci_mi: f64,
    /// 95% confidence half-width of the capacity mean, bits.
    pub ci_cap: f64,
    /// `|Ω_r| · min{L, 1/Γ}` for this row's aperture and width.
    pub dof_limit: f64,
    pub trials: usize,
}

/// Monte Carlo sweep over (Γ, antennas, SNR).
///
/// Per trial, one field is drawn (stream `seed ⊕ trial_index`) and assembled
/// once at the largest aperture; every smaller array is its center block, and
/// one SVD per (trial, aperture) serves all SNRs. Rows come out sorted by
/// (gamma, antennas, snr_db). Results are bit-identical for any worker count
/// because per-trial values are reduced sequentially in trial order.
pub fn ergodic_sweep(config: &SweepConfig) -> Result<Vec<CapacitySweepResult>> {
    config.validate()?;
    let mut gammas = config.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    let mut antennas = config.antennas.clone();
    antennas.sort_unstable();
    let mut snrs_db = config.snrs_db.clone();
    snrs_db.sort_by(f64::total_cmp);
    let snrs: Vec<SnrPoint> = snrs_db.iter().map(|&db| SnrPoint::from_db(db)).collect();
    let l_max = (antennas[antennas.len() - 1] - 1) / 2;

    let run = || -> Result<Vec<CapacitySweepResult>> {
        let mut rows = Vec::with_capacity(gammas.len() * antennas.len() * snrs.len());
        for &gamma in &gammas {
            let scatter = ScatterConfig::new(
                config.rx_support.clone(),
                config.tx_support.clone(),
                gamma,
                gamma,
                config.grid_k,
                config.bounce,
            )?;
            let model = FieldModel::new(scatter)?;
            let assembler = ChannelAssembler::new(&model, l_max)?;
            let cells = antennas.len() * snrs.len();

            let per_trial: Result<Vec<Vec<(f64, f64)>>> = {
                use rayon::prelude::*;
                (0..config.trials)
                    .into_par_iter()
                    .map(|t| -> Result<Vec<(f64, f64)>> {
                        let field = model.sample_field(config.seed ^ t as u64);
                        let channel = assembler.assemble(&field)?;
                        let mut cell = Vec::with_capacity(cells);
                        for &a in &antennas {
                            let half = (a - 1) / 2;
                            let sub = center_block(&channel, half);
                            let gains = squared_singular_values(&sub);
                            for snr in &snrs {
                                let mi = mi_equal_power_from_gains(&gains, snr, a);
                                let (_, cap) = waterfill(&gains, snr.rho())?;
                                cell.push((mi, cap));
                            }
                        }
                        Ok(cell)
                    })
                    .collect()
            };
            let per_trial = per_trial?;

            for (ai, &a) in antennas.iter().enumerate() {
                for (si, snr) in snrs.iter().enumerate() {
                    let idx = ai * snrs.len() + si;
                    let mut mean_mi = 0.0;
                    let mut mean_cap = 0.0;
                    for trial in &per_trial {
                        mean_mi += trial[idx].0;
                        mean_cap += trial[idx].1;
                    }
                    let t = config.trials as f64;
                    mean_mi /= t;
                    mean_cap /= t;
                    let mut var_mi = 0.0;
                    let mut var_cap = 0.0;
                    for trial in &per_trial {
                        var_mi += (trial[idx].0 - mean_mi).powi(2);
                        var_cap += (trial[idx].1 - mean_cap).powi(2);
                    }
                    var_mi /= t - 1.0;
                    var_cap /= t - 1.0;
                    let ci = |v: f64| 1.96 * (v / t).sqrt();
                    let c0 = snr.rho().ln_1p() / std::f64::consts::LN_2;
                    rows.push(CapacitySweepResult {
                        gamma,
                        antennas: a,
                        snr_db: snr.snr_db,
                        mi_equal_power_bits: mean_mi,
                        capacity_wf_bits: mean_cap,
                        c0_bits: c0,
                        mi_norm: mean_mi / c0,
                        cap_norm: mean_cap / c0,
                        ci_mi: ci(var_mi),
                        ci_cap: ci(var_cap),
                        dof_limit: dof_limit(&config.rx_support, gamma, ((a - 1) / 2) as f64),
                        trials: config.trials,
                    });
                }
            }
        }
        Ok(rows)
    };

    if config.workers == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;
        pool.install(run)
    }
}

// ---------------------------------------------------------------------------
