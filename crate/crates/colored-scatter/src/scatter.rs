//! Synthesis of colored scattering fields on an angular grid.
//!
//! The scattering response is a zero-mean proper complex Gaussian field
//! `h̃(k, l)` indexed by receive/transmit grid nodes `α = k/K ∈ [−1, 1]`,
//! with a separable sinc autocorrelation of width `γ` per axis. Narrow `γ`
//! means rich (nearly white) scattering; wide `γ` means strongly correlated
//! scattering with few effective degrees of freedom. This module provides:
//!
//! - the per-axis covariance and its positive-semidefinite square root
//!   ([`covariance_factor`]), with eigenvalue clipping and a conditioning
//!   guard;
//! - field synthesis by factor sandwiching ([`FieldModel::sample_field`]),
//!   multi-bounce (one global block) or single-bounce (independent
//!   per-cluster blocks);
//! - a Karhunen-Loève whiteness test ([`kl_whiteness_check`]) verifying that
//!   fields projected onto the covariance eigenbasis have i.i.d. unit
//!   circular Gaussian coordinates;
//! - a binary dump format for sampled fields ([`ScatterField::write_binary`]).
//!
//! Sampling is deterministic: a given (config, seed) pair always produces the
//! same field, and per-trial streams are derived as `seed ⊕ trial_index` so
//! parallel trials stay reproducible.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::kernel::sinc;
use crate::support::AngularSupport;

/// Autocorrelation of the scattering field across an angular separation:
/// `(1/γ) · sinc(Δ/γ)`.
pub fn acf_value(gamma: f64, delta_angle: f64) -> f64 {
    assert!(gamma > 0.0, "correlation width must be positive");
    sinc(delta_angle / gamma) / gamma
}

/// Whether the field couples all cluster pairs or only like-indexed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bounce {
    /// Scattering supported on the full product Ω_r × Ω_t.
    Multi,
    /// Independent per-cluster blocks Ω_{r,i} × Ω_{t,i}, zero elsewhere.
    Single,
}

impl std::str::FromStr for Bounce {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(Bounce::Multi),
            "single" => Ok(Bounce::Single),
            other => Err(Error::InvalidConfig(format!(
                "bounce must be 'multi' or 'single', got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for Bounce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Bounce::Multi => "multi",
            Bounce::Single => "single",
        })
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Full description of a scattering environment on a grid of `2K + 1`
/// directional-cosine nodes `α = k/K`.
#[derive(Debug, Clone)]
pub struct ScatterConfig {
    pub rx_support: AngularSupport,
    pub tx_support: AngularSupport,
    pub gamma_r: f64,
    pub gamma_t: f64,
    pub grid_k: u32,
    pub bounce: Bounce,
}

impl ScatterConfig {
    pub fn new(
        rx_support: AngularSupport,
        tx_support: AngularSupport,
        gamma_r: f64,
        gamma_t: f64,
        grid_k: u32,
        bounce: Bounce,
    ) -> Result<Self> {
        for (name, g) in [("gamma_r", gamma_r), ("gamma_t", gamma_t)] {
            if !g.is_finite() || g <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {g}"
                )));
            }
        }
        if grid_k == 0 {
            return Err(Error::InvalidConfig("grid_k must be at least 1".into()));
        }
        if bounce == Bounce::Single && rx_support.cluster_count() != tx_support.cluster_count() {
            return Err(Error::InvalidConfig(format!(
                "single-bounce pairing needs equal cluster counts, got {} receive vs {} transmit",
                rx_support.cluster_count(),
                tx_support.cluster_count()
            )));
        }
        Ok(Self {
            rx_support,
            tx_support,
            gamma_r,
            gamma_t,
            grid_k,
            bounce,
        })
    }
}

/// Grid node indices `k` whose directional cosine `k/K` falls inside the
/// support (boundary-inclusive), ascending.
pub fn support_node_indices(support: &AngularSupport, grid_k: u32) -> Result<Vec<i32>> {
    if !support.within_unit() {
        return Err(Error::InvalidConfig(format!(
            "directional-cosine support must lie within [-1, 1], got {}",
            support.to_text()
        )));
    }
    let k = i64::from(grid_k);
    let mut indices = Vec::new();
    for &(a, b) in support.intervals() {
        // Smallest and largest integers k with a ≤ k/K ≤ b.
        let lo = (a * k as f64).ceil() as i64;
        let hi = (b * k as f64).floor() as i64;
        for i in lo..=hi {
            indices.push(i as i32);
        }
    }
    if indices.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no grid nodes fall inside the support {} at grid_k = {grid_k}",
            support.to_text()
        )));
    }
    Ok(indices)
}

// ---------------------------------------------------------------------------
// Covariance and its square root
// ---------------------------------------------------------------------------

/// Relative eigenvalue threshold below which covariance modes are discarded.
pub const COVARIANCE_CLIP: f64 = 1e-10;

/// Largest tolerable clipped spectral mass, relative to the trace.
pub const MAX_CLIPPED_MASS: f64 = 1e-3;

/// One axis of the scattering covariance on its support nodes, together with
/// its positive-semidefinite square root.
///
/// `matrix` is `R_ij = (1/K) · (1/γ) · sinc((α_i − α_j)/γ)` on the support
/// nodes; the `1/K` grid-cell factor makes discrete sums over nodes
/// approximate continuous integrals, so the matrix is resolution-stable.
/// `factor` is the `n × rank` square root `S = U₊ · diag(√μ₊)` with
/// `S·Sᵀ = R` up to the clipped mass.
#[derive(Debug, Clone)]
pub struct ScatterCovariance {
    indices: Vec<i32>,
    grid_k: u32,
    gamma: f64,
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    clipped_mass: f64,
    trace: f64,
}

impl ScatterCovariance {
    pub fn indices(&self) -> &[i32] {
        &self.indices
    }

    pub fn grid_k(&self) -> u32 {
        self.grid_k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Directional cosines of the support nodes.
    pub fn nodes(&self) -> Vec<f64> {
        let k = f64::from(self.grid_k);
        self.indices.iter().map(|&i| f64::from(i) / k).collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The `n × rank` square root.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Kept eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// Spectral mass lost to clipping (negative and near-zero eigenvalues).
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// Number of eigenvalues within a factor two of the largest — the count
    /// of effectively active scattering modes, about `|Ω|/γ`.
    pub fn dominant_mode_count(&self) -> usize {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0);
        self.eigenvalues.iter().filter(|&&l| l >= 0.5 * top).count()
    }

    /// Projection taking a field axis into unit-variance eigencoordinates:
    /// `modes × n` matrix with rows `u_iᵀ / √μ_i`.
    pub fn whitening(&self, modes: usize) -> DMatrix<f64> {
        assert!(modes <= self.rank(), "whitening modes exceed rank");
        let n = self.indices.len();
        DMatrix::from_fn(modes, n, |i, j| self.factor[(j, i)] / self.eigenvalues[i])
    }
}

/// Builds one axis of the scattering covariance and its square root by dense
/// eigendecomposition. Negative eigenvalues are clipped to zero and
/// eigenvalues below [`COVARIANCE_CLIP`]`·μ_max` are dropped; if the clipped
/// mass exceeds [`MAX_CLIPPED_MASS`]`·trace` the covariance is rejected as
/// ill-conditioned.
pub fn covariance_factor(
    support: &AngularSupport,
    gamma: f64,
    grid_k: u32,
) -> Result<ScatterCovariance> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "correlation width must be positive, got {gamma}"
        )));
    }
    // The sinc ACF occupies the angular-frequency band |f| ≤ 1/(2γ); the grid
    // samples at rate K, so γK ≥ 1 is exactly the alias-free condition. The
    // boundary γ = 1/K is the white limit (diagonal covariance).
    if gamma * f64::from(grid_k) < 1.0 - 1e-12 {
        return Err(Error::UnderResolvedKernel(format!(
            "correlation width {gamma} is below the grid cell 1/{grid_k}; \
             need gamma * grid_k >= 1"
        )));
    }
    let indices = support_node_indices(support, grid_k)?;
    let nodes: Vec<f64> = indices
        .iter()
        .map(|&i| f64::from(i) / f64::from(grid_k))
        .collect();
    let n = nodes.len();
    let cell = 1.0 / f64::from(grid_k);
    let matrix = DMatrix::from_fn(n, n, |i, j| cell * acf_value(gamma, nodes[i] - nodes[j]));
    let trace = matrix.trace();

    let eig = nalgebra::SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let keep_above = COVARIANCE_CLIP * top;

    let mut eigenvalues = Vec::new();
    let mut kept_cols = Vec::new();
    let mut clipped_mass = 0.0;
    for &idx in &order {
        let mu = eig.eigenvalues[idx];
        if mu > keep_above {
            eigenvalues.push(mu);
            kept_cols.push(idx);
        } else {
            clipped_mass += mu.abs();
        }
    }
    if clipped_mass > MAX_CLIPPED_MASS * trace {
        return Err(Error::CovarianceIllConditioned(format!(
            "clipped spectral mass {clipped_mass:.3e} exceeds {MAX_CLIPPED_MASS:.0e} of trace {trace:.3e}"
        )));
    }

    let rank = kept_cols.len();
    let mut factor = DMatrix::zeros(n, rank);
    for (col, (&idx, &mu)) in kept_cols.iter().zip(&eigenvalues).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // Deterministic sign: the largest-magnitude component points up.
        let mut lead = 0;
        for i in 1..n {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign * mu.sqrt();
        for i in 0..n {
            factor[(i, col)] = scale * v[i];
        }
    }

    Ok(ScatterCovariance {
        indices,
        grid_k,
        gamma,
        matrix,
        factor,
        eigenvalues,
        clipped_mass,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Field synthesis
// ---------------------------------------------------------------------------

/// One independently drawn block of the field: a sub-rectangle of the full
/// support grid with its own covariance factors.
#[derive(Debug, Clone)]
pub(crate) struct FieldBlock {
    pub(crate) row_start: usize,
    pub(crate) col_start: usize,
    pub(crate) rx: ScatterCovariance,
    pub(crate) tx: ScatterCovariance,
}

/// A scattering environment ready to sample: per-axis covariance square
/// roots, plus per-cluster factor blocks in the single-bounce case.
#[derive(Debug, Clone)]
pub struct FieldModel {
    config: ScatterConfig,
    rx: ScatterCovariance,
    tx: ScatterCovariance,
    /// Empty for multi-bounce; one entry per cluster pair for single-bounce.
    pub(crate) single_blocks: Vec<FieldBlock>,
}

impl FieldModel {
    pub fn new(config: ScatterConfig) -> Result<Self> {
        let rx = covariance_factor(&config.rx_support, config.gamma_r, config.grid_k)?;
        let tx = covariance_factor(&config.tx_support, config.gamma_t, config.grid_k)?;
        let mut single_blocks = Vec::new();
        if config.bounce == Bounce::Single {
            let mut row_start = 0;
            let mut col_start = 0;
            for (&rx_iv, &tx_iv) in config
                .rx_support
                .intervals()
                .iter()
                .zip(config.tx_support.intervals())
            {
                let rx_sub = covariance_factor(
                    &AngularSupport::new(vec![rx_iv])?,
                    config.gamma_r,
                    config.grid_k,
                )?;
                let tx_sub = covariance_factor(
                    &AngularSupport::new(vec![tx_iv])?,
                    config.gamma_t,
                    config.grid_k,
                )?;
                let (nr, nt) = (rx_sub.indices.len(), tx_sub.indices.len());
                single_blocks.push(FieldBlock {
                    row_start,
                    col_start,
                    rx: rx_sub,
                    tx: tx_sub,
                });
                row_start += nr;
                col_start += nt;
            }
            // Cluster blocks partition the support nodes in order.
            debug_assert_eq!(row_start, rx.indices.len());
            debug_assert_eq!(col_start, tx.indices.len());
        }
        Ok(Self {
            config,
            rx,
            tx,
            single_blocks,
        })
    }

    pub fn config(&self) -> &ScatterConfig {
        &self.config
    }

    pub fn rx(&self) -> &ScatterCovariance {
        &self.rx
    }

    pub fn tx(&self) -> &ScatterCovariance {
        &self.tx
    }

    /// Draws one field realization from a seed. Equal seeds give bit-identical
    /// fields; Monte Carlo trials should pass `seed ^ trial_index`.
    pub fn sample_field(&self, seed: u64) -> ScatterField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_field_with(&mut rng)
    }

    /// Draws one field realization from an explicit generator.
    pub fn sample_field_with(&self, rng: &mut impl Rng) -> ScatterField {
        let n_r = self.rx.indices.len();
        let n_t = self.tx.indices.len();
        let mut values = DMatrix::zeros(n_r, n_t);
        match self.config.bounce {
            Bounce::Multi => {
                let block = sandwich(&self.rx.factor, &self.tx.factor, rng);
                values.copy_from(&block);
            }
            Bounce::Single => {
                for b in &self.single_blocks {
                    let block = sandwich(&b.rx.factor, &b.tx.factor, rng);
                    values
                        .view_mut((b.row_start, b.col_start), (block.nrows(), block.ncols()))
                        .copy_from(&block);
                }
            }
        }
        ScatterField {
            grid_k: self.config.grid_k,
            rx_indices: self.rx.indices.clone(),
            tx_indices: self.tx.indices.clone(),
            values,
        }
    }
}

/// `S_r · G · S_tᵀ` with `G` i.i.d. circular-symmetric complex Gaussian of
/// unit variance, drawn row-major with interleaved real/imaginary parts.
fn sandwich(
    rx_factor: &DMatrix<f64>,
    tx_factor: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> DMatrix<Complex64> {
    let (r1, r2) = (rx_factor.ncols(), tx_factor.ncols());
    let mut g_re = DMatrix::zeros(r1, r2);
    let mut g_im = DMatrix::zeros(r1, r2);
    for i in 0..r1 {
        for j in 0..r2 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            g_re[(i, j)] = re * std::f64::consts::FRAC_1_SQRT_2;
            g_im[(i, j)] = im * std::f64::consts::FRAC_1_SQRT_2;
        }
    }
    let f_re = rx_factor * g_re * tx_factor.transpose();
    let f_im = rx_factor * g_im * tx_factor.transpose();
    DMatrix::from_fn(f_re.nrows(), f_re.ncols(), |i, j| {
        Complex64::new(f_re[(i, j)], f_im[(i, j)])
    })
}

// ---------------------------------------------------------------------------
// Sampled fields and their binary dump
// ---------------------------------------------------------------------------

/// One realization of the scattering field, restricted to the support nodes.
///
/// `values[(i, j)]` is the response from transmit node `tx_indices[j]` to
/// receive node `rx_indices[i]`; directional cosines are `index / grid_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterField {
    pub grid_k: u32,
    pub rx_indices: Vec<i32>,
    pub tx_indices: Vec<i32>,
    pub values: DMatrix<Complex64>,
}

/// File identifier of the field dump format.
const FIELD_MAGIC: &[u8; 4] = b"CSFD";
const FIELD_VERSION: u32 = 1;

impl ScatterField {
    /// Writes the field in a little-endian binary layout:
    ///
    /// | bytes          | content                                   |
    /// |----------------|-------------------------------------------|
    /// | 0..4           | magic `"CSFD"`                            |
    /// | 4..8           | format version (u32, currently 1)         |
    /// | 8..12          | grid_k (u32)                              |
    /// | 12..16         | receive node count `n_r` (u32)            |
    /// | 16..20         | transmit node count `n_t` (u32)           |
    /// | …              | `n_r` receive node indices (i32)          |
    /// | …              | `n_t` transmit node indices (i32)         |
    /// | …              | `n_r · n_t` row-major (re, im) f32 pairs  |
    ///
    /// The index lists double as the support mask; values are stored at f32
    /// precision.
    pub fn write_binary(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(FIELD_MAGIC)?;
        out.write_all(&FIELD_VERSION.to_le_bytes())?;
        out.write_all(&self.grid_k.to_le_bytes())?;
        out.write_all(&(self.rx_indices.len() as u32).to_le_bytes())?;
        out.write_all(&(self.tx_indices.len() as u32).to_le_bytes())?;
        for &k in &self.rx_indices {
            out.write_all(&k.to_le_bytes())?;
        }
        for &k in &self.tx_indices {
            out.write_all(&k.to_le_bytes())?;
        }
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                let v = self.values[(i, j)];
                out.write_all(&(v.re as f32).to_le_bytes())?;
                out.write_all(&(v.im as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a field written by [`write_binary`](Self::write_binary).
    pub fn read_binary(input: &mut impl Read) -> Result<Self> {
        fn read_u32(input: &mut impl Read) -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::InvalidConfig(format!(
                "not a field dump: bad magic {magic:?}"
            )));
        }
        let version = read_u32(input)?;
        if version != FIELD_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported field dump version {version}"
            )));
        }
        let grid_k = read_u32(input)?;
        let n_r = read_u32(input)? as usize;
        let n_t = read_u32(input)? as usize;
        let read_i32 = |input: &mut dyn Read| -> Result<i32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(i32::from_le_bytes(b))
        };
        let mut rx_indices = Vec::with_capacity(n_r);
        for _ in 0..n_r {
            rx_indices.push(read_i32(input)?);
        }
        let mut tx_indices = Vec::with_capacity(n_t);
        for _ in 0..n_t {
            tx_indices.push(read_i32(input)?);
        }
        let mut values = DMatrix::zeros(n_r, n_t);
        let mut buf = [0u8; 8];
        for i in 0..n_r {
            for j in 0..n_t {
                input.read_exact(&mut buf)?;
                let re = f32::from_le_bytes(buf[0..4].try_into().unwrap());
                let im = f32::from_le_bytes(buf[4..8].try_into().unwrap());
                values[(i, j)] = Complex64::new(f64::from(re), f64::from(im));
            }
        }
        Ok(ScatterField {
            grid_k,
            rx_indices,
            tx_indices,
            values,
        })
    }
}

// ---------------------------------------------------------------------------
// Karhunen-Loève whiteness check
// ---------------------------------------------------------------------------

/// Largest number of coordinates over which full pairwise covariance
/// statistics are accumulated; beyond this the pair set is truncated to keep
/// the check tractable (means and diagonals still cover every coordinate).
const MAX_PAIR_COORDS: usize = 128;

/// Trials per deterministic accumulation chunk; results are independent of
/// worker count because chunks are reduced in order.
const WHITENESS_CHUNK: usize = 64;

/// Outcome of projecting sampled fields onto covariance eigenvector pairs.
///
/// If the synthesis is correct, the projected coordinates are i.i.d. unit
/// circular Gaussians, so every reported statistic is `O(1/√trials)`; each is
/// compared against the 5σ threshold `5/√trials`.
#[derive(Debug, Clone)]
pub struct WhitenessReport {
    pub trials: usize,
    pub rx_modes: usize,
    pub tx_modes: usize,
    /// 5σ acceptance threshold `5/√trials`.
    pub threshold: f64,
    /// Largest `|mean|` over coordinates (should vanish: zero-mean field).
    pub max_mean_abs: f64,
    /// Largest `|E|h|² − 1|` over coordinates (unit variance).
    pub max_diag_dev: f64,
    /// Largest off-diagonal `|E h_a h_b*|` (uncorrelated coordinates).
    pub max_offdiag_cov: f64,
    /// Largest `|E h_a h_b|` without conjugation (properness).
    pub max_pseudo: f64,
}

impl WhitenessReport {
    pub fn passes(&self) -> bool {
        self.max_mean_abs < self.threshold
            && self.max_diag_dev < self.threshold
            && self.max_offdiag_cov < self.threshold
            && self.max_pseudo < self.threshold
    }
}

/// Projects `trials` sampled fields onto the dominant eigenvector pairs of
/// the given per-axis bases and reports moment statistics of the projected
/// coordinates.
///
/// Passing the model's own covariances is the positive control: coordinates
/// come out i.i.d. unit circular Gaussian. Passing covariances of a different
/// correlation width is the negative control: off-diagonal correlations then
/// exceed the threshold. Meaningful for multi-bounce models, whose covariance
/// is exactly the per-axis Kronecker product.
pub fn kl_whiteness_check(
    model: &FieldModel,
    rx_basis: &ScatterCovariance,
    tx_basis: &ScatterCovariance,
    trials: usize,
    seed: u64,
) -> Result<WhitenessReport> {
    if trials < 2 {
        return Err(Error::InvalidConfig("whiteness check needs trials >= 2".into()));
    }
    if rx_basis.indices != model.rx.indices || tx_basis.indices != model.tx.indices {
        return Err(Error::MismatchedGrids(
            "whiteness basis must live on the model's support nodes".into(),
        ));
    }
    let n_r = rx_basis.dominant_mode_count();
    let n_t = tx_basis.dominant_mode_count();
    let coords = n_r * n_t;
    let pair_coords = coords.min(MAX_PAIR_COORDS);
    let w_r = rx_basis.whitening(n_r);
    let w_t = tx_basis.whitening(n_t);

    struct Chunk {
        mean: Vec<Complex64>,
        diag: Vec<f64>,
        pseudo_diag: Vec<Complex64>,
        cov: DMatrix<Complex64>,
        pseudo: DMatrix<Complex64>,
    }

    let chunk_count = trials.div_ceil(WHITENESS_CHUNK);
    let chunks: Vec<Chunk> = {
        use rayon::prelude::*;
        (0..chunk_count)
            .into_par_iter()
            .map(|c| {
                let mut acc = Chunk {
                    mean: vec![Complex64::default(); coords],
                    diag: vec![0.0; coords],
                    pseudo_diag: vec![Complex64::default(); coords],
                    cov: DMatrix::zeros(pair_coords, pair_coords),
                    pseudo: DMatrix::zeros(pair_coords, pair_coords),
                };
                let lo = c * WHITENESS_CHUNK;
                let hi = ((c + 1) * WHITENESS_CHUNK).min(trials);
                for t in lo..hi {
                    let field = model.sample_field(seed ^ t as u64);
                    // h = W_r · F · W_tᵀ, flattened row-major.
                    let projected = project(&w_r, &field.values, &w_t);
                    let mut h = Vec::with_capacity(coords);
                    for i in 0..n_r {
                        for j in 0..n_t {
                            h.push(projected[(i, j)]);
                        }
                    }
                    for (a, &v) in h.iter().enumerate() {
                        acc.mean[a] += v;
                        acc.diag[a] += v.norm_sqr();
                        acc.pseudo_diag[a] += v * v;
                    }
                    for a in 0..pair_coords {
                        for b in 0..pair_coords {
                            acc.cov[(a, b)] += h[a] * h[b].conj();
                            acc.pseudo[(a, b)] += h[a] * h[b];
                        }
                    }
                }
                acc
            })
            .collect()
    };

    let mut total = Chunk {
        mean: vec![Complex64::default(); coords],
        diag: vec![0.0; coords],
        pseudo_diag: vec![Complex64::default(); coords],
        cov: DMatrix::zeros(pair_coords, pair_coords),
        pseudo: DMatrix::zeros(pair_coords, pair_coords),
    };
    for c in chunks {
        for a in 0..coords {
            total.mean[a] += c.mean[a];
            total.diag[a] += c.diag[a];
            total.pseudo_diag[a] += c.pseudo_diag[a];
        }
        total.cov += c.cov;
        total.pseudo += c.pseudo;
    }

    let t = trials as f64;
    let mut max_mean_abs: f64 = 0.0;
    let mut max_diag_dev: f64 = 0.0;
    let mut max_pseudo: f64 = 0.0;
    for a in 0..coords {
        max_mean_abs = max_mean_abs.max((total.mean[a] / t).norm());
        max_diag_dev = max_diag_dev.max((total.diag[a] / t - 1.0).abs());
        max_pseudo = max_pseudo.max((total.pseudo_diag[a] / t).norm());
    }
    let mut max_offdiag_cov: f64 = 0.0;
    for a in 0..pair_coords {
        for b in 0..pair_coords {
            if a != b {
                max_offdiag_cov = max_offdiag_cov.max((total.cov[(a, b)] / t).norm());
            }
            max_pseudo = max_pseudo.max((total.pseudo[(a, b)] / t).norm());
        }
    }

    Ok(WhitenessReport {
        trials,
        rx_modes: n_r,
        tx_modes: n_t,
        threshold: 5.0 / t.sqrt(),
        max_mean_abs,
        max_diag_dev,
        max_offdiag_cov,
        max_pseudo,
    })
}

/// `W_r · F · W_tᵀ` for real projections and a complex field.
fn project(w_r: &DMatrix<f64>, field: &DMatrix<Complex64>, w_t: &DMatrix<f64>) -> DMatrix<Complex64> {
    let to_complex = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
    to_complex(w_r) * field * to_complex(w_t).transpose()
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn three_cluster() -> AngularSupport {
        AngularSupport::new(vec![(-1.0, -0.7), (-0.15, 0.15), (0.7, 1.0)]).unwrap()
    }

    fn center_interval() -> AngularSupport {
        AngularSupport::new(vec![(-0.15, 0.15)]).unwrap()
    }

    #[test]
    fn acf_closed_forms() {
        assert!((acf_value(0.1, 0.0) - 10.0).abs() < 1e-12);
        assert!(acf_value(0.1, 0.1).abs() < 1e-12, "sinc vanishes at 1");
        assert!((acf_value(0.05, 0.025) - 40.0 / std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn support_nodes_are_boundary_inclusive() {
        let sup = AngularSupport::new(vec![(0.2, 0.5)]).unwrap();
        let idx = support_node_indices(&sup, 10).unwrap();
        assert_eq!(idx, vec![2, 3, 4, 5]);
        let sup = AngularSupport::new(vec![(-1.0, 1.0)]).unwrap();
        assert_eq!(support_node_indices(&sup, 3).unwrap(), vec![-3, -2, -1, 0, 1, 2, 3]);
        let outside = AngularSupport::new(vec![(0.5, 1.5)]).unwrap();
        assert!(support_node_indices(&outside, 10).is_err());
    }

    #[test]
    fn white_limit_covariance_is_diagonal() {
        // γ equal to the grid cell puts every off-diagonal lag at a sinc zero.
        let k = 64;
        let cov = covariance_factor(&center_interval(), 1.0 / f64::from(k), k).unwrap();
        let n = cov.indices().len();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (cov.matrix()[(i, j)] - want).abs() < 1e-12,
                    "R[{i},{j}] = {}",
                    cov.matrix()[(i, j)]
                );
            }
        }
        assert_eq!(cov.rank(), n, "white covariance has full rank");
        // The factor of a diagonal matrix is diagonal up to column order.
        let r = cov.factor() * cov.factor().transpose();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_correlation_below_grid_cell() {
        let err = covariance_factor(&center_interval(), 0.5 / 64.0, 64).unwrap_err();
        assert!(
            err.to_string().contains("under-resolved kernel"),
            "unexpected error: {err}"
        );
    }

    #[test]
    fn factor_reconstructs_covariance() {
        let cov = covariance_factor(&three_cluster(), 0.1, 128).unwrap();
        let r = cov.factor() * cov.factor().transpose();
        let diff = (&r - cov.matrix()).norm() / cov.matrix().norm();
        assert!(diff < 1e-8, "Frobenius reconstruction error {diff}");
        assert!(
            cov.clipped_mass() < MAX_CLIPPED_MASS * cov.trace(),
            "clipped mass {}",
            cov.clipped_mass()
        );
    }

    #[test]
    fn covariance_rank_tracks_support_over_gamma() {
        // Single interval of measure 0.3 at γ = 0.1: about 3 strong modes
        // plus a logarithmic transition tail.
        let cov = covariance_factor(&center_interval(), 0.1, 512).unwrap();
        assert!((cov.trace() - 0.3 / 0.1).abs() < 0.05, "trace {}", cov.trace());
        let top = cov.eigenvalues()[0];
        let above_half = cov.eigenvalues().iter().filter(|&&l| l > 0.5 * top).count();
        assert_eq!(above_half, 3, "dominant modes");
        let at_1e6 = cov.eigenvalues().iter().filter(|&&l| l > 1e-6 * top).count();
        assert!(
            (7..=9).contains(&at_1e6),
            "count at 1e-6 threshold is {at_1e6}, expected 8 ± 1"
        );
    }

    fn small_model(bounce: Bounce) -> FieldModel {
        let config = ScatterConfig::new(
            three_cluster(),
            three_cluster(),
            0.1,
            0.1,
            128,
            bounce,
        )
        .unwrap();
        FieldModel::new(config).unwrap()
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let model = small_model(Bounce::Multi);
        let a = model.sample_field(42);
        let b = model.sample_field(42);
        let c = model.sample_field(43);
        assert_eq!(a, b, "same seed must reproduce the field bit-exactly");
        assert_ne!(a, c, "different seeds must differ");
    }

    #[test]
    fn field_moments_match_the_acf() {
        let model = small_model(Bounce::Multi);
        let trials = 2000;
        let k = f64::from(model.config().grid_k);
        // Fixed node pairs: (first rx, first tx) against a nearby pair.
        let (i1, j1, i2, j2) = (0usize, 0usize, 3usize, 2usize);
        let rx_nodes = model.rx().nodes();
        let tx_nodes = model.tx().nodes();
        let want = (1.0 / k) * acf_value(0.1, rx_nodes[i1] - rx_nodes[i2])
            * (1.0 / k)
            * acf_value(0.1, tx_nodes[j1] - tx_nodes[j2]);

        let mut sum_mean = Complex64::default();
        let mut sum_prod = Complex64::default();
        let mut sum_prod_sq = 0.0;
        let mut sum_pseudo = Complex64::default();
        let mut sum_abs_sq = 0.0;
        for t in 0..trials {
            let f = model.sample_field(7 ^ t as u64);
            let h1 = f.values[(i1, j1)];
            let h2 = f.values[(i2, j2)];
            let prod = h1 * h2.conj();
            sum_mean += h1;
            sum_prod += prod;
            sum_prod_sq += prod.norm_sqr();
            sum_pseudo += h1 * h1;
            sum_abs_sq += h1.norm_sqr();
        }
        let t = trials as f64;
        let mean = sum_mean / t;
        let prod_mean = sum_prod / t;
        let prod_var = (sum_prod_sq / t - prod_mean.norm_sqr()).max(0.0);
        let se_prod = (prod_var / t).sqrt();
        assert!(
            (prod_mean - Complex64::new(want, 0.0)).norm() < 5.0 * se_prod,
            "second moment {prod_mean} vs ACF {want}, se {se_prod}"
        );
        let se_mean = (sum_abs_sq / t / t).sqrt();
        assert!(mean.norm() < 5.0 * se_mean, "mean {mean}, se {se_mean}");
        let pseudo = sum_pseudo / t;
        let se_pseudo = (sum_abs_sq / t / t).sqrt() * std::f64::consts::SQRT_2;
        assert!(
            pseudo.norm() < 5.0 * se_pseudo,
            "pseudo-moment {pseudo}, se {se_pseudo}"
        );
    }

    #[test]
    fn single_bounce_vanishes_off_blocks_and_decorrelates_clusters() {
        let model = small_model(Bounce::Single);
        let nr0 = model.single_blocks[0].rx.indices().len();
        let nt0 = model.single_blocks[0].tx.indices().len();
        let f = model.sample_field(11);
        // Off-block entries are exactly zero.
        assert_eq!(f.values[(0, nt0 + 1)], Complex64::default());
        assert_eq!(f.values[(nr0 + 1, 0)], Complex64::default());
        assert_ne!(f.values[(0, 0)], Complex64::default());

        // Like-positioned entries in different cluster blocks are
        // statistically uncorrelated.
        let trials = 1500;
        let mut sum_cross = Complex64::default();
        let mut sum_sq = 0.0;
        for t in 0..trials {
            let f = model.sample_field(99 ^ t as u64);
            let a = f.values[(0, 0)];
            let b = f.values[(nr0, nt0)];
            sum_cross += a * b.conj();
            sum_sq += a.norm_sqr() * b.norm_sqr();
        }
        let t = trials as f64;
        let cross = sum_cross / t;
        let se = (sum_sq / t / t).sqrt();
        assert!(
            cross.norm() < 5.0 * se,
            "cross-cluster correlation {cross}, se {se}"
        );
    }

    #[test]
    fn single_bounce_requires_paired_clusters() {
        let err = ScatterConfig::new(
            three_cluster(),
            center_interval(),
            0.1,
            0.1,
            128,
            Bounce::Single,
        )
        .unwrap_err();
        assert!(err.to_string().contains("equal cluster counts"));
    }

    #[test]
    fn whiteness_passes_on_matched_basis_and_fails_on_mismatched() {
        let config = ScatterConfig::new(
            three_cluster(),
            three_cluster(),
            0.1,
            0.1,
            256,
            Bounce::Multi,
        )
        .unwrap();
        let model = FieldModel::new(config).unwrap();
        let report =
            kl_whiteness_check(&model, model.rx(), model.tx(), 1500, 2024).unwrap();
        assert!(
            report.passes(),
            "matched basis should pass: mean {} diag {} offdiag {} pseudo {} thr {}",
            report.max_mean_abs,
            report.max_diag_dev,
            report.max_offdiag_cov,
            report.max_pseudo,
            report.threshold
        );

        // Negative control: eigenbasis of a covariance with doubled width.
        let wrong = covariance_factor(&three_cluster(), 0.2, 256).unwrap();
        let bad = kl_whiteness_check(&model, &wrong, &wrong, 1500, 2024).unwrap();
        assert!(
            !bad.passes(),
            "mismatched basis must fail: offdiag {} diag {} thr {}",
            bad.max_offdiag_cov,
            bad.max_diag_dev,
            bad.threshold
        );
    }

    #[test]
    fn whiteness_rejects_foreign_grid() {
        let model = small_model(Bounce::Multi);
        let other = covariance_factor(&three_cluster(), 0.1, 256).unwrap();
        let err = kl_whiteness_check(&model, &other, &other, 100, 0).unwrap_err();
        assert!(err.to_string().contains("mismatched grids"));
    }

    #[test]
    fn binary_dump_roundtrips() {
        let model = small_model(Bounce::Multi);
        let field = model.sample_field(5);
        let mut bytes = Vec::new();
        field.write_binary(&mut bytes).unwrap();
        let back = ScatterField::read_binary(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.grid_k, field.grid_k);
        assert_eq!(back.rx_indices, field.rx_indices);
        assert_eq!(back.tx_indices, field.tx_indices);
        for i in 0..field.values.nrows() {
            for j in 0..field.values.ncols() {
                let orig = field.values[(i, j)];
                let want = Complex64::new(f64::from(orig.re as f32), f64::from(orig.im as f32));
                assert_eq!(back.values[(i, j)], want, "f32 roundtrip at ({i},{j})");
            }
        }
        // Corrupt magic is rejected.
        bytes[0] = b'X';
        assert!(ScatterField::read_binary(&mut bytes.as_slice()).is_err());
    }
}
