//! Spectra of sinc concentration kernels on unions of intervals.
//!
//! The kernel `R(t, s) = W · sinc(W (t − s))` acts on functions supported on a
//! union of disjoint intervals `A`. Its eigenvalues lie in (0, 1), sum to
//! `|A| · W`, and cluster near 1 for roughly `|A| · W` indices before plunging
//! through a logarithmically narrow transition — the structure everything in
//! this crate ultimately rests on. This module provides:
//!
//! - symmetric Nyström discretization on per-interval Gauss-Legendre grids
//!   ([`build_kernel_matrix`], [`eigendecompose`]);
//! - the two-term eigenvalue counting law ([`landau_widom_count`]) and the
//!   transition sharpness it implies ([`epsilon_transition`]);
//! - cross-expansion of a narrowband kernel's eigenfunctions in a wider
//!   kernel's eigenbasis ([`cross_expansion_coefficients`]), with the two
//!   orthogonality identities the expansion must satisfy.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::support::AngularSupport;

/// `sin(πx)/(πx)`, continuous at zero.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

// ---------------------------------------------------------------------------
// Quadrature grids
// ---------------------------------------------------------------------------

/// Minimum grid points per unit `1/W`; coarser grids cannot resolve the
/// kernel's oscillation and are rejected.
pub const MIN_POINTS_PER_UNIT: u32 = 8;

/// Default grid points per unit `1/W`.
pub const DEFAULT_POINTS_PER_UNIT: u32 = 16;

/// Minimum quadrature nodes per interval regardless of bandwidth.
const MIN_NODES_PER_INTERVAL: usize = 32;

/// A concentration-kernel eigenproblem: support, bandwidth, grid resolution.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    support: AngularSupport,
    bandwidth: f64,
    grid_points_per_unit: u32,
}

impl KernelSpec {
    /// Spec with the default grid resolution of 16 points per `1/W`.
    pub fn new(support: AngularSupport, bandwidth: f64) -> Result<Self> {
        Self::with_resolution(support, bandwidth, DEFAULT_POINTS_PER_UNIT)
    }

    /// Spec with an explicit resolution in grid points per unit `1/W`.
    pub fn with_resolution(
        support: AngularSupport,
        bandwidth: f64,
        grid_points_per_unit: u32,
    ) -> Result<Self> {
        if !bandwidth.is_finite() || bandwidth <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if grid_points_per_unit < MIN_POINTS_PER_UNIT {
            return Err(Error::UnderResolvedKernel(format!(
                "{grid_points_per_unit} points per 1/W is below the minimum {MIN_POINTS_PER_UNIT}"
            )));
        }
        Ok(Self {
            support,
            bandwidth,
            grid_points_per_unit,
        })
    }

    pub fn support(&self) -> &AngularSupport {
        &self.support
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn grid_points_per_unit(&self) -> u32 {
        self.grid_points_per_unit
    }

    /// Per-interval Gauss-Legendre nodes and weights, concatenated in interval
    /// order. Node count per interval scales with its length-bandwidth product
    /// and never drops below 32.
    pub fn quadrature(&self) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for &(a, b) in self.support.intervals() {
            let wanted = ((b - a) * self.bandwidth * f64::from(self.grid_points_per_unit)).ceil();
            let n = (wanted as usize).max(MIN_NODES_PER_INTERVAL);
            let (x, w) = gauss_legendre(n);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            nodes.extend(x.iter().map(|&xi| half * xi + mid));
            weights.extend(w.iter().map(|&wi| half * wi));
        }
        (nodes, weights)
    }
}

/// Gauss-Legendre nodes (ascending) and weights on [-1, 1] by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess for the i-th root from the top.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                let (_, d2) = legendre_with_derivative(n, x);
                dp = d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        // Center the middle node exactly.
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_with_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n(x)` and its derivative via the three-term
/// recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

// ---------------------------------------------------------------------------
// Kernel matrix and eigendecomposition
// ---------------------------------------------------------------------------

/// Symmetric Nyström matrix of a spec, together with the grid it lives on.
#[derive(Debug, Clone)]
pub struct DiscretizedKernel {
    pub matrix: DMatrix<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `K_ij = √(w_i w_j) · W · sinc(W (t_i − t_j))` on explicit nodes/weights.
pub fn kernel_matrix_from_nodes(nodes: &[f64], weights: &[f64], bandwidth: f64) -> DMatrix<f64> {
    assert_eq!(nodes.len(), weights.len(), "nodes/weights length mismatch");
    let n = nodes.len();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        sw[i] * sw[j] * bandwidth * sinc(bandwidth * (nodes[i] - nodes[j]))
    })
}

/// Builds the symmetric Nyström matrix on the spec's Gauss-Legendre grid.
pub fn build_kernel_matrix(spec: &KernelSpec) -> DiscretizedKernel {
    let (nodes, weights) = spec.quadrature();
    let matrix = kernel_matrix_from_nodes(&nodes, &weights, spec.bandwidth());
    DiscretizedKernel {
        matrix,
        nodes,
        weights,
    }
}

/// Eigenvalues may stray outside [0, 1] by at most this much before the
/// decomposition is rejected; anything inside the band is clipped.
pub const EIGENVALUE_TOLERANCE: f64 = 1e-8;

/// Eigendecomposition of a concentration kernel.
///
/// Eigenvalues are sorted descending and clipped to [0, 1]. Column `n` of
/// `samples` holds the n-th eigenfunction evaluated at `nodes`; the functions
/// are orthonormal under the quadrature inner product `Σ_i w_i f(t_i) g(t_i)`.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    pub eigenvalues: Vec<f64>,
    pub samples: DMatrix<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub bandwidth: f64,
    pub support: AngularSupport,
}

impl EigenSpectrum {
    /// Eigenvalue sum; equals `|A| · W` up to quadrature error.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Number of eigenvalues strictly above `x`.
    pub fn count_above(&self, x: f64) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > x).count()
    }
}

/// Solves the spec's eigenproblem: Nyström matrix, dense symmetric
/// eigendecomposition, descending sort, range check, and rescaling of the
/// eigenvectors into eigenfunction samples.
pub fn eigendecompose(spec: &KernelSpec) -> Result<EigenSpectrum> {
    let disc = build_kernel_matrix(spec);
    let n = disc.nodes.len();
    let eig = nalgebra::SymmetricEigen::new(disc.matrix);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut samples = DMatrix::zeros(n, n);
    let inv_sqrt_w: Vec<f64> = disc.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    for (col, &src) in order.iter().enumerate() {
        let lam = eig.eigenvalues[src];
        if !(-EIGENVALUE_TOLERANCE..=1.0 + EIGENVALUE_TOLERANCE).contains(&lam) {
            return Err(Error::Numerical(format!(
                "kernel eigenvalue {lam} outside [0, 1] beyond tolerance {EIGENVALUE_TOLERANCE}"
            )));
        }
        eigenvalues.push(lam.clamp(0.0, 1.0));

        let v = eig.eigenvectors.column(src);
        // Deterministic sign: the largest-magnitude component points up.
        let mut lead = 0;
        for i in 1..n {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            samples[(i, col)] = sign * v[i] * inv_sqrt_w[i];
        }
    }

    Ok(EigenSpectrum {
        eigenvalues,
        samples,
        nodes: disc.nodes,
        weights: disc.weights,
        bandwidth: spec.bandwidth(),
        support: spec.support().clone(),
    })
}

// ---------------------------------------------------------------------------
// Eigenvalue counting and the transition
// ---------------------------------------------------------------------------

/// Two-term count of eigenvalues above `x` for a kernel with time-bandwidth
/// product `|A| · W` on `clusters` disjoint intervals:
///
/// `Ḡ(x) = |A|W + (M/π²) · ln((1−x)/x) · ln(2π |A|W)`.
///
/// At `x = 1/2` the correction vanishes and the count is the time-bandwidth
/// product itself.
pub fn landau_widom_count(support: &AngularSupport, bandwidth: f64, x: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&x) || x == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "threshold must lie strictly inside (0, 1), got {x}"
        )));
    }
    let aw = support.measure() * bandwidth;
    if aw < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "counting law needs |A|W >= 1, got {aw}"
        )));
    }
    let m = support.cluster_count() as f64;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    Ok(aw + m / pi2 * ((1.0 - x) / x).ln() * (2.0 * std::f64::consts::PI * aw).ln())
}

/// Width parameter of the eigenvalue plunge: the threshold `ε` at which the
/// counting law says all `|A|W` plateau eigenvalues still exceed `1 − ... `,
/// i.e. the root of
///
/// `|A|W + (M/π²) · ln(ε/(1−ε)) · ln(2π |A|W) = 0`
///
/// on (0, 1/2), found by bisection (the function is strictly increasing in ε).
pub fn epsilon_transition(time_bandwidth: f64, clusters: usize) -> Result<f64> {
    if time_bandwidth <= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "transition needs |A|W > 1, got {time_bandwidth}"
        )));
    }
    if clusters == 0 {
        return Err(Error::InvalidConfig("cluster count must be positive".into()));
    }
    let m = clusters as f64;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let log_term = (2.0 * std::f64::consts::PI * time_bandwidth).ln();
    let f = |eps: f64| time_bandwidth + m / pi2 * (eps / (1.0 - eps)).ln() * log_term;

    let mut lo = 1e-300;
    let mut hi = 0.5;
    if f(lo) >= 0.0 || f(hi) <= 0.0 {
        return Err(Error::TransitionUndefined(format!(
            "no sign change on (1e-300, 0.5) for |A|W = {time_bandwidth}, M = {clusters}"
        )));
    }
    // Bisect to floating-point resolution (stops when the midpoint can no
    // longer move), which is well below the 1e-12 absolute target.
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if f(lo).abs() < f(hi).abs() { lo } else { hi })
}

// ---------------------------------------------------------------------------
// Cross-expansion of one kernel's eigenfunctions in another's
// ---------------------------------------------------------------------------

/// Fraction of spectral mass retained when truncating an expansion basis.
pub const MASS_FRACTION: f64 = 0.9999;

/// Smallest `N` such that the top `N` eigenvalues carry at least `fraction`
/// of the total eigenvalue mass.
pub fn mass_truncation(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let target = fraction * total;
    let mut acc = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc >= target {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// Number of eigenfunctions concentrated to within ten transition widths of
/// unity (`1 − λ_m ≤ 10 ε`). These are the functions for which expansion
/// identities hold at truncated precision; functions deeper in the transition
/// leak too much mass off the support for any truncated basis to capture.
pub fn deep_plateau_count(spectrum: &EigenSpectrum) -> Result<usize> {
    let eps = epsilon_transition(spectrum.trace(), spectrum.support.cluster_count())?;
    Ok(spectrum
        .eigenvalues
        .iter()
        .filter(|&&l| 1.0 - l <= 10.0 * eps)
        .count())
}

/// Expansion of a coarse kernel's eigenfunctions in a fine kernel's eigenbasis.
///
/// Row `m` holds the coefficients of coarse function `m` (normalized to unit
/// energy on the real line, so its support energy is the concentration `γ_m`)
/// over the first `truncation` fine functions. Exactly:
/// `c_{m,n} = √(γ_m / λ_n) · Σ_i w_i φ̂_m(t_i) ψ̂_n(t_i)` on the shared grid.
#[derive(Debug, Clone)]
pub struct CrossExpansion {
    pub coefficients: DMatrix<f64>,
    pub truncation: usize,
    pub fine_eigenvalues: Vec<f64>,
    pub coarse_concentrations: Vec<f64>,
}

impl CrossExpansion {
    /// `max |C Cᵀ − I|`: defect of the rows being orthonormal.
    pub fn row_orthonormality_residual(&self) -> f64 {
        let g = &self.coefficients * self.coefficients.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - want).abs());
            }
        }
        worst
    }

    /// `max |C Λ Cᵀ − diag(γ)|`: defect of the eigenvalue-weighted identity.
    pub fn weighted_identity_residual(&self) -> f64 {
        let mut scaled = self.coefficients.clone();
        for n in 0..self.truncation {
            let l = self.fine_eigenvalues[n];
            for m in 0..scaled.nrows() {
                scaled[(m, n)] *= l;
            }
        }
        let g = scaled * self.coefficients.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j {
                    self.coarse_concentrations[i]
                } else {
                    0.0
                };
                worst = worst.max((g[(i, j)] - want).abs());
            }
        }
        worst
    }
}

/// Expands the first `count` eigenfunctions of `coarse` in the eigenbasis of
/// `fine`, truncated to the fine functions carrying [`MASS_FRACTION`] of the
/// spectral mass. Both spectra must come from the same support and identical
/// quadrature grids, and the fine bandwidth must dominate the coarse one.
pub fn cross_expansion_coefficients(
    fine: &EigenSpectrum,
    coarse: &EigenSpectrum,
    count: usize,
) -> Result<CrossExpansion> {
    if fine.bandwidth < coarse.bandwidth {
        return Err(Error::InvalidConfig(format!(
            "fine bandwidth {} must be at least the coarse bandwidth {}",
            fine.bandwidth, coarse.bandwidth
        )));
    }
    if fine.nodes.len() != coarse.nodes.len()
        || fine
            .nodes
            .iter()
            .zip(&coarse.nodes)
            .any(|(a, b)| (a - b).abs() > 1e-12)
        || fine
            .weights
            .iter()
            .zip(&coarse.weights)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::MismatchedGrids(
            "spectra must share one quadrature grid; build both at the finer resolution".into(),
        ));
    }
    if count > coarse.eigenvalues.len() {
        return Err(Error::InvalidConfig(format!(
            "asked for {count} coarse functions, spectrum has {}",
            coarse.eigenvalues.len()
        )));
    }

    let truncation = mass_truncation(&fine.eigenvalues, MASS_FRACTION);
    let mut coefficients = DMatrix::zeros(count, truncation);
    for m in 0..count {
        let gamma = coarse.eigenvalues[m];
        for n in 0..truncation {
            let lambda = fine.eigenvalues[n];
            if lambda <= 0.0 {
                return Err(Error::Numerical(format!(
                    "fine eigenvalue {n} vanished inside the mass truncation"
                )));
            }
            let mut inner = 0.0;
            for i in 0..fine.nodes.len() {
                inner += fine.weights[i] * coarse.samples[(i, m)] * fine.samples[(i, n)];
            }
            coefficients[(m, n)] = (gamma / lambda).sqrt() * inner;
        }
    }

    Ok(CrossExpansion {
        coefficients,
        truncation,
        fine_eigenvalues: fine.eigenvalues[..truncation].to_vec(),
        coarse_concentrations: coarse.eigenvalues[..count].to_vec(),
    })
}

// ---------------------------------------------------------------------------
