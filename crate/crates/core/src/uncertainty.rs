//! Uncertainty distributions, reproducible sampling, moments, and the
//! `‖a Σ^{1/2}‖₂` terms used to tighten constraints.
//!
//! Distributions are specified over the uncertain buses only (in MW);
//! samples are embedded into full bus-length vectors in per unit.
//!
//! Sampling uses ChaCha20 (`rand_chacha`) as a counter-based stream
//! generator. Samples are drawn in fixed blocks of [`SAMPLE_BLOCK`]; block
//! `b` uses stream `b` of the generator seeded with the caller's seed, so
//! blocks can be produced in any order or in parallel with identical
//! results.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::UncertaintyError;
use crate::linalg::{nearest_psd, psd_factor, symmetric_eigen, Matrix};

/// Samples per independently seeded block.
pub const SAMPLE_BLOCK: usize = 4096;

/// Eigenvalues above `-PSD_TOL · scale` are accepted and clipped to zero.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    Gaussian { mean: Vec<f64>, covariance: Matrix },
    Mixture { components: Vec<(f64, DistributionSpec)> },
    /// Independent uniform marginals on `[lower_i, upper_i]`.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
}

impl DistributionSpec {
    /// Zero-mean Gaussian with the given standard deviations and a common
    /// pairwise correlation.
    pub fn gaussian(std_mw: &[f64], correlation: f64) -> Self {
        let k = std_mw.len();
        let mut cov = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let rho = if i == j { 1.0 } else { correlation };
                cov[(i, j)] = rho * std_mw[i] * std_mw[j];
            }
        }
        DistributionSpec::Gaussian { mean: vec![0.0; k], covariance: cov }
    }

    pub fn uniform(lower: f64, upper: f64, dim: usize) -> Self {
        DistributionSpec::UniformBox { lower: vec![lower; dim], upper: vec![upper; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::Gaussian { mean, .. } => mean.len(),
            DistributionSpec::Mixture { components } => components.first().map_or(0, |(_, c)| c.dim()),
            DistributionSpec::UniformBox { lower, .. } => lower.len(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, DistributionSpec::Gaussian { .. })
    }

    pub fn validate(&self) -> Result<(), UncertaintyError> {
        match self {
            DistributionSpec::Gaussian { mean, covariance } => {
                let k = mean.len();
                if covariance.rows() != k || covariance.cols() != k {
                    return Err(UncertaintyError::Dimension { expected: k, got: covariance.rows() });
                }
                let scale = covariance.max_abs();
                for i in 0..k {
                    for j in 0..i {
                        if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                            return Err(UncertaintyError::NotPsd);
                        }
                    }
                }
                let (vals, _) = symmetric_eigen(covariance);
                if vals.iter().any(|&v| v < -PSD_TOL * scale.max(1.0)) || !scale.is_finite() {
                    return Err(UncertaintyError::NotPsd);
                }
                Ok(())
            }
            DistributionSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(UncertaintyError::InvalidWeights);
                }
                let total: f64 = components.iter().map(|(w, _)| w).sum();
                if components.iter().any(|(w, _)| !(0.0..=1.0).contains(w)) || (total - 1.0).abs() > 1e-9 {
                    return Err(UncertaintyError::InvalidWeights);
                }
                let k = self.dim();
                for (_, c) in components {
                    if c.dim() != k {
                        return Err(UncertaintyError::Dimension { expected: k, got: c.dim() });
                    }
                    c.validate()?;
                }
                Ok(())
            }
            DistributionSpec::UniformBox { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(UncertaintyError::Dimension { expected: lower.len(), got: upper.len() });
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(UncertaintyError::InvalidBounds);
                }
                Ok(())
            }
        }
    }

    /// Analytic mean (MW).
    pub fn mean(&self) -> Vec<f64> {
        match self {
            DistributionSpec::Gaussian { mean, .. } => mean.clone(),
            DistributionSpec::Mixture { components } => {
                let mut out = vec![0.0; self.dim()];
                for (w, c) in components {
                    for (o, v) in out.iter_mut().zip(c.mean()) {
                        *o += w * v;
                    }
                }
                out
            }
            DistributionSpec::UniformBox { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
            }
        }
    }

    /// Analytic covariance (MW²).
    pub fn covariance(&self) -> Matrix {
        match self {
            DistributionSpec::Gaussian { covariance, .. } => covariance.clone(),
            DistributionSpec::Mixture { components } => {
                let k = self.dim();
                let mu = self.mean();
                let mut out = Matrix::zeros(k, k);
                for (w, c) in components {
                    let ck = c.covariance();
                    let mk = c.mean();
                    for i in 0..k {
                        for j in 0..k {
                            out[(i, j)] += w * (ck[(i, j)] + mk[i] * mk[j]);
                        }
                    }
                }
                for i in 0..k {
                    for j in 0..k {
                        out[(i, j)] -= mu[i] * mu[j];
                    }
                }
                out
            }
            DistributionSpec::UniformBox { lower, upper } => {
                let k = lower.len();
                let mut out = Matrix::zeros(k, k);
                for i in 0..k {
                    let w = upper[i] - lower[i];
                    out[(i, i)] = w * w / 12.0;
                }
                out
            }
        }
    }
}

/// A prepared, validated distribution ready to draw from.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: DistributionSpec,
    node: Node,
    support: Vec<usize>,
    n_buses: usize,
    base_mva: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Gaussian { mean: Vec<f64>, factor: Matrix },
    Mixture { cumulative: Vec<f64>, children: Vec<Node> },
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

impl Node {
    fn build(spec: &DistributionSpec) -> Node {
        match spec {
            DistributionSpec::Gaussian { mean, covariance } => Node::Gaussian {
                mean: mean.clone(),
                factor: psd_factor(&nearest_psd(covariance), 1e-14),
            },
            DistributionSpec::Mixture { components } => {
                let mut acc = 0.0;
                let cumulative = components
                    .iter()
                    .map(|(w, _)| {
                        acc += w;
                        acc
                    })
                    .collect();
                Node::Mixture {
                    cumulative,
                    children: components.iter().map(|(_, c)| Node::build(c)).collect(),
                }
            }
            DistributionSpec::UniformBox { lower, upper } => Node::Uniform {
                lower: lower.clone(),
                upper: upper.clone(),
            },
        }
    }

    /// Writes one draw (MW) into `out`; returns the top-level component.
    fn draw<R: Rng>(&self, rng: &mut R, out: &mut [f64], z: &mut [f64]) -> usize {
        match self {
            Node::Gaussian { mean, factor } => {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(rng);
                }
                for (i, o) in out.iter_mut().enumerate() {
                    let mut v = mean[i];
                    for (j, zj) in z.iter().enumerate().take(i + 1) {
                        v += factor[(i, j)] * zj;
                    }
                    *o = v;
                }
                0
            }
            Node::Mixture { cumulative, children } => {
                let u: f64 = rng.random();
                let total = *cumulative.last().unwrap_or(&1.0);
                let pick = cumulative
                    .iter()
                    .position(|&c| u * total < c)
                    .unwrap_or(children.len() - 1);
                children[pick].draw(rng, out, z);
                pick
            }
            Node::Uniform { lower, upper } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let u: f64 = rng.random();
                    *o = lower[i] + (upper[i] - lower[i]) * u;
                }
                0
            }
        }
    }
}

impl Sampler {
    /// `support` lists the bus indices carrying uncertainty, in the order of
    /// the distribution's coordinates.
    pub fn new(
        spec: &DistributionSpec,
        support: &[usize],
        n_buses: usize,
        base_mva: f64,
    ) -> Result<Self, UncertaintyError> {
        spec.validate()?;
        if spec.dim() != support.len() {
            return Err(UncertaintyError::Dimension { expected: support.len(), got: spec.dim() });
        }
        if support.iter().any(|&b| b >= n_buses) {
            return Err(UncertaintyError::Dimension { expected: n_buses, got: support.len() });
        }
        Ok(Self {
            spec: spec.clone(),
            node: Node::build(spec),
            support: support.to_vec(),
            n_buses,
            base_mva,
        })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    /// Draws samples `block * SAMPLE_BLOCK .. block * SAMPLE_BLOCK + len`
    /// as full bus vectors in per unit, appending to `out`, and the
    /// top-level mixture label of each to `labels`.
    pub fn draw_block(&self, seed: u64, block: usize, len: usize, out: &mut Vec<f64>, labels: &mut Vec<u32>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(block as u64);
        let k = self.support.len();
        let mut draw = vec![0.0; k];
        let mut z = vec![0.0; k];
        for _ in 0..len {
            let label = self.node.draw(&mut rng, &mut draw, &mut z);
            let start = out.len();
            out.resize(start + self.n_buses, 0.0);
            for (c, &bus) in self.support.iter().enumerate() {
                out[start + bus] = draw[c] / self.base_mva;
            }
            labels.push(label as u32);
        }
    }

    /// Draws `n` samples, block by block.
    pub fn sample_labeled(&self, n: usize, seed: u64) -> (SampleSet, Vec<u32>) {
        let mut data = Vec::with_capacity(n * self.n_buses);
        let mut labels = Vec::with_capacity(n);
        let blocks = n.div_ceil(SAMPLE_BLOCK);
        for b in 0..blocks {
            let len = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
            self.draw_block(seed, b, len, &mut data, &mut labels);
        }
        (self.assemble(data, seed), labels)
    }

    /// Wraps pre-drawn data (e.g. blocks produced in parallel, concatenated
    /// in block order) into a sample set.
    pub fn assemble(&self, data: Vec<f64>, seed: u64) -> SampleSet {
        SampleSet {
            n_buses: self.n_buses,
            support: self.support.clone(),
            data,
            seed,
            source: Some(self.spec.clone()),
        }
    }

    /// Analytic moments converted to per unit.
    pub fn analytic_moments(&self) -> MomentEstimate {
        let m = self.n_buses;
        let mean_mw = self.spec.mean();
        let cov_mw = self.spec.covariance();
        let mut mean = vec![0.0; m];
        let mut cov = Matrix::zeros(m, m);
        let b2 = self.base_mva * self.base_mva;
        for (i, &bi) in self.support.iter().enumerate() {
            mean[bi] = mean_mw[i] / self.base_mva;
            for (j, &bj) in self.support.iter().enumerate() {
                cov[(bi, bj)] = cov_mw[(i, j)] / b2;
            }
        }
        MomentEstimate::from_parts(mean, cov, &self.support)
    }
}

/// Draws `n` samples of `spec` placed at `support` buses.
pub fn sample(
    spec: &DistributionSpec,
    support: &[usize],
    n_buses: usize,
    base_mva: f64,
    n: usize,
    seed: u64,
) -> Result<SampleSet, UncertaintyError> {
    if n == 0 {
        return Err(UncertaintyError::TooFewSamples { required: 1 });
    }
    Ok(Sampler::new(spec, support, n_buses, base_mva)?.sample_labeled(n, seed).0)
}

/// `N × m` uncertainty realizations in per unit; columns outside
/// `support` are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n_buses: usize,
    support: Vec<usize>,
    data: Vec<f64>,
    seed: u64,
    source: Option<DistributionSpec>,
}

impl SampleSet {
    /// Builds a sample set from row-major per-unit data. Entries outside
    /// `support` are forced to zero.
    pub fn from_rows(n_buses: usize, support: &[usize], mut data: Vec<f64>, seed: u64) -> Self {
        assert_eq!(data.len() % n_buses.max(1), 0, "ragged sample data");
        let mut mask = vec![false; n_buses];
        for &s in support {
            mask[s] = true;
        }
        for row in data.chunks_mut(n_buses) {
            for (v, keep) in row.iter_mut().zip(&mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        Self { n_buses, support: support.to_vec(), data, seed, source: None }
    }

    pub fn len(&self) -> usize {
        if self.n_buses == 0 {
            0
        } else {
            self.data.len() / self.n_buses
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> Option<&DistributionSpec> {
        self.source.as_ref()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_buses..(i + 1) * self.n_buses]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_buses)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Mean, covariance and a square-root factor, all in per unit over the full
/// bus vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    /// Lower-triangular `L` with `L Lᵀ = covariance`; zero outside the
    /// support rows and columns.
    pub factor: Matrix,
    support: Vec<usize>,
}

impl MomentEstimate {
    /// Symmetrizes and clips the covariance on `support`, then factors it.
    pub fn from_parts(mean: Vec<f64>, covariance: Matrix, support: &[usize]) -> Self {
        let m = mean.len();
        let k = support.len();
        let mut sub = Matrix::zeros(k, k);
        for (i, &bi) in support.iter().enumerate() {
            for (j, &bj) in support.iter().enumerate() {
                sub[(i, j)] = covariance[(bi, bj)];
            }
        }
        let repaired = nearest_psd(&sub);
        let sub_factor = psd_factor(&repaired, 1e-14);
        let mut cov = Matrix::zeros(m, m);
        let mut factor = Matrix::zeros(m, m);
        // support is not necessarily sorted; lower-triangularity holds in
        // support order, which is ascending for every caller here
        for (i, &bi) in support.iter().enumerate() {
            for (j, &bj) in support.iter().enumerate() {
                cov[(bi, bj)] = repaired[(i, j)];
                factor[(bi, bj)] = sub_factor[(i, j)];
            }
        }
        Self { mean, covariance: cov, factor, support: support.to_vec() }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn n_buses(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased sample covariance (divisor `N − 1`).
pub fn empirical_moments(samples: &SampleSet) -> Result<MomentEstimate, UncertaintyError> {
    let n = samples.len();
    if n < 2 {
        return Err(UncertaintyError::TooFewSamples { required: 2 });
    }
    let m = samples.n_buses();
    let support = samples.support();
    let k = support.len();
    let mut mean_s = vec![0.0; k];
    for row in samples.iter() {
        for (c, &b) in support.iter().enumerate() {
            mean_s[c] += row[b];
        }
    }
    mean_s.iter_mut().for_each(|v| *v /= n as f64);
    let mut cov_s = Matrix::zeros(k, k);
    for row in samples.iter() {
        for i in 0..k {
            let di = row[support[i]] - mean_s[i];
            for j in 0..=i {
                cov_s[(i, j)] += di * (row[support[j]] - mean_s[j]);
            }
        }
    }
    let mut mean = vec![0.0; m];
    let mut cov = Matrix::zeros(m, m);
    let denom = (n - 1) as f64;
    for i in 0..k {
        mean[support[i]] = mean_s[i];
        for j in 0..=i {
            let v = cov_s[(i, j)] / denom;
            cov[(support[i], support[j])] = v;
            cov[(support[j], support[i])] = v;
        }
    }
    Ok(MomentEstimate::from_parts(mean, cov, support))
}

/// `‖a L‖₂ = sqrt(a Σ aᵀ)`.
pub fn sensitivity_norm(a: &[f64], moments: &MomentEstimate) -> f64 {
    assert_eq!(a.len(), moments.n_buses(), "sensitivity row length");
    let support = moments.support();
    let mut sq = 0.0;
    for &bj in support {
        let mut v = 0.0;
        for &bi in support {
            v += a[bi] * moments.factor[(bi, bj)];
        }
        sq += v * v;
    }
    libm::sqrt(sq)
}
