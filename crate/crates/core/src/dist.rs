//! Discretized travel-time distributions on the global step grid.
//!
//! All travel times live on a uniform grid of integer time steps. A
//! [`DiscretePdf`] stores probability mass per grid cell, starting at a
//! strictly positive `offset` (the free-flow travel time of the arc).
//! Convolving two pdfs adds their offsets, so minimum travel times add
//! along paths.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

use std::fmt;

/// Hard cap on the number of grid cells a single distribution may span.
const MAX_SUPPORT: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub enum DistError {
    NonPositiveShape(f64),
    NonPositiveScale(f64),
    NonPositiveSigma(f64),
    NonPositiveWeight(f64),
    WeightSum(f64),
    ZeroShift,
    BadTailEps(f64),
    EmptyComponents,
    EmptyMass,
    NegativeMass,
    SupportTooLarge,
}

impl fmt::Display for DistError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistError::NonPositiveShape(v) => write!(f, "gamma shape must be > 0, got {v}"),
            DistError::NonPositiveScale(v) => write!(f, "gamma scale must be > 0, got {v}"),
            DistError::NonPositiveSigma(v) => write!(f, "mixture sigma must be > 0, got {v}"),
            DistError::NonPositiveWeight(v) => write!(f, "mixture weight must be > 0, got {v}"),
            DistError::WeightSum(v) => write!(f, "mixture weights must sum to 1, got {v}"),
            DistError::ZeroShift => write!(f, "shift must be >= 1 time step"),
            DistError::BadTailEps(v) => write!(f, "tail_eps must be in (0, 1e-3], got {v}"),
            DistError::EmptyComponents => write!(f, "mixture must have at least one component"),
            DistError::EmptyMass => write!(f, "pdf must carry positive mass"),
            DistError::NegativeMass => write!(f, "pdf mass entries must be non-negative"),
            DistError::SupportTooLarge => write!(f, "distribution support exceeds grid limit"),
        }
    }
}

impl std::error::Error for DistError {}

/// Probability mass over consecutive grid cells, `mass[i]` at grid index
/// `offset + i`. Invariants: `offset >= 1`, first and last entries positive,
/// all entries non-negative, total mass in `(0, 1 + 1e-9]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePdf {
    offset: u32,
    mass: Vec<f64>,
}

impl DiscretePdf {
    /// Builds a pdf from raw mass, trimming zero cells at both ends.
    pub fn new(offset: u32, mass: Vec<f64>) -> Result<Self, DistError> {
        if mass.iter().any(|&m| m < 0.0 || !m.is_finite()) {
            return Err(DistError::NegativeMass);
        }
        let first = mass.iter().position(|&m| m > 0.0).ok_or(DistError::EmptyMass)?;
        let last = mass.iter().rposition(|&m| m > 0.0).unwrap();
        let offset = offset + first as u32;
        if offset == 0 {
            return Err(DistError::ZeroShift);
        }
        Ok(DiscretePdf { offset, mass: mass[first..=last].to_vec() })
    }

    /// Point mass: the whole unit of probability at one grid index.
    pub fn point(index: u32) -> Self {
        assert!(index >= 1, "grid index of a point mass must be >= 1");
        DiscretePdf { offset: index, mass: vec![1.0] }
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Last grid index carrying mass.
    pub fn max_index(&self) -> u32 {
        self.offset + self.mass.len() as u32 - 1
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn cdf(&self) -> CdfView {
        let mut cumulative = Vec::with_capacity(self.mass.len());
        let mut acc = 0.0;
        for &m in &self.mass {
            acc += m;
            cumulative.push(acc);
        }
        CdfView { offset: self.offset, cumulative }
    }
}

/// Cumulative view of a pdf: `cumulative[i]` is the mass at grid indices
/// `<= offset + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfView {
    offset: u32,
    cumulative: Vec<f64>,
}

impl CdfView {
    pub fn offset(&self) -> u32 {
        self.offset
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Probability of a value `<= index`.
    pub fn eval(&self, index: u32) -> f64 {
        if index < self.offset {
            return 0.0;
        }
        let i = (index - self.offset) as usize;
        if i >= self.cumulative.len() {
            *self.cumulative.last().unwrap()
        } else {
            self.cumulative[i]
        }
    }

    /// Inverse-cdf draw: smallest grid index whose cumulative mass exceeds `u`.
    pub fn sample(&self, u: f64) -> u32 {
        let pos = self.cumulative.partition_point(|&c| c <= u);
        let pos = pos.min(self.cumulative.len() - 1);
        self.offset + pos as u32
    }
}

/// Derived per-distribution scalars, all in grid-index units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarViews {
    pub min: u32,
    pub mean: f64,
    pub max: u32,
    pub variance: f64,
}

/// Min/mean/max/variance of a pdf in grid-index units.
pub fn scalar_views(p: &DiscretePdf) -> ScalarViews {
    let mut mean = 0.0;
    for (i, &m) in p.mass.iter().enumerate() {
        mean += (p.offset as f64 + i as f64) * m;
    }
    let mut variance = 0.0;
    for (i, &m) in p.mass.iter().enumerate() {
        let d = p.offset as f64 + i as f64 - mean;
        variance += d * d * m;
    }
    ScalarViews { min: p.offset, mean, max: p.max_index(), variance }
}

/// Shifted gamma spec: travel time = `shift` steps plus a Gamma(shape, scale)
/// number of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSpec {
    pub shape: f64,
    pub scale: f64,
    pub shift: u32,
}

/// One component of a normal mixture; `mu`/`sigma` are in seconds and are
/// mapped onto the grid by the loader's seconds-per-step factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Shifted normal mixture spec: travel time = `shift` steps plus a mixture
/// draw; negative draws are clipped into the first cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub shift: u32,
}

/// Per-arc distribution as it appears in a distribution file.
#[derive(Debug, Clone, PartialEq)]
pub enum DistSpec {
    Gamma(GammaSpec),
    NormalMixture(NormalMixtureSpec),
}

impl DistSpec {
    pub fn shift(&self) -> u32 {
        match self {
            DistSpec::Gamma(g) => g.shift,
            DistSpec::NormalMixture(m) => m.shift,
        }
    }

    /// Analytic variance in grid-step units (`dt` = seconds per step).
    pub fn variance_steps(&self, dt: f64) -> f64 {
        match self {
            DistSpec::Gamma(g) => g.shape * g.scale * g.scale,
            DistSpec::NormalMixture(m) => {
                let mean: f64 = m.components.iter().map(|c| c.weight * c.mu).sum();
                let var: f64 = m
                    .components
                    .iter()
                    .map(|c| c.weight * (c.sigma * c.sigma + (c.mu - mean) * (c.mu - mean)))
                    .sum();
                var / (dt * dt)
            }
        }
    }

    pub fn discretize(&self, tail_eps: f64, dt: f64) -> Result<DiscretePdf, DistError> {
        match self {
            DistSpec::Gamma(g) => discretize_gamma(g, tail_eps),
            DistSpec::NormalMixture(m) => discretize_normal_mixture(m, tail_eps, dt),
        }
    }
}

fn check_tail_eps(tail_eps: f64) -> Result<(), DistError> {
    if tail_eps > 0.0 && tail_eps <= 1e-3 {
        Ok(())
    } else {
        Err(DistError::BadTailEps(tail_eps))
    }
}

/// Bins a continuous CDF into unit grid cells centred on integers.
///
/// Cell `j >= 1` collects the mass of `[j - 1/2, j + 1/2)`; cell 0 collects
/// everything below `1/2` (for mixtures this includes clipped negative-time
/// mass). Binning stops once `1 - tail_eps` of the mass is captured and the
/// result is renormalized to sum to one, so the discrete mean tracks the
/// continuous mean instead of drifting by half a step.
fn bin_cdf<F: Fn(f64) -> f64>(cdf: F, tail_eps: f64, shift: u32) -> Result<DiscretePdf, DistError> {
    let mut mass = Vec::new();
    let mut below = 0.0; // cdf at the lower edge of the current cell
    let mut total = 0.0;
    for j in 0..MAX_SUPPORT {
        let upper = cdf(j as f64 + 0.5);
        let m = (upper - below).max(0.0);
        mass.push(m);
        total += m;
        below = upper;
        if total >= 1.0 - tail_eps {
            for m in &mut mass {
                *m /= total;
            }
            return DiscretePdf::new(shift, mass);
        }
    }
    Err(DistError::SupportTooLarge)
}

/// Discretizes a shifted gamma distribution onto the grid.
pub fn discretize_gamma(spec: &GammaSpec, tail_eps: f64) -> Result<DiscretePdf, DistError> {
    if spec.shape.is_nan() || spec.shape <= 0.0 {
        return Err(DistError::NonPositiveShape(spec.shape));
    }
    if spec.scale.is_nan() || spec.scale <= 0.0 {
        return Err(DistError::NonPositiveScale(spec.scale));
    }
    if spec.shift == 0 {
        return Err(DistError::ZeroShift);
    }
    check_tail_eps(tail_eps)?;
    let gamma = Gamma::new(spec.shape, 1.0 / spec.scale).expect("parameters checked above");
    bin_cdf(|x| if x <= 0.0 { 0.0 } else { gamma.cdf(x) }, tail_eps, spec.shift)
}

/// Discretizes a shifted normal mixture; `dt` converts the component
/// seconds onto the step grid.
pub fn discretize_normal_mixture(
    spec: &NormalMixtureSpec,
    tail_eps: f64,
    dt: f64,
) -> Result<DiscretePdf, DistError> {
    if spec.components.is_empty() {
        return Err(DistError::EmptyComponents);
    }
    if spec.shift == 0 {
        return Err(DistError::ZeroShift);
    }
    check_tail_eps(tail_eps)?;
    assert!(dt > 0.0, "seconds-per-step must be positive");
    let mut weight_sum = 0.0;
    let mut normals = Vec::with_capacity(spec.components.len());
    for c in &spec.components {
        if c.weight.is_nan() || c.weight <= 0.0 {
            return Err(DistError::NonPositiveWeight(c.weight));
        }
        if c.sigma.is_nan() || c.sigma <= 0.0 {
            return Err(DistError::NonPositiveSigma(c.sigma));
        }
        weight_sum += c.weight;
        normals.push((c.weight, Normal::new(c.mu / dt, c.sigma / dt).expect("sigma checked")));
    }
    if (weight_sum - 1.0).abs() > 1e-9 {
        return Err(DistError::WeightSum(weight_sum));
    }
    let cdf = |x: f64| normals.iter().map(|(w, n)| w * n.cdf(x)).sum::<f64>();
    bin_cdf(cdf, tail_eps, spec.shift)
}

/// One convolution term `sum_j a[j] * b[k - j]`. Summation order is fixed
/// (ascending `j`) so every caller computing the same product gets
/// bit-identical floats.
#[inline]
pub(crate) fn conv_term(a: &[f64], b: &[f64], k: usize) -> f64 {
    let lo = (k + 1).saturating_sub(b.len());
    let hi = k.min(a.len() - 1);
    let mut s = 0.0;
    for j in lo..=hi {
        s += a[j] * b[k - j];
    }
    s
}

fn conv_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len() + b.len() - 1;
    let mut out = vec![0.0; n];
    for (k, o) in out.iter_mut().enumerate() {
        *o = conv_term(a, b, k);
    }
    out
}

/// Discrete convolution: the distribution of the sum of two independent
/// travel times. Offsets add.
pub fn convolve(a: &DiscretePdf, b: &DiscretePdf) -> DiscretePdf {
    DiscretePdf { offset: a.offset + b.offset, mass: conv_direct(&a.mass, &b.mass) }
}

/// Convolution with all cells beyond grid index `budget` dropped. May
/// return an empty pdf when even the combined offset exceeds the budget.
pub fn convolve_truncated(a: &DiscretePdf, b: &DiscretePdf, budget: u32) -> DiscretePdf {
    let offset = a.offset + b.offset;
    if offset > budget {
        return DiscretePdf { offset, mass: Vec::new() };
    }
    let keep = (budget - offset + 1) as usize;
    let n = (a.mass.len() + b.mass.len() - 1).min(keep);
    let mut out = vec![0.0; n];
    for (k, o) in out.iter_mut().enumerate() {
        *o = conv_term(&a.mass, &b.mass, k);
    }
    DiscretePdf { offset, mass: out }
}

/// Same contract as [`convolve`], computed in the frequency domain.
pub fn convolve_fft(a: &DiscretePdf, b: &DiscretePdf) -> DiscretePdf {
    DiscretePdf { offset: a.offset + b.offset, mass: conv_fft_raw(&a.mass, &b.mass) }
}

pub(crate) fn conv_fft_raw(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    if out_len < 16 {
        return conv_direct(a, b);
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(n, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fb.resize(n, Complex::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|c| (c.re * scale).max(0.0)).collect()
}
