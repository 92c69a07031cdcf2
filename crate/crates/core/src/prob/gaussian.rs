//! Linear-Gaussian backend: states are Gaussian moments and channels are
//! kernels `x ↦ N(Ax + b, Σ)`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TOL;

/// `ℝⁿ` split into declared blocks; the empty product is the unit space `ℝ⁰`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EuclideanSpace {
    blocks: Vec<usize>,
}

impl EuclideanSpace {
    pub fn new(dim: usize) -> Self {
        if dim == 0 {
            Self::unit()
        } else {
            Self { blocks: vec![dim] }
        }
    }

    pub fn from_blocks(blocks: Vec<usize>) -> Self {
        Self {
            blocks: blocks.into_iter().filter(|&b| b > 0).collect(),
        }
    }

    pub fn unit() -> Self {
        Self { blocks: vec![] }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn factor_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn product(&self, other: &Self) -> Self {
        let mut blocks = self.blocks.clone();
        blocks.extend(&other.blocks);
        Self { blocks }
    }

    /// Coordinate range covered by the factor range `factors`.
    pub fn coords(&self, factors: std::ops::Range<usize>) -> Result<std::ops::Range<usize>> {
        if factors.end > self.blocks.len() || factors.start > factors.end {
            return Err(Error::UnknownFactor {
                factor: factors.end.saturating_sub(1),
                count: self.blocks.len(),
            });
        }
        let start: usize = self.blocks[..factors.start].iter().sum();
        let len: usize = self.blocks[factors].iter().sum();
        Ok(start..start + len)
    }

    pub fn sub_space(&self, factors: std::ops::Range<usize>) -> Result<Self> {
        self.coords(factors.clone())?;
        Ok(Self {
            blocks: self.blocks[factors].to_vec(),
        })
    }
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= TOL.sym))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_covariance(cov: &DMatrix<f64>, what: &str) -> Result<()> {
    if !cov.is_square() {
        return Err(Error::InvalidDistribution(format!("{what} is not square")));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDistribution(format!("{what} has non-finite entries")));
    }
    if !is_symmetric(cov) {
        return Err(Error::InvalidDistribution(format!("{what} is not symmetric")));
    }
    if cov.nrows() > 0 {
        let min = symmetrize(cov).symmetric_eigenvalues().min();
        if min < -TOL.psd {
            return Err(Error::InvalidDistribution(format!("{what} has negative eigenvalue {min}")));
        }
    }
    Ok(())
}

/// Cholesky factor of a positive-definite matrix.
pub(crate) fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let sym = symmetrize(m);
    if sym.nrows() > 0 && sym.clone().symmetric_eigenvalues().min() <= TOL.pd {
        return Err(Error::Singular(what.to_string()));
    }
    sym.cholesky().ok_or_else(|| Error::Singular(what.to_string()))
}

pub(crate) fn log_det_pd(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Square root factor `L` with `L Lᵀ = cov` for a PSD matrix.
pub(crate) fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if cov.nrows() == 0 {
        return cov.clone();
    }
    let eig = symmetrize(cov).symmetric_eigen();
    let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * scale
}

fn sup(m: impl IntoIterator<Item = f64>) -> f64 {
    m.into_iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

/// A Gaussian state `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    space: EuclideanSpace,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let space = EuclideanSpace::new(mean.len());
        Self::with_space(space, mean, cov)
    }

    pub fn with_space(space: EuclideanSpace, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.len() != space.dim() || cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "GaussianState",
                expected: space.dim(),
                found: cov.nrows().max(mean.len()),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("mean has non-finite entries".into()));
        }
        check_covariance(&cov, "covariance")?;
        Ok(Self { space, mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            space: EuclideanSpace::new(dim),
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub(crate) fn from_parts_unchecked(space: EuclideanSpace, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            space,
            mean,
            cov: symmetrize(&cov),
        }
    }

    pub fn space(&self) -> &EuclideanSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn tensor(&self, other: &GaussianState) -> GaussianState {
        let mut mean = DVector::zeros(self.dim() + other.dim());
        mean.rows_mut(0, self.dim()).copy_from(&self.mean);
        mean.rows_mut(self.dim(), other.dim()).copy_from(&other.mean);
        GaussianState {
            space: self.space.product(&other.space),
            mean,
            cov: block_diag(&self.cov, &other.cov),
        }
    }

    pub fn marginalize(&self, factors: std::ops::Range<usize>) -> Result<GaussianState> {
        let r = self.space.coords(factors.clone())?;
        Ok(GaussianState {
            space: self.space.sub_space(factors)?,
            mean: self.mean.rows(r.start, r.len()).into_owned(),
            cov: self.cov.view((r.start, r.start), (r.len(), r.len())).into_owned(),
        })
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + psd_factor(&self.cov) * z
    }

    /// Log density at `x`. A zero covariance is a point mass with log density
    /// 0 at the mean and [`super::LOG_ZERO`] elsewhere.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        gaussian_log_density(x, &self.mean, &self.cov)
    }

    /// Closed-form `KL(self ‖ q)`; infinite when `self` is degenerate.
    pub fn kl(&self, q: &GaussianState) -> Result<f64> {
        if self.dim() != q.dim() {
            return Err(Error::DimensionMismatch {
                context: "kl",
                expected: q.dim(),
                found: self.dim(),
            });
        }
        let k = self.dim() as f64;
        if self.dim() == 0 {
            return Ok(0.0);
        }
        let cq = cholesky(&q.cov, "kl: covariance of q")?;
        let cp = match cholesky(&self.cov, "kl: covariance of p") {
            Ok(c) => c,
            Err(_) => return Ok(f64::INFINITY),
        };
        let diff = &q.mean - &self.mean;
        let trace = cq.solve(&self.cov).trace();
        let maha = diff.dot(&cq.solve(&diff));
        Ok(0.5 * (trace + maha - k + log_det_pd(&cq) - log_det_pd(&cp)))
    }

    /// Monte Carlo estimate of `E[f]` from `samples` draws under `seed`.
    pub fn expectation_mc(&self, f: impl Fn(&DVector<f64>) -> f64, samples: usize, seed: u64) -> MonteCarlo {
        let mut rng = crate::rng::seeded(seed);
        let factor = psd_factor(&self.cov);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut rng));
            let v = f(&(&self.mean + &factor * z));
            sum += v;
            sum_sq += v * v;
        }
        let n = samples.max(1) as f64;
        let estimate = sum / n;
        let var = (sum_sq / n - estimate * estimate).max(0.0);
        MonteCarlo {
            estimate,
            samples,
            std_error: (var / n).sqrt(),
        }
    }
}

/// A Monte Carlo estimate, always reported with its sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub estimate: f64,
    pub samples: usize,
    pub std_error: f64,
}

pub(crate) fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::DimensionMismatch {
            context: "log_density",
            expected: mean.len(),
            found: x.len(),
        });
    }
    let r = x - mean;
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(if sup(r.iter().copied()) <= TOL.norm { 0.0 } else { super::LOG_ZERO });
    }
    let chol = cholesky(cov, "log_density: noise covariance")?;
    let k = mean.len() as f64;
    Ok(-0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det_pd(&chol) + r.dot(&chol.solve(&r))))
}

/// The kernel `x ↦ N(weight·x + bias, noise_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannel {
    domain: EuclideanSpace,
    codomain: EuclideanSpace,
    weight: DMatrix<f64>,
    bias: DVector<f64>,
    noise_cov: DMatrix<f64>,
}

impl GaussianChannel {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let domain = EuclideanSpace::new(weight.ncols());
        let codomain = EuclideanSpace::new(weight.nrows());
        Self::with_spaces(domain, codomain, weight, bias, noise_cov)
    }

    pub fn with_spaces(
        domain: EuclideanSpace,
        codomain: EuclideanSpace,
        weight: DMatrix<f64>,
        bias: DVector<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        if weight.ncols() != domain.dim() {
            return Err(Error::DimensionMismatch {
                context: "GaussianChannel weight columns",
                expected: domain.dim(),
                found: weight.ncols(),
            });
        }
        let m = codomain.dim();
        if weight.nrows() != m || bias.len() != m || noise_cov.nrows() != m {
            return Err(Error::DimensionMismatch {
                context: "GaussianChannel output",
                expected: m,
                found: weight.nrows().max(bias.len()).max(noise_cov.nrows()),
            });
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidChannel("non-finite weight or bias".into()));
        }
        check_covariance(&noise_cov, "noise covariance").map_err(|e| Error::InvalidChannel(e.to_string()))?;
        Ok(Self {
            domain,
            codomain,
            weight,
            bias,
            noise_cov,
        })
    }

    /// One-dimensional `x ↦ N(a·x + b, var)`.
    pub fn scalar(a: f64, b: f64, var: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            DMatrix::from_element(1, 1, var),
        )
    }

    fn unchecked(
        domain: EuclideanSpace,
        codomain: EuclideanSpace,
        weight: DMatrix<f64>,
        bias: DVector<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Self {
        Self {
            domain,
            codomain,
            weight,
            bias,
            noise_cov: symmetrize(&noise_cov),
        }
    }

    pub fn identity(space: EuclideanSpace) -> Self {
        let n = space.dim();
        Self::unchecked(
            space.clone(),
            space,
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DMatrix::zeros(n, n),
        )
    }

    pub fn constant(domain: EuclideanSpace, state: &GaussianState) -> Self {
        let m = state.dim();
        Self::unchecked(
            domain.clone(),
            state.space.clone(),
            DMatrix::zeros(m, domain.dim()),
            state.mean.clone(),
            state.cov.clone(),
        )
    }

    pub fn discard(domain: EuclideanSpace) -> Self {
        Self::constant(domain, &GaussianState::standard(0))
    }

    pub fn projection(space: &EuclideanSpace, keep: std::ops::Range<usize>) -> Result<Self> {
        let r = space.coords(keep.clone())?;
        let mut weight = DMatrix::zeros(r.len(), space.dim());
        for (i, j) in r.clone().enumerate() {
            weight[(i, j)] = 1.0;
        }
        Ok(Self::unchecked(
            space.clone(),
            space.sub_space(keep)?,
            weight,
            DVector::zeros(r.len()),
            DMatrix::zeros(r.len(), r.len()),
        ))
    }

    pub fn attach(space: &EuclideanSpace, state: &GaussianState, state_first: bool) -> Self {
        let id = Self::identity(space.clone());
        let emit = Self::constant(EuclideanSpace::unit(), state);
        if state_first {
            emit.tensor(&id)
        } else {
            id.tensor(&emit)
        }
    }

    pub fn domain(&self) -> &EuclideanSpace {
        &self.domain
    }

    pub fn codomain(&self) -> &EuclideanSpace {
        &self.codomain
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// The output distribution at a point input.
    pub fn at(&self, x: &DVector<f64>) -> GaussianState {
        GaussianState {
            space: self.codomain.clone(),
            mean: &self.weight * x + &self.bias,
            cov: self.noise_cov.clone(),
        }
    }

    pub fn pushforward(&self, state: &GaussianState) -> Result<GaussianState> {
        if state.dim() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                context: "pushforward",
                expected: self.domain.dim(),
                found: state.dim(),
            });
        }
        let cov = &self.weight * &state.cov * self.weight.transpose() + &self.noise_cov;
        Ok(GaussianState::from_parts_unchecked(
            self.codomain.clone(),
            &self.weight * &state.mean + &self.bias,
            cov,
        ))
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &GaussianChannel) -> Result<GaussianChannel> {
        if self.codomain.dim() != next.domain.dim() {
            return Err(Error::DimensionMismatch {
                context: "compose_channels",
                expected: next.domain.dim(),
                found: self.codomain.dim(),
            });
        }
        let a = &next.weight;
        Ok(Self::unchecked(
            self.domain.clone(),
            next.codomain.clone(),
            a * &self.weight,
            a * &self.bias + &next.bias,
            a * &self.noise_cov * a.transpose() + &next.noise_cov,
        ))
    }

    pub fn tensor(&self, other: &GaussianChannel) -> GaussianChannel {
        let mut bias = DVector::zeros(self.bias.len() + other.bias.len());
        bias.rows_mut(0, self.bias.len()).copy_from(&self.bias);
        bias.rows_mut(self.bias.len(), other.bias.len()).copy_from(&other.bias);
        Self::unchecked(
            self.domain.product(&other.domain),
            self.codomain.product(&other.codomain),
            block_diag(&self.weight, &other.weight),
            bias,
            block_diag(&self.noise_cov, &other.noise_cov),
        )
    }

    /// Conjugate posterior `y ↦ N(μ + K(y − Aμ − b), Σ − KAΣ)` with gain
    /// `K = ΣAᵀ(AΣAᵀ + Σ_noise)⁻¹`.
    pub fn invert(&self, prior: &GaussianState) -> Result<GaussianChannel> {
        let evidence = self.pushforward(prior)?;
        let chol = cholesky(&evidence.cov, "bayes_invert: evidence covariance")?;
        let cross = &prior.cov * self.weight.transpose();
        let gain = chol.solve(&cross.transpose()).transpose();
        let bias = &prior.mean - &gain * (&self.weight * &prior.mean + &self.bias);
        let noise = &prior.cov - &gain * &self.weight * &prior.cov;
        Ok(Self::unchecked(self.codomain.clone(), self.domain.clone(), gain, bias, noise))
    }

    pub fn log_density(&self, y: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                context: "log_density input",
                expected: self.domain.dim(),
                found: x.len(),
            });
        }
        gaussian_log_density(y, &(&self.weight * x + &self.bias), &self.noise_cov)
    }

    /// Sup-norm deviation between two posterior families on the support of
    /// `reference`: the affine means are compared at the reference mean and
    /// along every direction the reference charges, and the noise
    /// covariances entrywise.
    pub fn max_deviation(&self, other: &GaussianChannel, reference: &GaussianState) -> Result<f64> {
        if self.weight.shape() != other.weight.shape() {
            return Err(Error::SpaceMismatch {
                context: "almost_equal",
                detail: "families have different shapes".into(),
            });
        }
        if reference.dim() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                context: "almost_equal reference",
                expected: self.domain.dim(),
                found: reference.dim(),
            });
        }
        let at_mean = (&self.weight - &other.weight) * &reference.mean + (&self.bias - &other.bias);
        let mut dev = sup(at_mean.iter().copied());
        if reference.dim() > 0 {
            let eig = symmetrize(&reference.cov).symmetric_eigen();
            let dw = &self.weight - &other.weight;
            for (i, &l) in eig.eigenvalues.iter().enumerate() {
                if l > TOL.supp {
                    dev = dev.max(sup((&dw * eig.eigenvectors.column(i)).iter().copied()));
                }
            }
        }
        Ok(dev.max(sup((&self.noise_cov - &other.noise_cov).iter().copied())))
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidDistribution(format!("{what} must be {nrows}×{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blocks: Option<Vec<usize>>,
}

impl Serialize for GaussianState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StateRepr {
            mean: self.mean.iter().copied().collect(),
            cov: matrix_rows(&self.cov),
            blocks: (self.space.factor_count() != 1).then(|| self.space.blocks.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = StateRepr::deserialize(d)?;
        let n = r.mean.len();
        let space = match r.blocks {
            Some(b) => EuclideanSpace::from_blocks(b),
            None => EuclideanSpace::new(n),
        };
        let cov = matrix_from_rows(&r.cov, n, n, "cov").map_err(serde::de::Error::custom)?;
        GaussianState::with_space(space, DVector::from_vec(r.mean), cov).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct ChannelRepr {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
    noise_cov: Vec<Vec<f64>>,
    #[serde(default)]
    domain_blocks: Option<Vec<usize>>,
    #[serde(default)]
    codomain_blocks: Option<Vec<usize>>,
}

impl Serialize for GaussianChannel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChannelRepr {
            weight: matrix_rows(&self.weight),
            bias: self.bias.iter().copied().collect(),
            noise_cov: matrix_rows(&self.noise_cov),
            domain_blocks: Some(self.domain.blocks.clone()),
            codomain_blocks: Some(self.codomain.blocks.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianChannel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ChannelRepr::deserialize(d)?;
        // omitted blocks default to one factor sized by the weight and bias
        let cols = r.weight.first().map_or(0, Vec::len);
        let domain = r
            .domain_blocks
            .map_or_else(|| EuclideanSpace::new(cols), EuclideanSpace::from_blocks);
        let codomain = r
            .codomain_blocks
            .map_or_else(|| EuclideanSpace::new(r.bias.len()), EuclideanSpace::from_blocks);
        let (n, m) = (domain.dim(), codomain.dim());
        let weight = matrix_from_rows(&r.weight, m, n, "weight").map_err(serde::de::Error::custom)?;
        let noise = matrix_from_rows(&r.noise_cov, m, m, "noise_cov").map_err(serde::de::Error::custom)?;
        GaussianChannel::with_spaces(domain, codomain, weight, DVector::from_vec(r.bias), noise).map_err(serde::de::Error::custom)
    }
}
