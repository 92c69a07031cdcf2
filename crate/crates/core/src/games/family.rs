//! Parameterized families of channels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::prob::{Channel, EuclideanSpace, FiniteChannel, FiniteSpace, GaussianChannel, Space};

/// Largest grid a family will enumerate.
pub const MAX_GRID: usize = 2_000_000;

/// A family `θ ↦ c_θ` of channels between fixed spaces.
pub trait ChannelFamily: Send + Sync {
    fn domain(&self) -> Space;
    fn codomain(&self) -> Space;
    fn param_dim(&self) -> usize;
    fn instantiate(&self, params: &[f64]) -> Result<Channel>;
    /// The enumerable parameter points, or `None` for continuous families.
    fn grid(&self) -> Option<Vec<Vec<f64>>> {
        None
    }

    /// All enumerable members.
    fn members(&self) -> Result<Vec<Channel>> {
        let grid = self
            .grid()
            .ok_or_else(|| Error::EmptyStrategySpace("family is not enumerable".into()))?;
        grid.iter().map(|p| self.instantiate(p)).collect()
    }
}

fn check_len(params: &[f64], n: usize) -> Result<()> {
    if params.len() != n {
        return Err(Error::DimensionMismatch {
            context: "family parameters",
            expected: n,
            found: params.len(),
        });
    }
    Ok(())
}

/// An explicit list of channels; the parameter is the index.
#[derive(Debug, Clone)]
pub struct Enumerated {
    channels: Vec<Channel>,
}

impl Enumerated {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::EmptyStrategySpace("empty channel list".into()))?;
        if channels
            .iter()
            .any(|c| c.domain() != first.domain() || c.codomain() != first.codomain())
        {
            return Err(Error::SpaceMismatch {
                context: "enumerated family",
                detail: "members have different shapes".into(),
            });
        }
        Ok(Self { channels })
    }
}

impl ChannelFamily for Enumerated {
    fn domain(&self) -> Space {
        self.channels[0].domain()
    }

    fn codomain(&self) -> Space {
        self.channels[0].codomain()
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn instantiate(&self, params: &[f64]) -> Result<Channel> {
        check_len(params, 1)?;
        let i = params[0];
        if i < 0.0 || i.fract() != 0.0 || i as usize >= self.channels.len() {
            return Err(Error::Config(format!("no member with index {i}")));
        }
        Ok(self.channels[i as usize].clone())
    }

    fn grid(&self) -> Option<Vec<Vec<f64>>> {
        Some((0..self.channels.len()).map(|i| vec![i as f64]).collect())
    }
}

/// Row-stochastic tables whose entries are multiples of `1/steps`.
/// Parameters are the table entries, row-major.
#[derive(Debug, Clone)]
pub struct RowSimplexGrid {
    domain: FiniteSpace,
    codomain: FiniteSpace,
    steps: usize,
}

impl RowSimplexGrid {
    /// Grid with spacing `step`, which must divide one.
    pub fn new(domain: FiniteSpace, codomain: FiniteSpace, step: f64) -> Result<Self> {
        let steps = (1.0 / step).round();
        if !(step > 0.0) || (steps * step - 1.0).abs() > 1e-9 || codomain.size() == 0 {
            return Err(Error::Config(format!("grid step {step} does not divide 1")));
        }
        Ok(Self {
            domain,
            codomain,
            steps: steps as usize,
        })
    }

    pub fn step(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// All points of the probability simplex on `m` atoms with this spacing.
    pub fn row_points(&self) -> Vec<Vec<f64>> {
        simplex_points(self.codomain.size(), self.steps)
    }
}

/// Points of the `m`-atom simplex whose coordinates are multiples of `1/steps`,
/// in lexicographic order of the integer compositions.
pub fn simplex_points(m: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if m == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(m - 1, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut ints = Vec::new();
    if m > 0 {
        rec(m, steps, &mut Vec::new(), &mut ints);
    }
    ints.into_iter()
        .map(|v| v.into_iter().map(|k| k as f64 / steps as f64).collect())
        .collect()
}

impl ChannelFamily for RowSimplexGrid {
    fn domain(&self) -> Space {
        self.domain.clone().into()
    }

    fn codomain(&self) -> Space {
        self.codomain.clone().into()
    }

    fn param_dim(&self) -> usize {
        self.domain.size() * self.codomain.size()
    }

    fn instantiate(&self, params: &[f64]) -> Result<Channel> {
        check_len(params, self.param_dim())?;
        let rows = params.chunks(self.codomain.size()).map(|r| r.to_vec()).collect();
        Ok(FiniteChannel::new(self.domain.clone(), self.codomain.clone(), rows)?.into())
    }

    fn grid(&self) -> Option<Vec<Vec<f64>>> {
        let rows = self.row_points();
        let n = self.domain.size();
        let total = (rows.len() as f64).powi(n as i32);
        if total > MAX_GRID as f64 {
            return None;
        }
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    rows.iter().map(move |r| {
                        let mut p = prefix.clone();
                        p.extend_from_slice(r);
                        p
                    })
                })
                .collect();
        }
        Some(out)
    }
}

/// Tables with rows `softmax(θ_x)`; unconstrained parameters.
#[derive(Debug, Clone)]
pub struct SoftmaxKernel {
    domain: FiniteSpace,
    codomain: FiniteSpace,
}

impl SoftmaxKernel {
    pub fn new(domain: FiniteSpace, codomain: FiniteSpace) -> Self {
        Self { domain, codomain }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

impl ChannelFamily for SoftmaxKernel {
    fn domain(&self) -> Space {
        self.domain.clone().into()
    }

    fn codomain(&self) -> Space {
        self.codomain.clone().into()
    }

    fn param_dim(&self) -> usize {
        self.domain.size() * self.codomain.size()
    }

    fn instantiate(&self, params: &[f64]) -> Result<Channel> {
        check_len(params, self.param_dim())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidChannel("non-finite logits".into()));
        }
        let rows = params.chunks(self.codomain.size()).map(softmax).collect();
        Ok(FiniteChannel::new(self.domain.clone(), self.codomain.clone(), rows)?.into())
    }
}

/// Kernels `x ↦ N(Wx + b, diag(exp(ℓ)))`. Parameters are `W` row-major,
/// then `b`, then the log-variances `ℓ`.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    domain: EuclideanSpace,
    codomain: EuclideanSpace,
}

impl LinearGaussian {
    pub fn new(domain: EuclideanSpace, codomain: EuclideanSpace) -> Self {
        Self { domain, codomain }
    }
}

impl ChannelFamily for LinearGaussian {
    fn domain(&self) -> Space {
        self.domain.clone().into()
    }

    fn codomain(&self) -> Space {
        self.codomain.clone().into()
    }

    fn param_dim(&self) -> usize {
        let (n, m) = (self.domain.dim(), self.codomain.dim());
        m * n + 2 * m
    }

    fn instantiate(&self, params: &[f64]) -> Result<Channel> {
        check_len(params, self.param_dim())?;
        let (n, m) = (self.domain.dim(), self.codomain.dim());
        let w = DMatrix::from_row_slice(m, n, &params[..m * n]);
        let b = DVector::from_column_slice(&params[m * n..m * n + m]);
        let var = DVector::from_iterator(m, params[m * n + m..].iter().map(|l| l.exp()));
        Ok(GaussianChannel::with_spaces(self.domain.clone(), self.codomain.clone(), w, b, DMatrix::from_diagonal(&var))?.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_points(2, 20).len(), 21);
        assert_eq!(simplex_points(3, 50).len(), 51 * 52 / 2);
        for p in simplex_points(3, 4) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let g = RowSimplexGrid::new(FiniteSpace::range(2), FiniteSpace::range(2), 0.05).unwrap();
        assert_eq!(g.grid().unwrap().len(), 21 * 21);
        assert!(g.members().unwrap().iter().all(|c| c.domain().size() == 2));
        assert!(RowSimplexGrid::new(FiniteSpace::range(2), FiniteSpace::range(2), 0.3).is_err());
    }

    #[test]
    fn softmax_and_gaussian_families() {
        let f = SoftmaxKernel::new(FiniteSpace::range(2), FiniteSpace::range(3));
        let c = f.instantiate(&[0.0, 0.0, 0.0, 1000.0, 0.0, 0.0]).unwrap();
        let c = c.as_finite().unwrap();
        assert!((c.prob(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.prob(0, 1) - 1.0).abs() < 1e-15);
        assert!(f.grid().is_none());

        let g = LinearGaussian::new(EuclideanSpace::new(1), EuclideanSpace::new(1));
        assert_eq!(g.param_dim(), 3);
        let c = g.instantiate(&[0.5, 1.0, 0.0]).unwrap();
        let c = c.as_gaussian().unwrap();
        assert_eq!(c.weight()[(0, 0)], 0.5);
        assert_eq!(c.noise_cov()[(0, 0)], 1.0);
    }

    #[test]
    fn enumerated_family() {
        let a: Channel = FiniteChannel::identity(FiniteSpace::range(2)).into();
        let f = Enumerated::new(vec![a.clone(), a.clone()]).unwrap();
        assert_eq!(f.grid().unwrap().len(), 2);
        assert!(f.instantiate(&[2.0]).is_err());
        assert!(Enumerated::new(vec![]).is_err());
    }
}
