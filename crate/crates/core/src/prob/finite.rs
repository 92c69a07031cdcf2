//! Exact finite backend: distributions are probability vectors and channels
//! are row-stochastic tables `p(y | x)` with rows indexed by the domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TOL;

/// A finite outcome space, possibly a product of labelled factors.
///
/// Product outcomes are ordered lexicographically with the first factor
/// major. The empty product is the one-point unit space, so `X ⊗ I` and `X`
/// are the same space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FiniteSpace {
    factors: Vec<Vec<String>>,
}

impl FiniteSpace {
    /// Single-factor space with the given labels.
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        Self::from_factors(vec![labels])
    }

    pub fn from_factors(factors: Vec<Vec<String>>) -> Result<Self> {
        for f in &factors {
            if f.is_empty() {
                return Err(Error::InvalidDistribution("empty factor".into()));
            }
            let mut seen = std::collections::HashSet::new();
            for l in f {
                if !seen.insert(l.as_str()) {
                    return Err(Error::InvalidDistribution(format!("duplicate outcome label {l:?}")));
                }
            }
        }
        Ok(Self { factors })
    }

    /// Labels `"0"`, `"1"`, ... `n-1`.
    pub fn range(n: usize) -> Self {
        assert!(n > 0, "finite spaces are nonempty");
        Self {
            factors: vec![(0..n).map(|i| i.to_string()).collect()],
        }
    }

    pub fn unit() -> Self {
        Self { factors: vec![] }
    }

    pub fn product(&self, other: &Self) -> Self {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        Self { factors }
    }

    pub fn size(&self) -> usize {
        self.factors.iter().map(Vec::len).product()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_sizes(&self) -> Vec<usize> {
        self.factors.iter().map(Vec::len).collect()
    }

    pub fn factors(&self) -> &[Vec<String>] {
        &self.factors
    }

    /// The product of factors `range`.
    pub fn sub_space(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.factors.len() || range.start > range.end {
            return Err(Error::UnknownFactor {
                factor: range.end.saturating_sub(1),
                count: self.factors.len(),
            });
        }
        Ok(Self {
            factors: self.factors[range].to_vec(),
        })
    }

    pub fn label(&self, index: usize) -> String {
        match self.factors.len() {
            0 => "*".to_string(),
            1 => self.factors[0][index].clone(),
            _ => {
                let parts: Vec<&str> = self
                    .split_index(index)
                    .into_iter()
                    .zip(&self.factors)
                    .map(|(i, f)| f[i].as_str())
                    .collect();
                format!("({})", parts.join(","))
            }
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.size()).map(|i| self.label(i)).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        (0..self.size()).find(|&i| self.label(i) == label)
    }

    /// Per-factor coordinates of a flat outcome index.
    pub fn split_index(&self, mut index: usize) -> Vec<usize> {
        let sizes = self.factor_sizes();
        let mut out = vec![0; sizes.len()];
        for (slot, &n) in out.iter_mut().zip(&sizes).rev() {
            *slot = index % n;
            index /= n;
        }
        out
    }

    pub fn join_index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(self.factor_sizes()).fold(0, |acc, (&c, n)| acc * n + c)
    }
}

fn check_probs(probs: &[f64], what: &str) -> Result<()> {
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!("{what} has a negative or non-finite entry {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > TOL.norm {
        return Err(Error::InvalidDistribution(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// A probability distribution on a finite space.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDist {
    space: FiniteSpace,
    probs: Vec<f64>,
}

impl FiniteDist {
    pub fn new(space: FiniteSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.size() {
            return Err(Error::DimensionMismatch {
                context: "FiniteDist::new",
                expected: space.size(),
                found: probs.len(),
            });
        }
        check_probs(&probs, "distribution")?;
        Ok(Self { space, probs })
    }

    /// Distribution on `FiniteSpace::range(probs.len())`.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no outcomes".into()));
        }
        Self::new(FiniteSpace::range(probs.len()), probs)
    }

    pub fn point(space: FiniteSpace, index: usize) -> Self {
        let mut probs = vec![0.0; space.size()];
        probs[index] = 1.0;
        Self { space, probs }
    }

    pub fn uniform(space: FiniteSpace) -> Self {
        let n = space.size();
        Self {
            space,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn space(&self) -> &FiniteSpace {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs.iter().enumerate().filter(|(_, &p)| p > TOL.supp).map(|(i, _)| i)
    }

    pub fn tensor(&self, other: &FiniteDist) -> FiniteDist {
        let probs = self.probs.iter().flat_map(|&p| other.probs.iter().map(move |&q| p * q)).collect();
        FiniteDist {
            space: self.space.product(&other.space),
            probs,
        }
    }

    /// Marginal onto the contiguous factor range `factors`.
    pub fn marginalize(&self, factors: std::ops::Range<usize>) -> Result<FiniteDist> {
        let target = self.space.sub_space(factors.clone())?;
        let mut probs = vec![0.0; target.size()];
        for (i, &p) in self.probs.iter().enumerate() {
            let coords = self.space.split_index(i);
            probs[target.join_index(&coords[factors.clone()])] += p;
        }
        Ok(FiniteDist { space: target, probs })
    }

    /// Exact expectation of `f` (indexed by outcome).
    pub fn expectation(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| p * f(i))
            .sum()
    }

    /// Inverse-CDF sample.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> usize {
        sample_index(&self.probs, rng)
    }

    pub fn total_variation(&self, other: &FiniteDist) -> f64 {
        total_variation(&self.probs, &other.probs)
    }

    /// `Σ p log(p/q)` with `0 log 0 = 0`; errors if `p` charges a null outcome of `q`.
    pub fn kl(&self, q: &FiniteDist) -> Result<f64> {
        if self.space != q.space {
            return Err(Error::SpaceMismatch {
                context: "kl",
                detail: "distributions live on different spaces".into(),
            });
        }
        let mut total = 0.0;
        for (i, (&p, &qi)) in self.probs.iter().zip(&q.probs).enumerate() {
            if p <= 0.0 {
                continue;
            }
            if qi <= 0.0 {
                return Err(Error::SupportViolation(format!(
                    "outcome {} has mass {p} under p but none under q",
                    self.space.label(i)
                )));
            }
            total += p * (p / qi).ln();
        }
        Ok(total)
    }
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut impl rand::Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub(crate) fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// A stochastic channel between finite spaces, stored as a row-major table.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChannel {
    domain: FiniteSpace,
    codomain: FiniteSpace,
    table: Vec<f64>,
}

impl FiniteChannel {
    pub fn new(domain: FiniteSpace, codomain: FiniteSpace, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != domain.size() {
            return Err(Error::DimensionMismatch {
                context: "FiniteChannel rows",
                expected: domain.size(),
                found: rows.len(),
            });
        }
        let mut table = Vec::with_capacity(domain.size() * codomain.size());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != codomain.size() {
                return Err(Error::DimensionMismatch {
                    context: "FiniteChannel row length",
                    expected: codomain.size(),
                    found: row.len(),
                });
            }
            check_probs(&row, &format!("row {}", domain.label(i))).map_err(|e| Error::InvalidChannel(e.to_string()))?;
            table.extend(row);
        }
        Ok(Self { domain, codomain, table })
    }

    /// Channel on `range(rows.len()) → range(rows[0].len())`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_in = rows.len();
        let n_out = rows.first().map_or(0, Vec::len);
        if n_in == 0 || n_out == 0 {
            return Err(Error::InvalidChannel("empty table".into()));
        }
        Self::new(FiniteSpace::range(n_in), FiniteSpace::range(n_out), rows)
    }

    pub(crate) fn from_table_unchecked(domain: FiniteSpace, codomain: FiniteSpace, table: Vec<f64>) -> Self {
        debug_assert_eq!(table.len(), domain.size() * codomain.size());
        Self { domain, codomain, table }
    }

    pub fn identity(space: FiniteSpace) -> Self {
        let n = space.size();
        let mut table = vec![0.0; n * n];
        for i in 0..n {
            table[i * n + i] = 1.0;
        }
        Self::from_table_unchecked(space.clone(), space, table)
    }

    /// Deterministic channel sending `x` to `f(x)`.
    pub fn deterministic(domain: FiniteSpace, codomain: FiniteSpace, f: impl Fn(usize) -> usize) -> Result<Self> {
        let (n, m) = (domain.size(), codomain.size());
        let mut table = vec![0.0; n * m];
        for x in 0..n {
            let y = f(x);
            if y >= m {
                return Err(Error::InvalidChannel(format!("deterministic map sends {x} outside the codomain")));
            }
            table[x * m + y] = 1.0;
        }
        Ok(Self::from_table_unchecked(domain, codomain, table))
    }

    /// Channel ignoring its input and emitting `state`.
    pub fn constant(domain: FiniteSpace, state: &FiniteDist) -> Self {
        let n = domain.size();
        let table = (0..n).flat_map(|_| state.probs.iter().copied()).collect();
        Self::from_table_unchecked(domain, state.space.clone(), table)
    }

    /// The unique channel into the unit space.
    pub fn discard(domain: FiniteSpace) -> Self {
        Self::constant(domain, &FiniteDist::point(FiniteSpace::unit(), 0))
    }

    /// Projection of a product space onto the factor range `keep`.
    pub fn projection(space: &FiniteSpace, keep: std::ops::Range<usize>) -> Result<Self> {
        let target = space.sub_space(keep.clone())?;
        Self::deterministic(space.clone(), target.clone(), |i| {
            target.join_index(&space.split_index(i)[keep.clone()])
        })
    }

    /// `y ↦ δ_y ⊗ state` (or `state ⊗ δ_y` when `state_first`).
    pub fn attach(space: &FiniteSpace, state: &FiniteDist, state_first: bool) -> Self {
        let id = Self::identity(space.clone());
        let emit = Self::constant(FiniteSpace::unit(), state);
        if state_first {
            emit.tensor(&id)
        } else {
            id.tensor(&emit)
        }
    }

    pub fn domain(&self) -> &FiniteSpace {
        &self.domain
    }

    pub fn codomain(&self) -> &FiniteSpace {
        &self.codomain
    }

    pub fn row(&self, x: usize) -> &[f64] {
        let m = self.codomain.size();
        &self.table[x * m..(x + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.table.chunks(self.codomain.size())
    }

    pub fn prob(&self, y: usize, x: usize) -> f64 {
        self.table[x * self.codomain.size() + y]
    }

    pub fn row_dist(&self, x: usize) -> FiniteDist {
        FiniteDist {
            space: self.codomain.clone(),
            probs: self.row(x).to_vec(),
        }
    }

    pub(crate) fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    /// `(c∘π)(y) = Σ_x p(y|x) π(x)`.
    pub fn pushforward(&self, state: &FiniteDist) -> Result<FiniteDist> {
        if state.space != self.domain {
            return Err(Error::SpaceMismatch {
                context: "pushforward",
                detail: format!("state lives on {} outcomes, channel domain has {}", state.len(), self.domain.size()),
            });
        }
        let m = self.codomain.size();
        let mut probs = vec![0.0; m];
        for (x, &p) in state.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (out, &k) in probs.iter_mut().zip(self.row(x)) {
                *out += p * k;
            }
        }
        Ok(FiniteDist {
            space: self.codomain.clone(),
            probs,
        })
    }

    /// `next ∘ self`: run `self` first, then `next`.
    pub fn then(&self, next: &FiniteChannel) -> Result<FiniteChannel> {
        if self.codomain != next.domain {
            return Err(Error::SpaceMismatch {
                context: "compose_channels",
                detail: format!(
                    "codomain of size {} does not match domain of size {}",
                    self.codomain.size(),
                    next.domain.size()
                ),
            });
        }
        let (n, k, m) = (self.domain.size(), self.codomain.size(), next.codomain.size());
        let mut table = vec![0.0; n * m];
        for x in 0..n {
            let out = &mut table[x * m..(x + 1) * m];
            for y in 0..k {
                let p = self.table[x * k + y];
                if p == 0.0 {
                    continue;
                }
                for (o, &q) in out.iter_mut().zip(next.row(y)) {
                    *o += p * q;
                }
            }
        }
        Ok(Self::from_table_unchecked(self.domain.clone(), next.codomain.clone(), table))
    }

    /// Kronecker product with product-space ordering, first factor major.
    pub fn tensor(&self, other: &FiniteChannel) -> FiniteChannel {
        let domain = self.domain.product(&other.domain);
        let codomain = self.codomain.product(&other.codomain);
        let (n1, m1) = (self.domain.size(), self.codomain.size());
        let (n2, m2) = (other.domain.size(), other.codomain.size());
        let m = m1 * m2;
        let mut table = vec![0.0; n1 * n2 * m];
        for x1 in 0..n1 {
            for x2 in 0..n2 {
                let row = (x1 * n2 + x2) * m;
                for y1 in 0..m1 {
                    let p = self.table[x1 * m1 + y1];
                    for y2 in 0..m2 {
                        table[row + y1 * m2 + y2] = p * other.table[x2 * m2 + y2];
                    }
                }
            }
        }
        Self::from_table_unchecked(domain, codomain, table)
    }

    /// Bayesian inversion with respect to `prior`, as a channel `Y → X`.
    ///
    /// Rows for outcomes with no mass under the pushforward are not determined
    /// by Bayes' rule; they are filled with the prior so the result is a valid
    /// channel. Use [`FiniteChannel::posterior`] to condition on a single
    /// outcome with an error on null outcomes.
    pub fn invert(&self, prior: &FiniteDist) -> Result<FiniteChannel> {
        let evidence = self.pushforward(prior)?;
        let (n, m) = (self.domain.size(), self.codomain.size());
        let mut table = vec![0.0; m * n];
        for y in 0..m {
            let row = &mut table[y * n..(y + 1) * n];
            let mass = evidence.probs[y];
            if mass > TOL.supp {
                for (x, r) in row.iter_mut().enumerate() {
                    *r = self.table[x * m + y] * prior.probs[x] / mass;
                }
            } else {
                row.copy_from_slice(&prior.probs);
            }
        }
        Ok(Self::from_table_unchecked(self.codomain.clone(), self.domain.clone(), table))
    }

    /// The Bayesian update of `prior` along `self` given outcome `y`.
    pub fn posterior(&self, prior: &FiniteDist, y: usize) -> Result<FiniteDist> {
        let evidence = self.pushforward(prior)?;
        let mass = evidence.probs[y];
        if mass <= TOL.supp {
            return Err(Error::UnsupportedOutcome {
                outcome: self.codomain.label(y),
            });
        }
        let probs = (0..self.domain.size()).map(|x| self.prob(y, x) * prior.probs[x] / mass).collect();
        Ok(FiniteDist {
            space: self.domain.clone(),
            probs,
        })
    }

    /// `ln p(y|x)`; zero entries give [`super::LOG_ZERO`].
    pub fn log_density(&self, y: usize, x: usize) -> f64 {
        let p = self.prob(y, x);
        if p > 0.0 {
            p.ln()
        } else {
            super::LOG_ZERO
        }
    }

    /// Worst total-variation distance between rows `y` of two channels over
    /// the outcomes charged by `reference`.
    pub fn max_deviation(&self, other: &FiniteChannel, reference: &FiniteDist) -> Result<f64> {
        if self.domain != other.domain || self.codomain != other.codomain {
            return Err(Error::SpaceMismatch {
                context: "almost_equal",
                detail: "families are indexed differently".into(),
            });
        }
        if reference.space != self.domain {
            return Err(Error::SpaceMismatch {
                context: "almost_equal",
                detail: "reference state does not index the families".into(),
            });
        }
        Ok(reference
            .support()
            .map(|y| total_variation(self.row(y), other.row(y)))
            .fold(0.0, f64::max))
    }
}

#[derive(Serialize, Deserialize)]
struct DistRepr {
    #[serde(default)]
    support: Option<Vec<String>>,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<Vec<Vec<String>>>,
}

/// Omitted labels default to indices.
fn space_from_repr(labels: Option<Vec<String>>, factors: Option<Vec<Vec<String>>>, size: usize) -> Result<FiniteSpace> {
    match (labels, factors) {
        (None, None) => Ok(FiniteSpace::range(size)),
        (Some(labels), None) => FiniteSpace::new(labels),
        (None, Some(factors)) => FiniteSpace::from_factors(factors),
        (Some(labels), Some(factors)) => {
            let space = FiniteSpace::from_factors(factors)?;
            if space.labels() != labels {
                return Err(Error::InvalidDistribution(
                    "support labels do not match the declared factors".into(),
                ));
            }
            Ok(space)
        }
    }
}

fn factors_repr(space: &FiniteSpace) -> Option<Vec<Vec<String>>> {
    (space.factor_count() != 1).then(|| space.factors.clone())
}

impl Serialize for FiniteDist {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DistRepr {
            support: Some(self.space.labels()),
            probs: self.probs.clone(),
            factors: factors_repr(&self.space),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteDist {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DistRepr::deserialize(d)?;
        let space = space_from_repr(r.support, r.factors, r.probs.len()).map_err(serde::de::Error::custom)?;
        FiniteDist::new(space, r.probs).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct ChannelRepr {
    #[serde(default)]
    domain: Option<Vec<String>>,
    #[serde(default)]
    codomain: Option<Vec<String>>,
    rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain_factors: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    codomain_factors: Option<Vec<Vec<String>>>,
}

impl Serialize for FiniteChannel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChannelRepr {
            domain: Some(self.domain.labels()),
            codomain: Some(self.codomain.labels()),
            rows: self.rows().map(<[f64]>::to_vec).collect(),
            domain_factors: factors_repr(&self.domain),
            codomain_factors: factors_repr(&self.codomain),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteChannel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ChannelRepr::deserialize(d)?;
        let width = r.rows.first().map_or(0, Vec::len);
        let domain = space_from_repr(r.domain, r.domain_factors, r.rows.len()).map_err(serde::de::Error::custom)?;
        let codomain = space_from_repr(r.codomain, r.codomain_factors, width).map_err(serde::de::Error::custom)?;
        FiniteChannel::new(domain, codomain, r.rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c() -> FiniteChannel {
        FiniteChannel::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(FiniteChannel::from_rows(vec![vec![0.5, 0.6]]).is_err());
        assert!(FiniteChannel::from_rows(vec![vec![1.2, -0.2]]).is_err());
        assert!(FiniteDist::from_probs(vec![0.5, 0.4]).is_err());
        assert!(FiniteSpace::new(["a", "a"]).is_err());
    }

    #[test]
    fn product_labels_are_first_factor_major() {
        let s = FiniteSpace::new(["a", "b"])
            .unwrap()
            .product(&FiniteSpace::new(["x", "y", "z"]).unwrap());
        assert_eq!(s.label(0), "(a,x)");
        assert_eq!(s.label(4), "(b,y)");
        assert_eq!(s.split_index(5), vec![1, 2]);
        assert_eq!(s.join_index(&[1, 2]), 5);
        assert_eq!(s.index_of("(b,x)"), Some(3));
    }

    #[test]
    fn unit_is_a_tensor_unit() {
        let x = FiniteSpace::range(3);
        assert_eq!(x.product(&FiniteSpace::unit()), x);
        assert_eq!(FiniteSpace::unit().size(), 1);
    }

    #[test]
    fn posterior_of_null_outcome_is_an_error() {
        let det = FiniteChannel::identity(FiniteSpace::range(2));
        let prior = FiniteDist::point(FiniteSpace::range(2), 0);
        assert!(matches!(det.posterior(&prior, 1), Err(Error::UnsupportedOutcome { .. })));
        // the full inversion stays a valid channel
        let inv = det.invert(&prior).unwrap();
        assert_eq!(inv.row(1), prior.probs());
    }

    #[test]
    fn kl_support_violation() {
        let p = FiniteDist::from_probs(vec![0.5, 0.5]).unwrap();
        let q = FiniteDist::from_probs(vec![1.0, 0.0]).unwrap();
        assert!(matches!(p.kl(&q), Err(Error::SupportViolation(_))));
        assert_eq!(q.kl(&p).unwrap(), 2f64.ln());
    }

    #[test]
    fn projection_and_attach() {
        let x = FiniteSpace::range(2);
        let y = FiniteSpace::range(3);
        let proj = FiniteChannel::projection(&x.product(&y), 1..2).unwrap();
        assert_eq!(proj.row(4), &[0.0, 1.0, 0.0]);
        let rho = FiniteDist::from_probs(vec![0.2, 0.3, 0.5]).unwrap();
        let att = FiniteChannel::attach(&x, &rho, false);
        assert_eq!(att.row(1), &[0.0, 0.0, 0.0, 0.2, 0.3, 0.5]);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let ch = c();
        let s = serde_json::to_string(&ch).unwrap();
        assert_eq!(s, r#"{"domain":["0","1"],"codomain":["0","1"],"rows":[[0.9,0.1],[0.2,0.8]]}"#);
        let back: FiniteChannel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ch);
        let d = FiniteDist::from_probs(vec![0.1, 0.2, 0.7000000000000001]).unwrap();
        let joint = d.tensor(&d);
        let s = serde_json::to_string(&joint).unwrap();
        let back: FiniteDist = serde_json::from_str(&s).unwrap();
        assert_eq!(back, joint);
    }

    #[test]
    fn sampling_respects_zero_mass() {
        let d = FiniteDist::from_probs(vec![0.0, 1.0, 0.0]).unwrap();
        let mut rng = crate::rng::seeded(3);
        assert!((0..100).all(|_| d.sample(&mut rng) == 1));
    }
}
