//! Objective functions of the game families, all normalized to minimization.
//!
//! Finite backends are evaluated exactly by enumeration. Linear-Gaussian
//! backends use closed forms whenever the divergence is KL or zero, and a
//! seeded Monte Carlo average over the data otherwise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Context;
use crate::error::{Error, Result};
use crate::lens::StateDependentChannel;
use crate::prob::gaussian::{cholesky, log_det_pd};
use crate::prob::{self, Channel, Divergence, FiniteChannel, FiniteDist, GaussianChannel, GaussianState, McOptions, State};

/// Integrand of the maximum-likelihood objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MleScore {
    /// `−E_{k∘π}[π]`, the mass (or density) itself.
    #[default]
    Mass,
    /// `−E_{k∘π}[log π]`.
    Log,
}

/// Which expectation order the autoencoder objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeForm {
    /// Reconstruction and divergence are averaged per observed outcome:
    /// `E_x[E_{z∼c'(x)}[−log p_c(x|z)] + D(c'(x), π)]`.
    #[default]
    Joint,
    /// Divergence of the aggregate code distribution `c'∘k∘c∘π` from `π`,
    /// with reconstruction of independent `(z, x)` pairs.
    Aggregate,
}

/// `−E_{k∘π}[π]` (or its log variant) for a candidate state `pi` on `X` and
/// a continuation `k : X ⇸ X`.
pub fn mle_objective(pi: &State, k: &Channel, score: MleScore) -> Result<f64> {
    check_endo(k, &pi.space(), "mle_objective")?;
    let data = prob::pushforward(k, pi)?;
    match (pi, &data) {
        (State::Finite(p), State::Finite(q)) => Ok(match score {
            MleScore::Mass => -q.expectation(|x| p.prob(x)),
            MleScore::Log => guarded_sum(q.probs().iter().zip(p.probs()).map(|(&qx, &px)| (qx, -ln(px)))),
        }),
        (State::Gaussian(p), State::Gaussian(q)) => {
            let n = p.dim() as f64;
            match score {
                // ∫ N(x; μq, Σq) N(x; μ, Σ) dx = N(μq; μ, Σq + Σ)
                MleScore::Mass => {
                    let cov = q.cov() + p.cov();
                    let chol = cholesky(&cov, "mle_objective: combined covariance")?;
                    let diff = q.mean() - p.mean();
                    let log = -0.5 * (n * (2.0 * PI).ln() + log_det_pd(&chol) + diff.dot(&chol.solve(&diff)));
                    Ok(-log.exp())
                }
                MleScore::Log => {
                    let chol = match cholesky(p.cov(), "mle_objective") {
                        Ok(c) => c,
                        Err(_) => return Ok(f64::INFINITY),
                    };
                    let diff = q.mean() - p.mean();
                    Ok(0.5 * (n * (2.0 * PI).ln() + log_det_pd(&chol) + diff.dot(&chol.solve(&diff)) + chol.solve(q.cov()).trace()))
                }
            }
        }
        _ => Err(Error::BackendMismatch("mle_objective")),
    }
}

/// `E_{x∼k∘c∘π}[E_{z∼c'_π(x)}[−log p_c(x|z)] + D(c'_π(x), π)]`.
pub fn inference_objective(c: &Channel, c_back: &StateDependentChannel, d: &Divergence, ctx: &Context, mc: McOptions) -> Result<f64> {
    let back = c_back.at(&ctx.prior)?;
    joint_objective(c, &back, d, ctx, mc)
}

/// Negative ELBO `E_{x∼k∘c∘π}E_{z∼c'_π(x)}[log q(z|x) − log p_c(x|z) − log p_π(z)]`.
pub fn vae_objective(c: &Channel, c_back: &StateDependentChannel, ctx: &Context) -> Result<f64> {
    let back = c_back.at(&ctx.prior)?;
    let data = data_state(c, ctx)?;
    match (c, &back, &ctx.prior, &data) {
        (Channel::Finite(c), Channel::Finite(r), State::Finite(pi), State::Finite(q)) => {
            check_shapes_finite(c, r, pi)?;
            let mut terms = Vec::new();
            for x in q.support() {
                for z in 0..pi.len() {
                    let rz = r.prob(z, x);
                    if rz > 0.0 {
                        terms.push((q.prob(x) * rz, rz.ln() - c.log_density(x, z) - ln(pi.prob(z))));
                    }
                }
            }
            Ok(guarded_sum(terms))
        }
        (Channel::Gaussian(c), Channel::Gaussian(r), State::Gaussian(pi), State::Gaussian(q)) => {
            let recon = gaussian_recon_joint(c, r, q)?;
            let m = pi.dim() as f64;
            let log_q = match cholesky(r.noise_cov(), "vae_objective: backward noise") {
                Ok(ch) => -0.5 * (m * (2.0 * PI).ln() + log_det_pd(&ch) + m),
                Err(_) if pi.dim() > 0 => return Ok(f64::INFINITY),
                Err(_) => 0.0,
            };
            let code_mean = r.weight() * q.mean() + r.bias();
            let code_cov = r.weight() * q.cov() * r.weight().transpose() + r.noise_cov();
            let neg_log_prior = match cholesky(pi.cov(), "vae_objective: prior") {
                Ok(ch) => {
                    let diff = &code_mean - pi.mean();
                    0.5 * (m * (2.0 * PI).ln() + log_det_pd(&ch) + diff.dot(&ch.solve(&diff)) + ch.solve(&code_cov).trace())
                }
                Err(_) if pi.dim() > 0 => return Ok(f64::INFINITY),
                Err(_) => 0.0,
            };
            Ok(recon + log_q + neg_log_prior)
        }
        _ => Err(Error::BackendMismatch("vae_objective")),
    }
}

/// Generalized autoencoder objective with divergence `d`; see [`AeForm`].
pub fn autoencoder_objective(
    c: &Channel,
    c_back: &StateDependentChannel,
    d: &Divergence,
    ctx: &Context,
    form: AeForm,
    mc: McOptions,
) -> Result<f64> {
    let back = c_back.at(&ctx.prior)?;
    match form {
        AeForm::Joint => joint_objective(c, &back, d, ctx, mc),
        AeForm::Aggregate => aggregate_objective(c, &back, d, ctx),
    }
}

/// `k∘c∘π`, the distribution of observations.
pub fn data_state(c: &Channel, ctx: &Context) -> Result<State> {
    check_endo(&ctx.continuation, &c.codomain(), "context continuation")?;
    prob::pushforward(&ctx.continuation, &prob::pushforward(c, &ctx.prior)?)
}

/// The per-outcome term `E_{z∼row}[−log p_c(x|z)] + D(row, π)` of the joint
/// objective, for a backward row that does not depend on the prior.
pub fn inference_row_term(c: &FiniteChannel, pi: &FiniteDist, x: usize, row: &[f64], d: &Divergence) -> Result<f64> {
    let recon = guarded_sum(row.iter().enumerate().map(|(z, &r)| (r, -c.log_density(x, z))));
    let r = FiniteDist::new(pi.space().clone(), row.to_vec())?;
    Ok(recon + divergence(d, &State::Finite(r), &State::Finite(pi.clone()))?)
}

/// Minimizes the finite joint objective over backward kernels whose rows are
/// drawn independently from `rows`.
///
/// The objective is a data-weighted sum of per-row terms, so the minimum over
/// the full product grid is attained row by row. Rows the data never charges
/// do not affect the objective and are set to the first candidate.
pub fn separable_inference_argmin(c: &FiniteChannel, ctx: &Context, rows: &[Vec<f64>], d: &Divergence) -> Result<(FiniteChannel, f64)> {
    let cc = Channel::Finite(c.clone());
    let data = data_state(&cc, ctx)?;
    let (q, pi) = (data.as_finite()?, ctx.prior.as_finite()?);
    if rows.is_empty() {
        return Err(Error::EmptyStrategySpace("no candidate rows".into()));
    }
    let mut table = Vec::with_capacity(q.len());
    let mut total = 0.0;
    for x in 0..q.len() {
        if q.prob(x) <= 0.0 {
            table.push(rows[0].clone());
            continue;
        }
        let mut best = (f64::INFINITY, 0);
        for (i, row) in rows.iter().enumerate() {
            let v = inference_row_term(c, pi, x, row, d)?;
            if v < best.0 {
                best = (v, i);
            }
        }
        total += q.prob(x) * best.0;
        table.push(rows[best.1].clone());
    }
    Ok((FiniteChannel::new(c.codomain().clone(), c.domain().clone(), table)?, total))
}

fn joint_objective(c: &Channel, back: &Channel, d: &Divergence, ctx: &Context, mc: McOptions) -> Result<f64> {
    let data = data_state(c, ctx)?;
    match (c, back, &ctx.prior, &data) {
        (Channel::Finite(c), Channel::Finite(r), State::Finite(pi), State::Finite(q)) => {
            check_shapes_finite(c, r, pi)?;
            let pi_state = State::Finite(pi.clone());
            let mut terms = Vec::new();
            for x in q.support() {
                let recon = guarded_sum((0..pi.len()).map(|z| (r.prob(z, x), -c.log_density(x, z))));
                let div = divergence(d, &State::Finite(r.row_dist(x)), &pi_state)?;
                terms.push((q.prob(x), recon + div));
            }
            Ok(guarded_sum(terms))
        }
        (Channel::Gaussian(c), Channel::Gaussian(r), State::Gaussian(pi), State::Gaussian(q)) => {
            let recon = gaussian_recon_joint(c, r, q)?;
            let div = match d {
                Divergence::Zero => 0.0,
                Divergence::KullbackLeibler => gaussian_expected_kl(r, q, pi)?,
                Divergence::Custom { .. } => {
                    let pi_state = State::Gaussian(pi.clone());
                    let failure = std::cell::RefCell::new(None);
                    let est = q.expectation_mc(
                        |x| match d.eval(&State::Gaussian(r.at(x)), &pi_state) {
                            Ok(v) => v,
                            Err(e) => {
                                failure.borrow_mut().get_or_insert(e);
                                f64::NAN
                            }
                        },
                        mc.samples,
                        mc.seed,
                    );
                    if let Some(e) = failure.into_inner() {
                        return Err(e);
                    }
                    est.estimate
                }
            };
            Ok(recon + div)
        }
        _ => Err(Error::BackendMismatch("inference_objective")),
    }
}

fn aggregate_objective(c: &Channel, back: &Channel, d: &Divergence, ctx: &Context) -> Result<f64> {
    let data = data_state(c, ctx)?;
    let code = prob::pushforward(back, &data)?;
    let div = divergence(d, &code, &ctx.prior)?;
    match (c, &code, &data) {
        (Channel::Finite(c), State::Finite(rho), State::Finite(q)) => {
            let mut terms = Vec::new();
            for z in rho.support() {
                let recon = guarded_sum(q.support().map(|x| (q.prob(x), -c.log_density(x, z))));
                terms.push((rho.prob(z), recon));
            }
            Ok(guarded_sum(terms) + div)
        }
        (Channel::Gaussian(c), State::Gaussian(rho), State::Gaussian(q)) => {
            let n = q.dim() as f64;
            let chol = match cholesky(c.noise_cov(), "autoencoder_objective: forward noise") {
                Ok(ch) => ch,
                Err(_) => return Ok(f64::INFINITY),
            };
            let w = q.mean() - c.weight() * rho.mean() - c.bias();
            let spread = q.cov() + c.weight() * rho.cov() * c.weight().transpose();
            Ok(0.5 * (n * (2.0 * PI).ln() + log_det_pd(&chol) + w.dot(&chol.solve(&w)) + chol.solve(&spread).trace()) + div)
        }
        _ => Err(Error::BackendMismatch("autoencoder_objective")),
    }
}

/// `E_{x∼q}E_{z∼N(Cx+d, R)}[−log N(x; Az+b, S)]`.
fn gaussian_recon_joint(c: &GaussianChannel, r: &GaussianChannel, q: &GaussianState) -> Result<f64> {
    let n = q.dim();
    if r.domain().dim() != n || c.codomain().dim() != n || r.codomain().dim() != c.domain().dim() {
        return Err(Error::DimensionMismatch {
            context: "reconstruction term",
            expected: n,
            found: r.domain().dim(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let chol = match cholesky(c.noise_cov(), "reconstruction: forward noise") {
        Ok(ch) => ch,
        Err(_) => return Ok(f64::INFINITY),
    };
    let (a, cw) = (c.weight(), r.weight());
    let m = DMatrix::identity(n, n) - a * cw;
    let u = &m * q.mean() - a * r.bias() - c.bias();
    let spread = &m * q.cov() * m.transpose() + a * r.noise_cov() * a.transpose();
    Ok(0.5 * (n as f64 * (2.0 * PI).ln() + log_det_pd(&chol) + u.dot(&chol.solve(&u)) + chol.solve(&spread).trace()))
}

/// `E_{x∼q} KL(N(Cx+d, R) ‖ N(μ, P))`.
fn gaussian_expected_kl(r: &GaussianChannel, q: &GaussianState, pi: &GaussianState) -> Result<f64> {
    let m = pi.dim();
    if m == 0 {
        return Ok(0.0);
    }
    let cp = match cholesky(pi.cov(), "kl: prior") {
        Ok(ch) => ch,
        Err(_) => return Ok(f64::INFINITY),
    };
    let cr = match cholesky(r.noise_cov(), "kl: backward noise") {
        Ok(ch) => ch,
        Err(_) => return Ok(f64::INFINITY),
    };
    let v: DVector<f64> = r.weight() * q.mean() + r.bias() - pi.mean();
    let spread = r.noise_cov() + r.weight() * q.cov() * r.weight().transpose();
    Ok(0.5 * (cp.solve(&spread).trace() + v.dot(&cp.solve(&v)) - m as f64 + log_det_pd(&cp) - log_det_pd(&cr)))
}

/// A divergence value; a KL support violation is an infinite divergence.
fn divergence(d: &Divergence, p: &State, q: &State) -> Result<f64> {
    match d.eval(p, q) {
        Err(Error::SupportViolation(_)) if matches!(d, Divergence::KullbackLeibler) => Ok(f64::INFINITY),
        other => other,
    }
}

fn check_shapes_finite(c: &FiniteChannel, r: &FiniteChannel, pi: &FiniteDist) -> Result<()> {
    if c.domain() != pi.space() || r.codomain() != pi.space() || r.domain() != c.codomain() {
        return Err(Error::SpaceMismatch {
            context: "objective",
            detail: "forward, backward and prior do not fit together".into(),
        });
    }
    Ok(())
}

fn check_endo(k: &Channel, space: &prob::Space, what: &'static str) -> Result<()> {
    if k.domain() != *space || k.codomain() != *space {
        return Err(Error::SpaceMismatch {
            context: what,
            detail: "continuation is not an endochannel on the observed space".into(),
        });
    }
    Ok(())
}

fn ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        prob::LOG_ZERO
    }
}

/// `Σ w·v` over pairs with `w > 0`, so `0·∞` contributes nothing and an
/// infinite value with positive weight makes the sum infinite.
fn guarded_sum(terms: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    terms.into_iter().filter(|(w, _)| *w > 0.0).map(|(w, v)| w * v).sum()
}
