//! BFN distribution machinery: input-distribution parameters, the Bayesian
//! update and its inverse, sender sampling, the flow distribution over
//! parameters, and sender/receiver KL terms, for continuous and discrete
//! data.
//!
//! Discrete-side arithmetic runs in log space throughout: accumulated
//! accuracies can exceed 100, which overflows direct exponentials.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::rng::{self, Rng};
use crate::schedule::{AccuracySchedule, ScheduleKind};

/// Smallest probability whose log is still finite.
const PROB_FLOOR: f64 = 1e-300;

/// Gaussian input-distribution parameters for continuous data. The
/// precision is one scalar shared across dimensions because every update
/// applies a uniform accuracy.
#[derive(Debug, Clone)]
pub struct ContinuousParams {
    pub mu: Tensor,
    pub rho: f64,
}

impl ContinuousParams {
    /// Zero-information state: standard normal belief.
    pub fn prior(dim: usize) -> Self {
        ContinuousParams {
            mu: Tensor::zeros(&[dim]),
            rho: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn validate(&self) -> Result<()> {
        if self.rho <= 0.0 || !self.rho.is_finite() || !self.mu.is_all_finite() {
            return Err(Error::Data(format!(
                "continuous params invalid: rho {}, mu finite {}",
                self.rho,
                self.mu.is_all_finite()
            )));
        }
        Ok(())
    }
}

/// Categorical input-distribution parameters for discrete data: one
/// K-class simplex per dimension, stored row-major D x K.
#[derive(Debug, Clone)]
pub struct DiscreteParams {
    theta: Tensor,
    classes: usize,
}

impl DiscreteParams {
    /// Zero-information state: uniform 1/K in every row.
    pub fn uniform_prior(dim: usize, classes: usize) -> Self {
        DiscreteParams {
            theta: Tensor::full(&[dim, classes], 1.0 / classes as f64),
            classes,
        }
    }

    pub fn new(theta: Tensor, classes: usize) -> Result<Self> {
        if theta.shape().len() != 2 || theta.shape()[1] != classes || classes < 2 {
            return Err(Error::Dim(format!(
                "discrete params need shape [D, {classes}], got {:?}",
                theta.shape()
            )));
        }
        let p = DiscreteParams { theta, classes };
        p.validate()?;
        Ok(p)
    }

    /// Row-wise softmax of logits, computed stably.
    pub fn from_logits(logits: &Tensor, classes: usize) -> Result<Self> {
        if logits.len() % classes != 0 {
            return Err(Error::Dim(format!(
                "logit count {} not divisible by K={classes}",
                logits.len()
            )));
        }
        let dim = logits.len() / classes;
        let mut data = vec![0.0; logits.len()];
        for d in 0..dim {
            let row = &logits.data()[d * classes..(d + 1) * classes];
            softmax_into(row, &mut data[d * classes..(d + 1) * classes]);
        }
        Ok(DiscreteParams {
            theta: Tensor::new(vec![dim, classes], data).expect("shape"),
            classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn theta(&self) -> &Tensor {
        &self.theta
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.theta.data()[d * self.classes..(d + 1) * self.classes]
    }

    fn validate(&self) -> Result<()> {
        for d in 0..self.dim() {
            let row = self.row(d);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Data(format!(
                    "row {d} is not a simplex (sum {sum})"
                )));
            }
        }
        Ok(())
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// One draw from the sender channel together with the accuracy it used.
#[derive(Debug, Clone)]
pub struct SenderSample {
    pub y: Tensor,
    pub alpha: f64,
}

/// Input-distribution parameters for either data type.
#[derive(Debug, Clone)]
pub enum Theta {
    Continuous(ContinuousParams),
    Discrete(DiscreteParams),
}

impl Theta {
    pub fn kind(&self) -> ScheduleKind {
        match self {
            Theta::Continuous(_) => ScheduleKind::Continuous,
            Theta::Discrete(_) => ScheduleKind::Discrete,
        }
    }
}

// ---------------------------------------------------------------------------
// Bayesian update h and its inverse
// ---------------------------------------------------------------------------

/// Precision-weighted posterior update: mu' = (alpha y + rho mu)/(alpha + rho),
/// rho' = rho + alpha.
pub fn bayes_update_continuous(
    p: &ContinuousParams,
    y: &Tensor,
    alpha: f64,
) -> Result<ContinuousParams> {
    p.validate()?;
    if !y.is_all_finite() {
        return Err(Error::Data("sender sample contains non-finite values".into()));
    }
    if y.len() != p.dim() {
        return Err(Error::Dim(format!(
            "sender sample has {} values, params have {}",
            y.len(),
            p.dim()
        )));
    }
    if alpha < 0.0 {
        return Err(Error::Usage(format!("alpha must be >= 0, got {alpha}")));
    }
    let rho_new = p.rho + alpha;
    let mu = Tensor::from_vec(
        p.mu.data()
            .iter()
            .zip(y.data())
            .map(|(&m, &yv)| (alpha * yv + p.rho * m) / rho_new)
            .collect(),
    );
    Ok(ContinuousParams { mu, rho: rho_new })
}

/// Algebraic inverse of the continuous update. Fails when the target
/// precision would not stay positive.
pub fn inverse_update_continuous(
    p_next: &ContinuousParams,
    y: &Tensor,
    alpha: f64,
) -> Result<ContinuousParams> {
    let rho_prev = p_next.rho - alpha;
    if rho_prev <= 0.0 {
        return Err(Error::SingularInverse {
            rho: p_next.rho,
            alpha,
        });
    }
    let mu = Tensor::from_vec(
        p_next
            .mu
            .data()
            .iter()
            .zip(y.data())
            .map(|(&m, &yv)| (p_next.rho * m - alpha * yv) / rho_prev)
            .collect(),
    );
    Ok(ContinuousParams { mu, rho: rho_prev })
}

/// Multiplicative update theta' = e^y * theta, renormalized per row. The
/// accuracy is already embedded in y's scale, so it does not appear here.
pub fn bayes_update_discrete(p: &DiscreteParams, y: &Tensor) -> Result<DiscreteParams> {
    if !y.is_all_finite() {
        return Err(Error::Data("sender sample contains non-finite values".into()));
    }
    if y.len() != p.dim() * p.classes {
        return Err(Error::Dim(format!(
            "sender sample has {} values, expected {}",
            y.len(),
            p.dim() * p.classes
        )));
    }
    let k = p.classes;
    let mut data = vec![0.0; p.dim() * k];
    for d in 0..p.dim() {
        let row = p.row(d);
        let logits: Vec<f64> = row
            .iter()
            .zip(&y.data()[d * k..(d + 1) * k])
            .map(|(&th, &yv)| th.max(PROB_FLOOR).ln() + yv)
            .collect();
        softmax_into(&logits, &mut data[d * k..(d + 1) * k]);
    }
    DiscreteParams::new(Tensor::new(vec![p.dim(), k], data)?, k)
}

/// Inverse of the discrete update: theta_prev proportional to theta_next * e^-y.
pub fn inverse_update_discrete(p_next: &DiscreteParams, y: &Tensor) -> Result<DiscreteParams> {
    if !y.is_all_finite() {
        return Err(Error::Data("sender sample contains non-finite values".into()));
    }
    let k = p_next.classes;
    let mut data = vec![0.0; p_next.dim() * k];
    for d in 0..p_next.dim() {
        let row = p_next.row(d);
        let logits: Vec<f64> = row
            .iter()
            .zip(&y.data()[d * k..(d + 1) * k])
            .map(|(&th, &yv)| th.max(PROB_FLOOR).ln() - yv)
            .collect();
        softmax_into(&logits, &mut data[d * k..(d + 1) * k]);
    }
    DiscreteParams::new(Tensor::new(vec![p_next.dim(), k], data)?, k)
}

// ---------------------------------------------------------------------------
// Sender sampling
// ---------------------------------------------------------------------------

/// y = x0 + eps / sqrt(alpha).
pub fn sample_sender_continuous(x0: &Tensor, alpha: f64, rng: &mut Rng) -> SenderSample {
    assert!(alpha > 0.0, "sender accuracy must be positive");
    let sd = 1.0 / alpha.sqrt();
    let y = Tensor::from_vec(
        x0.data()
            .iter()
            .map(|&x| x + sd * rng::standard_normal(rng))
            .collect(),
    );
    SenderSample { y, alpha }
}

/// y = alpha (K e_x - 1) + sqrt(alpha K) eps in logit space, shape D x K.
pub fn sample_sender_discrete(
    x0_class: &[usize],
    alpha: f64,
    classes: usize,
    rng: &mut Rng,
) -> SenderSample {
    let k = classes;
    let sd = (alpha * k as f64).sqrt();
    let mut data = vec![0.0; x0_class.len() * k];
    for (d, &cls) in x0_class.iter().enumerate() {
        debug_assert!(cls < k, "class index out of range");
        for j in 0..k {
            let mean = alpha * (if j == cls { k as f64 - 1.0 } else { -1.0 });
            let noise = if sd > 0.0 {
                sd * rng::standard_normal(rng)
            } else {
                0.0
            };
            data[d * k + j] = mean + noise;
        }
    }
    SenderSample {
        y: Tensor::new(vec![x0_class.len(), k], data).expect("shape"),
        alpha,
    }
}

// ---------------------------------------------------------------------------
// Bayesian flow distribution p_F
// ---------------------------------------------------------------------------

/// One-shot draw of the continuous input parameters at step t:
/// mu ~ N(gamma x0, gamma (1 - gamma) I), rho = 1 + beta(t).
pub fn sample_flow_continuous(
    x0: &Tensor,
    t: usize,
    sched: &AccuracySchedule,
    rng: &mut Rng,
) -> Result<ContinuousParams> {
    if sched.kind != ScheduleKind::Continuous {
        return Err(Error::Usage("flow sampler kind mismatch".into()));
    }
    let gamma = sched.gamma_at(t)?;
    let beta = sched.beta_at(t)?;
    let var = gamma * (1.0 - gamma);
    let sd = var.max(0.0).sqrt();
    let mu = Tensor::from_vec(
        x0.data()
            .iter()
            .map(|&x| {
                let noise = if sd > 0.0 {
                    sd * rng::standard_normal(rng)
                } else {
                    0.0
                };
                gamma * x + noise
            })
            .collect(),
    );
    Ok(ContinuousParams {
        mu,
        rho: 1.0 + beta,
    })
}

/// One-shot draw of the discrete input parameters at step t:
/// theta = softmax(y), y ~ N(beta (K e_x - 1), beta K I).
pub fn sample_flow_discrete(
    x0_class: &[usize],
    t: usize,
    sched: &AccuracySchedule,
    classes: usize,
    rng: &mut Rng,
) -> Result<DiscreteParams> {
    if sched.kind != ScheduleKind::Discrete {
        return Err(Error::Usage("flow sampler kind mismatch".into()));
    }
    let beta = sched.beta_at(t)?;
    let draw = sample_sender_discrete(x0_class, beta, classes, rng);
    DiscreteParams::from_logits(&draw.y, classes)
}

// ---------------------------------------------------------------------------
// Sender/receiver KL terms
// ---------------------------------------------------------------------------

/// Closed form KL(N(x0, 1/alpha I) || N(xhat, 1/alpha I)) = alpha/2 ||x0 - xhat||^2.
pub fn kl_sender_receiver_continuous(x0: &Tensor, xhat: &Tensor, alpha: f64) -> f64 {
    debug_assert_eq!(x0.len(), xhat.len());
    let sq: f64 = x0
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    0.5 * alpha * sq
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

/// Log density of the discrete-data sender at a logit-space point y
/// (shape D x K), given the true classes.
pub fn sender_log_density_discrete(
    y: &Tensor,
    x0_class: &[usize],
    alpha: f64,
    classes: usize,
) -> f64 {
    let k = classes;
    let var = alpha * k as f64;
    let mut total = 0.0;
    for (d, &cls) in x0_class.iter().enumerate() {
        for j in 0..k {
            let mean = alpha * (if j == cls { k as f64 - 1.0 } else { -1.0 });
            total += log_normal_pdf(y.data()[d * k + j], mean, var);
        }
    }
    total
}

/// Log density of the K-component Gaussian-mixture receiver at y,
/// computed with log-sum-exp per dimension.
pub fn receiver_log_density_discrete(
    y: &Tensor,
    probs: &DiscreteParams,
    alpha: f64,
    classes: usize,
) -> f64 {
    let k = classes;
    let var = alpha * k as f64;
    let mut total = 0.0;
    for d in 0..probs.dim() {
        let row = probs.row(d);
        let mut terms = Vec::with_capacity(k);
        for (cls, &p) in row.iter().enumerate() {
            let mut lp = p.max(PROB_FLOOR).ln();
            for j in 0..k {
                let mean = alpha * (if j == cls { k as f64 - 1.0 } else { -1.0 });
                lp += log_normal_pdf(y.data()[d * k + j], mean, var);
            }
            terms.push(lp);
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    }
    total
}

/// Monte Carlo estimate of KL(sender || receiver) for discrete data,
/// sampling y from the sender (importance weight one). Raw signed value;
/// the public wrapper clamps at zero for reporting.
pub fn kl_sender_receiver_discrete_mc_raw(
    x0_class: &[usize],
    probs: &DiscreteParams,
    alpha: f64,
    classes: usize,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::Usage("n_mc must be >= 1".into()));
    }
    probs.validate()?;
    let mut acc = 0.0;
    for _ in 0..n_mc {
        let draw = sample_sender_discrete(x0_class, alpha, classes, rng);
        let ls = sender_log_density_discrete(&draw.y, x0_class, alpha, classes);
        let lr = receiver_log_density_discrete(&draw.y, probs, alpha, classes);
        acc += ls - lr;
    }
    Ok(acc / n_mc as f64)
}

/// Reporting form of the MC mixture KL, clamped at zero from below.
pub fn kl_sender_receiver_discrete_mc(
    x0_class: &[usize],
    probs: &DiscreteParams,
    alpha: f64,
    classes: usize,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<f64> {
    Ok(kl_sender_receiver_discrete_mc_raw(x0_class, probs, alpha, classes, n_mc, rng)?.max(0.0))
}
