//! Training objective: the per-step ELBO terms, the MI/TC re-weighted
//! total, and the MMD estimator standing in for the intractable total
//! correlation.
//!
//! Loss bookkeeping convention: per-example terms are already multiplied
//! by T (the uniform step-sampling weight), so averaging single-step
//! losses over all t reproduces the full T-term sum. The batch total then
//! applies the coefficients (1 - mi)/T on the latent rate and
//! (mi + tc - 1)/T on the MMD term.

use crate::bfn::{
    self, sample_flow_continuous, sample_flow_discrete, sample_sender_discrete, DiscreteParams,
    Theta,
};
use crate::error::{Error, Result};
use crate::model::{
    kl_latent_prior, latent_kl_on, output_estimate_on, output_estimate_with_gamma, reparam_on,
    DataSpec, LatentGaussian, ParamRelModel,
};
use crate::nn::store::VarMap;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::rng::{self, Rng};
use crate::schedule::AccuracySchedule;

/// Monte Carlo draws per discrete flow-KL term during training.
pub const DEFAULT_TRAIN_N_MC: usize = 16;

/// One observation of either data type.
#[derive(Debug, Clone)]
pub enum Sample {
    Continuous(Tensor),
    Discrete(Vec<usize>),
}

impl Sample {
    pub fn dim(&self) -> usize {
        match self {
            Sample::Continuous(t) => t.len(),
            Sample::Discrete(c) => c.len(),
        }
    }
}

// ---------------------------------------------------------------------------
// Loss weights and breakdown
// ---------------------------------------------------------------------------

/// Objective-level weights: `mi_weight` is the MI coefficient from the
/// re-weighted rate decomposition, `tc_weight` scales the TC surrogate.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub mi_weight: f64,
    pub tc_weight: f64,
    pub steps: usize,
}

pub const DEFAULT_MI_WEIGHT: f64 = 0.95;
pub const DEFAULT_TC_WEIGHT: f64 = 0.1;

impl LossWeights {
    pub fn new(mi_weight: f64, tc_weight: f64, steps: usize) -> Result<Self> {
        let w = LossWeights {
            mi_weight,
            tc_weight,
            steps,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mi_weight) {
            return Err(Error::Config(format!(
                "loss.mi_weight must be in [0,1), got {}",
                self.mi_weight
            )));
        }
        if self.tc_weight <= 0.0 {
            return Err(Error::Config(format!(
                "loss.tc_weight must be positive, got {}",
                self.tc_weight
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("loss weights need steps >= 1".into()));
        }
        if self.mmd_coeff() < 0.0 {
            eprintln!(
                "warning: mi_weight + tc_weight < 1 makes the aggregate-term \
                 coefficient negative, which rewards divergence from the prior"
            );
        }
        Ok(())
    }

    /// Coefficient on the per-sample latent rate: (1 - mi) / T.
    pub fn rate_coeff(&self) -> f64 {
        (1.0 - self.mi_weight) / self.steps as f64
    }

    /// Coefficient on the aggregate MMD term: (mi + tc - 1) / T.
    pub fn mmd_coeff(&self) -> f64 {
        (self.mi_weight + self.tc_weight - 1.0) / self.steps as f64
    }
}

/// Per-term objective values. `latent_rate` and `mmd` are stored
/// unweighted; `total` applies the configured coefficients.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub flow_kl: f64,
    pub latent_rate: f64,
    pub mmd: f64,
    pub distortion_nll: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("flow_kl", self.flow_kl),
            ("latent_rate", self.latent_rate),
            ("mmd", self.mmd),
            ("distortion_nll", self.distortion_nll),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }

    pub fn dump(&self) -> String {
        format!(
            "flow_kl={} latent_rate={} mmd={} distortion_nll={} total={}",
            self.flow_kl, self.latent_rate, self.mmd, self.distortion_nll, self.total
        )
    }
}

// ---------------------------------------------------------------------------
// Kernels and MMD
// ---------------------------------------------------------------------------

/// RBF kernel exp(-||a - b||^2 / (2 bandwidth^2)).
pub fn rbf_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    debug_assert!(bandwidth > 0.0, "bandwidth must be positive");
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdKernel {
    Rbf,
    MedianRbf,
}

/// Median pairwise distance over the pooled sample set, falling back to
/// `base` when every point coincides.
pub fn median_bandwidth(q: &[Vec<f64>], p: &[Vec<f64>], base: f64) -> f64 {
    let pooled: Vec<&Vec<f64>> = q.iter().chain(p.iter()).collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            let sq: f64 = pooled[i]
                .iter()
                .zip(pooled[j].iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            dists.push(sq.sqrt());
        }
    }
    if dists.is_empty() {
        return base;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    if median > 0.0 {
        median
    } else {
        base
    }
}

/// V-statistic MMD^2 between two sample sets under the RBF kernel,
/// diagonal terms included. Zero for identical sets, nonnegative always.
pub fn mmd(q: &[Vec<f64>], p: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if q.len() < 2 || p.len() < 2 {
        return Err(Error::Usage(format!(
            "mmd needs at least two samples per set, got {} and {}",
            q.len(),
            p.len()
        )));
    }
    let n = q.len() as f64;
    let m = p.len() as f64;
    let mut kqq = 0.0;
    for a in q {
        for b in q {
            kqq += rbf_kernel(a, b, bandwidth);
        }
    }
    let mut kpp = 0.0;
    for a in p {
        for b in p {
            kpp += rbf_kernel(a, b, bandwidth);
        }
    }
    let mut kqp = 0.0;
    for a in q {
        for b in p {
            kqp += rbf_kernel(a, b, bandwidth);
        }
    }
    Ok(kpp / (m * m) - 2.0 * kqp / (n * m) + kqq / (n * n))
}

/// Tape-resident MMD between latent draws (gradients flow) and fixed prior
/// draws. Off-diagonal q-q kernels are built on the tape; the q diagonal
/// and the p-p block are constants.
pub fn mmd_on(tape: &mut Tape, q: &[Var], p: &[Vec<f64>], bandwidth: f64) -> Result<Var> {
    if q.len() < 2 || p.len() < 2 {
        return Err(Error::Usage(format!(
            "mmd needs at least two samples per set, got {} and {}",
            q.len(),
            p.len()
        )));
    }
    let n = q.len() as f64;
    let m = p.len() as f64;
    let inv_two_bw2 = 1.0 / (2.0 * bandwidth * bandwidth);

    let kernel_on = |tape: &mut Tape, a: Var, b: Var| -> Var {
        let d = tape.sub(a, b);
        let sq = tape.dot(d, d);
        let e = tape.scale(sq, -inv_two_bw2);
        tape.exp(e)
    };

    let mut qq_terms = Vec::new();
    for i in 0..q.len() {
        for j in (i + 1)..q.len() {
            qq_terms.push(kernel_on(tape, q[i], q[j]));
        }
    }
    let qq_off = tape.add_n(&qq_terms);
    let qq = tape.scale(qq_off, 2.0 / (n * n));

    let mut qp_terms = Vec::new();
    for &qi in q {
        for pj in p {
            let pv = tape.leaf(pj);
            qp_terms.push(kernel_on(tape, qi, pv));
        }
    }
    let qp_sum = tape.add_n(&qp_terms);
    let qp = tape.scale(qp_sum, -2.0 / (n * m));

    let mut kpp = 0.0;
    for a in p {
        for b in p {
            kpp += rbf_kernel(a, b, bandwidth);
        }
    }
    // The q-q diagonal contributes n kernels of exactly one.
    let constant = kpp / (m * m) + 1.0 / n;

    let partial = tape.add(qq, qp);
    Ok(tape.add_scalar(partial, constant))
}

// ---------------------------------------------------------------------------
// Per-example prepared randomness
// ---------------------------------------------------------------------------

/// Everything stochastic about one example's loss, drawn up front so the
/// loss itself is a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub t: usize,
    pub theta: Theta,
    pub z_eps: Vec<f64>,
    /// Sender draws for the discrete MC flow KL; empty for continuous data.
    pub sender_draws: Vec<Tensor>,
    /// Present when the drawn step triggers the t = 0 distortion branch.
    pub t0: Option<PreparedT0>,
}

#[derive(Debug, Clone)]
pub struct PreparedT0 {
    pub theta0: Theta,
    pub z0_eps: Vec<f64>,
}

/// Draw the step index, the flow state, and every noise vector one
/// example needs. The distortion branch fires when t = 1, scaled by T in
/// the loss so the estimator stays unbiased.
pub fn prepare_example(
    x0: &Sample,
    data: &DataSpec,
    latent_dim: usize,
    sched: &AccuracySchedule,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<PreparedExample> {
    use rand::Rng as _;
    let steps = sched.steps;
    let t = rng.random_range(1..=steps);
    let (theta, sender_draws) = match (x0, data) {
        (Sample::Continuous(x), DataSpec::Continuous { .. }) => (
            Theta::Continuous(sample_flow_continuous(x, t, sched, rng)?),
            Vec::new(),
        ),
        (Sample::Discrete(classes), DataSpec::Discrete { classes: k, .. }) => {
            let theta = Theta::Discrete(sample_flow_discrete(classes, t, sched, *k, rng)?);
            let alpha = sched.alpha_at(t)?;
            let draws = (0..n_mc)
                .map(|_| sample_sender_discrete(classes, alpha, *k, rng).y)
                .collect();
            (theta, draws)
        }
        _ => {
            return Err(Error::Usage(
                "sample data type does not match the model data spec".into(),
            ))
        }
    };
    let z_eps = rng::normal_vec(rng, latent_dim);
    let t0 = if t == 1 {
        let theta0 = match (x0, data) {
            (Sample::Continuous(x), _) => {
                Theta::Continuous(sample_flow_continuous(x, 0, sched, rng)?)
            }
            (Sample::Discrete(classes), DataSpec::Discrete { classes: k, .. }) => {
                Theta::Discrete(sample_flow_discrete(classes, 0, sched, *k, rng)?)
            }
            _ => unreachable!("type agreement checked above"),
        };
        Some(PreparedT0 {
            theta0,
            z0_eps: rng::normal_vec(rng, latent_dim),
        })
    } else {
        None
    };
    Ok(PreparedExample {
        t,
        theta,
        z_eps,
        sender_draws,
        t0,
    })
}

// ---------------------------------------------------------------------------
// Tape-resident loss construction
// ---------------------------------------------------------------------------

/// Handles to one example's loss terms plus its latent draw.
pub struct ExampleLossVars {
    pub flow: Var,
    pub rate: Var,
    pub distortion: Var,
    pub z: Var,
}

/// Build one example's T-scaled per-step terms on the tape.
pub fn example_loss_on(
    tape: &mut Tape,
    vars: &VarMap,
    model: &ParamRelModel,
    sched: &AccuracySchedule,
    x0: &Sample,
    prep: &PreparedExample,
) -> Result<ExampleLossVars> {
    let t_weight = model.config.steps as f64;
    let (mean, logvar) = model.encode_on(tape, vars, &prep.theta, prep.t)?;
    let z = reparam_on(tape, mean, logvar, &prep.z_eps);
    let rate_raw = latent_kl_on(tape, mean, logvar);
    let rate = tape.scale(rate_raw, t_weight);

    let out = model.decode_on(tape, vars, &prep.theta, z, prep.t)?;
    let alpha = sched.alpha_at(prep.t)?;

    let flow = match (x0, &prep.theta) {
        (Sample::Continuous(x), Theta::Continuous(p)) => {
            let gamma = sched.gamma_at(prep.t)?;
            let xhat = output_estimate_on(tape, &p.mu, gamma, out);
            let xv = tape.leaf_tensor(x);
            let diff = tape.sub(xv, xhat);
            let sq = tape.dot(diff, diff);
            tape.scale(sq, t_weight * alpha / 2.0)
        }
        (Sample::Discrete(classes), Theta::Discrete(_)) => {
            let k = match model.config.data {
                DataSpec::Discrete { classes, .. } => classes,
                _ => unreachable!("theta/model agreement enforced by decode_on"),
            };
            let d = classes.len();
            let kl_raw = discrete_flow_kl_on(tape, out, classes, &prep.sender_draws, alpha, d, k);
            tape.scale(kl_raw, t_weight)
        }
        _ => {
            return Err(Error::Usage(
                "sample data type does not match the flow state".into(),
            ))
        }
    };

    let distortion = match &prep.t0 {
        None => tape.leaf_scalar(0.0),
        Some(t0) => {
            let (mean0, logvar0) = model.encode_on(tape, vars, &t0.theta0, 0)?;
            let z0 = reparam_on(tape, mean0, logvar0, &t0.z0_eps);
            let out0 = model.decode_on(tape, vars, &t0.theta0, z0, 0)?;
            let raw = match (x0, &t0.theta0) {
                (Sample::Continuous(x), Theta::Continuous(p0)) => {
                    let gamma0 = sched.gamma_at(0)?;
                    let xhat0 = output_estimate_on(tape, &p0.mu, gamma0, out0);
                    let xv = tape.leaf_tensor(x);
                    let diff = tape.sub(xv, xhat0);
                    let sq = tape.dot(diff, diff);
                    tape.scale(sq, 1.0 / x.len() as f64)
                }
                (Sample::Discrete(classes), Theta::Discrete(_)) => {
                    let k = match model.config.data {
                        DataSpec::Discrete { classes, .. } => classes,
                        _ => unreachable!(),
                    };
                    let lsm = tape.log_softmax_rows(out0, classes.len(), k);
                    let picked = tape.select_per_row(lsm, classes, classes.len(), k);
                    let total = tape.sum(picked);
                    tape.scale(total, -1.0)
                }
                _ => return Err(Error::Usage("distortion data type mismatch".into())),
            };
            tape.scale(raw, t_weight)
        }
    };

    Ok(ExampleLossVars {
        flow,
        rate,
        distortion,
        z,
    })
}

/// MC estimate of KL(sender || receiver) on the tape. The sender draws and
/// their log densities are constants; gradients reach the logits through
/// log-softmax and the per-dimension log-sum-exp over mixture components.
fn discrete_flow_kl_on(
    tape: &mut Tape,
    logits: Var,
    x0_class: &[usize],
    sender_draws: &[Tensor],
    alpha: f64,
    dim: usize,
    classes: usize,
) -> Var {
    let log_probs = tape.log_softmax_rows(logits, dim, classes);
    let mut terms = Vec::with_capacity(sender_draws.len());
    for y in sender_draws {
        let comp = component_log_densities(y, alpha, dim, classes);
        let cv = tape.leaf(&comp);
        let scored = tape.add(log_probs, cv);
        let lse = tape.log_sum_exp_rows(scored, dim, classes);
        let log_r = tape.sum(lse);
        let log_s = bfn::sender_log_density_discrete(y, x0_class, alpha, classes);
        let neg_r = tape.scale(log_r, -1.0);
        terms.push(tape.add_scalar(neg_r, log_s));
    }
    let total = tape.add_n(&terms);
    tape.scale(total, 1.0 / sender_draws.len() as f64)
}

/// comp[d][k] = log N(y_d; alpha (K e_k - 1), alpha K I) for each mixture
/// component k, flattened row-major.
fn component_log_densities(y: &Tensor, alpha: f64, dim: usize, classes: usize) -> Vec<f64> {
    let k = classes;
    let var = alpha * k as f64;
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    let mut out = vec![0.0; dim * k];
    for d in 0..dim {
        for cls in 0..k {
            let mut lp = 0.0;
            for j in 0..k {
                let mean = alpha * (if j == cls { k as f64 - 1.0 } else { -1.0 });
                let diff = y.data()[d * k + j] - mean;
                lp += log_norm - 0.5 * diff * diff / var;
            }
            out[d * k + cls] = lp;
        }
    }
    out
}

/// Handles to the batch-level loss terms.
pub struct BatchLossVars {
    pub flow: Var,
    pub rate: Var,
    pub mmd: Var,
    pub distortion: Var,
    pub total: Var,
}

/// Assemble the full objective for a prepared batch: batch means of the
/// per-example terms, the aggregate MMD against prior draws, and the
/// weighted total. With the median kernel the bandwidth is resolved from
/// the already-computed latent values and enters the graph as a constant.
pub fn batch_loss_on(
    tape: &mut Tape,
    vars: &VarMap,
    model: &ParamRelModel,
    sched: &AccuracySchedule,
    weights: &LossWeights,
    batch: &[(Sample, PreparedExample)],
    prior_batch: &[Vec<f64>],
    kernel: MmdKernel,
    base_bandwidth: f64,
) -> Result<BatchLossVars> {
    if batch.len() < 2 {
        return Err(Error::Usage(format!(
            "batch size must be >= 2 for the MMD term, got {}",
            batch.len()
        )));
    }
    let mut flows = Vec::new();
    let mut rates = Vec::new();
    let mut dists = Vec::new();
    let mut zs = Vec::new();
    for (x0, prep) in batch {
        let ex = example_loss_on(tape, vars, model, sched, x0, prep)?;
        flows.push(ex.flow);
        rates.push(ex.rate);
        dists.push(ex.distortion);
        zs.push(ex.z);
    }
    let bandwidth = match kernel {
        MmdKernel::Rbf => base_bandwidth,
        MmdKernel::MedianRbf => {
            let z_vals: Vec<Vec<f64>> = zs.iter().map(|&z| tape.value(z).to_vec()).collect();
            median_bandwidth(&z_vals, prior_batch, base_bandwidth)
        }
    };
    let inv_b = 1.0 / batch.len() as f64;
    let flow_sum = tape.add_n(&flows);
    let flow = tape.scale(flow_sum, inv_b);
    let rate_sum = tape.add_n(&rates);
    let rate = tape.scale(rate_sum, inv_b);
    let dist_sum = tape.add_n(&dists);
    let distortion = tape.scale(dist_sum, inv_b);
    let mmd_v = mmd_on(tape, &zs, prior_batch, bandwidth)?;

    let rate_w = tape.scale(rate, weights.rate_coeff());
    let mmd_w = tape.scale(mmd_v, weights.mmd_coeff());
    let total = tape.add_n(&[flow, rate_w, mmd_w, distortion]);
    Ok(BatchLossVars {
        flow,
        rate,
        mmd: mmd_v,
        distortion,
        total,
    })
}

// ---------------------------------------------------------------------------
// Plain (non-tape) loss ops
// ---------------------------------------------------------------------------

/// Model outputs needed to score one step without a tape.
pub enum StepOutputs<'a> {
    Continuous {
        eps_hat: &'a Tensor,
        xhat0: Option<&'a Tensor>,
    },
    Discrete {
        probs: &'a DiscreteParams,
        probs0: Option<&'a DiscreteParams>,
        n_mc: usize,
    },
}

/// Unweighted per-step terms, T-scaled as described in the module docs.
/// The distortion slot is populated only when t = 1.
pub fn elbo_step_loss(
    x0: &Sample,
    t: usize,
    theta: &Theta,
    lg: &LatentGaussian,
    outputs: &StepOutputs,
    sched: &AccuracySchedule,
    rng: &mut Rng,
) -> Result<LossBreakdown> {
    if t == 0 || t > sched.steps {
        return Err(Error::Usage(format!(
            "step {t} out of range 1..={}",
            sched.steps
        )));
    }
    let t_weight = sched.steps as f64;
    let alpha = sched.alpha_at(t)?;

    let flow_kl = match (x0, theta, outputs) {
        (Sample::Continuous(x), Theta::Continuous(p), StepOutputs::Continuous { eps_hat, .. }) => {
            let gamma = sched.gamma_at(t)?;
            let xhat = output_estimate_with_gamma(&p.mu, gamma, eps_hat);
            t_weight * bfn::kl_sender_receiver_continuous(x, &xhat, alpha)
        }
        (
            Sample::Discrete(classes),
            Theta::Discrete(_),
            StepOutputs::Discrete { probs, n_mc, .. },
        ) => {
            let k = probs.classes();
            t_weight
                * bfn::kl_sender_receiver_discrete_mc_raw(classes, probs, alpha, k, *n_mc, rng)?
        }
        _ => return Err(Error::Usage("step loss data type mismatch".into())),
    };

    let latent_rate = t_weight * kl_latent_prior(lg);

    let distortion_nll = if t == 1 {
        match (x0, outputs) {
            (Sample::Continuous(x), StepOutputs::Continuous { xhat0: Some(xh), .. }) => {
                let mse: f64 = x
                    .data()
                    .iter()
                    .zip(xh.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / x.len() as f64;
                t_weight * mse
            }
            (Sample::Discrete(classes), StepOutputs::Discrete { probs0: Some(p0), .. }) => {
                let ce: f64 = classes
                    .iter()
                    .enumerate()
                    .map(|(d, &c)| -p0.row(d)[c].max(1e-300).ln())
                    .sum();
                t_weight * ce
            }
            _ => {
                return Err(Error::Usage(
                    "t = 1 requires the t = 0 decode outputs for the distortion term".into(),
                ))
            }
        }
    } else {
        0.0
    };

    let total = flow_kl + latent_rate + distortion_nll;
    Ok(LossBreakdown {
        flow_kl,
        latent_rate,
        mmd: 0.0,
        distortion_nll,
        total,
    })
}

// ---------------------------------------------------------------------------
// Full-objective gradient verification
// ---------------------------------------------------------------------------

/// Finite-difference check of the complete batch objective on a tiny
/// fixed model (D = 4, L = 2, T = 2, batch 4) for one data type. The step
/// size is scanned over a small ladder and the best agreement kept: each
/// step gives an independent finite-difference estimate, and conditioning
/// (cancellation at small steps, curvature at large ones) varies with it.
pub fn full_objective_grad_check(kind: crate::schedule::ScheduleKind, seed: u64) -> Result<f64> {
    use crate::model::ModelConfig;
    use crate::nn::gradcheck::{grad_check, LossAndGrads};
    use crate::nn::store::ParamStore;
    use crate::schedule::ScheduleKind;
    use rand::Rng as _;

    let steps = 2;
    let (sched, data_spec) = match kind {
        ScheduleKind::Continuous => (
            AccuracySchedule::continuous(steps, 0.5)?,
            DataSpec::Continuous { dim: 4 },
        ),
        ScheduleKind::Discrete => (
            AccuracySchedule::discrete(steps, 4.0)?,
            DataSpec::Discrete { dim: 4, classes: 2 },
        ),
    };
    let config = ModelConfig {
        data: data_spec,
        latent_dim: 2,
        hidden_width: 8,
        hidden_blocks: 1,
        time_dim: 4,
        groups: 4,
        steps,
    };
    let mut init_rng = rng::derive(seed, 0x6C);
    let mut model = ParamRelModel::build(config, &mut init_rng)?;
    let names: Vec<String> = model.store.names().cloned().collect();
    for name in &names {
        for v in model.store.get_mut(name).unwrap().data_mut() {
            *v = 0.3 * rng::standard_normal(&mut init_rng);
        }
    }
    let weights = LossWeights::new(0.95, 0.1, steps)?;

    let mut data_rng = rng::derive(seed, 0xDA);
    let batch: Vec<Sample> = (0..4)
        .map(|_| match kind {
            ScheduleKind::Continuous => {
                Sample::Continuous(Tensor::from_vec(rng::normal_vec(&mut data_rng, 4)))
            }
            ScheduleKind::Discrete => {
                Sample::Discrete((0..4).map(|_| data_rng.random_range(0..2usize)).collect())
            }
        })
        .collect();
    let prepared: Vec<(Sample, PreparedExample)> = batch
        .iter()
        .map(|x0| {
            let prep = prepare_example(x0, &model.config.data, 2, &sched, 4, &mut data_rng)?;
            Ok((x0.clone(), prep))
        })
        .collect::<Result<_>>()?;
    let prior_batch: Vec<Vec<f64>> = (0..4).map(|_| rng::normal_vec(&mut data_rng, 2)).collect();

    let cfg = model.config.clone();
    let sched_c = sched.clone();
    let f = move |s: &ParamStore| -> Result<LossAndGrads> {
        let probe = ParamRelModel::from_store(cfg.clone(), s.clone())?;
        let mut tape = Tape::new();
        let vars = VarMap::stage(&mut tape, s);
        let loss = batch_loss_on(
            &mut tape,
            &vars,
            &probe,
            &sched_c,
            &weights,
            &prepared,
            &prior_batch,
            MmdKernel::Rbf,
            2.0f64.sqrt(),
        )?;
        let grads = tape.backward(loss.total)?;
        Ok((tape.value_scalar(loss.total), vars.extract_grads(&grads, s)))
    };

    let mut best = f64::INFINITY;
    for eps in [1e-3, 2e-3, 5e-3] {
        best = best.min(grad_check(&f, &model.store, eps)?);
    }
    Ok(best)
}

/// Batch objective from per-example breakdowns plus aggregate-posterior and
/// prior draws: total = flow + ((1-mi)/T) rate + ((mi+tc-1)/T) MMD + distortion.
pub fn paramrel_plus_loss(
    batch_terms: &[LossBreakdown],
    z_batch: &[Vec<f64>],
    prior_batch: &[Vec<f64>],
    weights: &LossWeights,
    bandwidth: f64,
) -> Result<LossBreakdown> {
    if batch_terms.len() < 2 {
        return Err(Error::Usage(format!(
            "batch size must be >= 2 for the MMD term, got {}",
            batch_terms.len()
        )));
    }
    let b = batch_terms.len() as f64;
    let flow_kl = batch_terms.iter().map(|t| t.flow_kl).sum::<f64>() / b;
    let latent_rate = batch_terms.iter().map(|t| t.latent_rate).sum::<f64>() / b;
    let distortion_nll = batch_terms.iter().map(|t| t.distortion_nll).sum::<f64>() / b;
    let mmd_v = mmd(z_batch, prior_batch, bandwidth)?;
    let total = flow_kl
        + weights.rate_coeff() * latent_rate
        + weights.mmd_coeff() * mmd_v
        + distortion_nll;
    Ok(LossBreakdown {
        flow_kl,
        latent_rate,
        mmd: mmd_v,
        distortion_nll,
        total,
    })
}
