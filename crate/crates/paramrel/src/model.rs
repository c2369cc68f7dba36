//! The self-encoder q(z_t | theta_t, t), the standard-normal latent prior,
//! and the decoder psi(theta_t, z_t) that parameterizes the output
//! distribution.
//!
//! Both networks read input-distribution parameters, never raw
//! observations. The decoder trunk applies two nested adaptive group
//! normalizations per block: the inner conditions on z, the outer on the
//! time embedding.

use crate::bfn::{DiscreteParams, Theta};
use crate::error::{Error, Result};
use crate::nn::layers::{ada_gn, time_embed, Linear, GROUP_NORM_EPS};
use crate::nn::store::{ParamStore, VarMap};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::rng::{self, Rng};
use crate::schedule::AccuracySchedule;

/// Clamp bound for encoder log-variances.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Below this flow coefficient the continuous output estimate is pinned to
/// zero; mu / gamma is numerically meaningless in the no-information regime.
pub const GAMMA_MIN: f64 = 1e-4;

/// Encoder output: a diagonal Gaussian over the step latent.
#[derive(Debug, Clone)]
pub struct LatentGaussian {
    pub mean: Tensor,
    pub logvar: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSpec {
    Continuous { dim: usize },
    Discrete { dim: usize, classes: usize },
}

impl DataSpec {
    pub fn dim(&self) -> usize {
        match self {
            DataSpec::Continuous { dim } => *dim,
            DataSpec::Discrete { dim, .. } => *dim,
        }
    }

    /// Width of the flattened theta feature vector fed to the networks.
    pub fn feature_dim(&self) -> usize {
        match self {
            DataSpec::Continuous { dim } => *dim,
            DataSpec::Discrete { dim, classes } => dim * classes,
        }
    }

    /// Width of the decoder head output.
    pub fn output_dim(&self) -> usize {
        self.feature_dim()
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, DataSpec::Continuous { .. })
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub data: DataSpec,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub hidden_blocks: usize,
    pub time_dim: usize,
    pub groups: usize,
    pub steps: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("model.latent_dim must be >= 1".into()));
        }
        if self.latent_dim * 2 > self.data.dim() {
            return Err(Error::Config(format!(
                "model.latent_dim: {} exceeds D/2 = {} (latents must stay much smaller than the data)",
                self.latent_dim,
                self.data.dim() / 2
            )));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "model.time_dim must be positive and even, got {}",
                self.time_dim
            )));
        }
        if self.hidden_width == 0 || self.hidden_blocks == 0 {
            return Err(Error::Config("model hidden sizes must be >= 1".into()));
        }
        if self.groups == 0 {
            return Err(Error::Config("model.groups must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("model.steps must be >= 1".into()));
        }
        if let DataSpec::Discrete { classes, .. } = self.data {
            if classes < 2 {
                return Err(Error::Config("discrete data needs K >= 2 classes".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct EncoderNet {
    l0: Linear,
    l1: Linear,
    head: Linear,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    scale_z: Linear,
    shift_z: Linear,
    scale_t: Linear,
    shift_t: Linear,
    dense: Linear,
}

#[derive(Debug, Clone)]
struct DecoderNet {
    input: Linear,
    blocks: Vec<DecoderBlock>,
    head: Linear,
}

/// Networks plus their parameter store.
#[derive(Debug, Clone)]
pub struct ParamRelModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: EncoderNet,
    decoder: DecoderNet,
}

fn build_topology(config: &ModelConfig) -> (EncoderNet, DecoderNet) {
    let feat = config.data.feature_dim();
    let h = config.hidden_width;
    let l = config.latent_dim;
    let encoder = EncoderNet {
        l0: Linear::new("enc.l0", feat + config.time_dim, h),
        l1: Linear::new("enc.l1", h, h),
        head: Linear::new("enc.head", h, 2 * l),
    };
    let blocks = (0..config.hidden_blocks)
        .map(|i| DecoderBlock {
            scale_z: Linear::new(&format!("dec.b{i}.sz"), l, h),
            shift_z: Linear::new(&format!("dec.b{i}.bz"), l, h),
            scale_t: Linear::new(&format!("dec.b{i}.st"), config.time_dim, h),
            shift_t: Linear::new(&format!("dec.b{i}.bt"), config.time_dim, h),
            dense: Linear::new(&format!("dec.b{i}.dense"), h, h),
        })
        .collect();
    let decoder = DecoderNet {
        input: Linear::new("dec.input", feat, h),
        blocks,
        head: Linear::new("dec.head", h, config.data.output_dim()),
    };
    (encoder, decoder)
}

impl ParamRelModel {
    /// Fresh model: Kaiming-uniform trunks, zero-initialized heads and
    /// conditioning nets so the decoder starts as identity conditioning.
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (encoder, decoder) = build_topology(&config);
        let mut store = ParamStore::new();
        encoder.l0.init(&mut store, rng)?;
        encoder.l1.init(&mut store, rng)?;
        encoder.head.init_zero(&mut store)?;
        decoder.input.init(&mut store, rng)?;
        for b in &decoder.blocks {
            b.scale_z.init_zero(&mut store)?;
            b.shift_z.init_zero(&mut store)?;
            b.scale_t.init_zero(&mut store)?;
            b.shift_t.init_zero(&mut store)?;
            b.dense.init(&mut store, rng)?;
        }
        decoder.head.init_zero(&mut store)?;
        Ok(ParamRelModel {
            config,
            store,
            encoder,
            decoder,
        })
    }

    /// Attach an existing parameter store (checkpoint restore). Every
    /// layer's tensors must be present with matching shapes.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let (encoder, decoder) = build_topology(&config);
        let model = ParamRelModel {
            config,
            store,
            encoder,
            decoder,
        };
        model.check_store()?;
        Ok(model)
    }

    fn check_store(&self) -> Result<()> {
        let mut expected = Vec::new();
        let enc = &self.encoder;
        let dec = &self.decoder;
        for lin in [&enc.l0, &enc.l1, &enc.head, &dec.input, &dec.head] {
            expected.push((format!("{}.w", lin.name), vec![lin.out_dim, lin.in_dim]));
            expected.push((format!("{}.b", lin.name), vec![lin.out_dim]));
        }
        for b in &dec.blocks {
            for lin in [&b.scale_z, &b.shift_z, &b.scale_t, &b.shift_t, &b.dense] {
                expected.push((format!("{}.w", lin.name), vec![lin.out_dim, lin.in_dim]));
                expected.push((format!("{}.b", lin.name), vec![lin.out_dim]));
            }
        }
        for (name, shape) in expected {
            match self.store.get(&name) {
                None => {
                    return Err(Error::Config(format!(
                        "checkpoint missing parameter `{name}`"
                    )))
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Config(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        t.shape(),
                        shape
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn time_fraction(&self, t: usize) -> f64 {
        t as f64 / self.config.steps as f64
    }

    /// Flattened network features for a theta state: the mean vector for
    /// continuous data (precision is a function of t, which enters via the
    /// time embedding), the full simplex for discrete data.
    pub fn theta_features(&self, theta: &Theta) -> Result<Tensor> {
        match (theta, &self.config.data) {
            (Theta::Continuous(p), DataSpec::Continuous { dim }) => {
                if p.dim() != *dim {
                    return Err(Error::Config(format!(
                        "theta has {} dims, model expects {dim}",
                        p.dim()
                    )));
                }
                Ok(p.mu.clone())
            }
            (Theta::Discrete(p), DataSpec::Discrete { dim, classes }) => {
                if p.dim() != *dim || p.classes() != *classes {
                    return Err(Error::Config(format!(
                        "theta is {}x{}, model expects {dim}x{classes}",
                        p.dim(),
                        p.classes()
                    )));
                }
                Ok(Tensor::from_vec(p.theta().data().to_vec()))
            }
            _ => Err(Error::Usage(
                "theta data type does not match the model".into(),
            )),
        }
    }

    /// Tape-resident encoder pass; returns (mean, logvar) handles.
    pub fn encode_on(
        &self,
        tape: &mut Tape,
        vars: &VarMap,
        theta: &Theta,
        t: usize,
    ) -> Result<(Var, Var)> {
        if t > self.config.steps {
            return Err(Error::Usage(format!(
                "step {t} out of range 0..={}",
                self.config.steps
            )));
        }
        let feat = self.theta_features(theta)?;
        let temb = time_embed(self.time_fraction(t), self.config.time_dim)?;
        let fv = tape.leaf_tensor(&feat);
        let tv = tape.leaf_tensor(&temb);
        let x = tape.concat(&[fv, tv]);
        let h = self.encoder.l0.forward(tape, vars, x);
        let h = tape.silu(h);
        let h = self.encoder.l1.forward(tape, vars, h);
        let h = tape.silu(h);
        let out = self.encoder.head.forward(tape, vars, h);
        let l = self.config.latent_dim;
        let mean = tape.slice(out, 0, l);
        let logvar_raw = tape.slice(out, l, l);
        let logvar = tape.clamp(logvar_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        Ok((mean, logvar))
    }

    /// q(z_t | theta_t, t) as plain tensors.
    pub fn encode(&self, theta: &Theta, t: usize) -> Result<LatentGaussian> {
        let mut tape = Tape::new();
        let vars = VarMap::stage(&mut tape, &self.store);
        let (mean, logvar) = self.encode_on(&mut tape, &vars, theta, t)?;
        Ok(LatentGaussian {
            mean: Tensor::from_vec(tape.value(mean).to_vec()),
            logvar: Tensor::from_vec(tape.value(logvar).to_vec()),
        })
    }

    /// Decoder trunk; output is the noise estimate (continuous) or the
    /// logits (discrete), depending on the model's data type.
    pub fn decode_on(
        &self,
        tape: &mut Tape,
        vars: &VarMap,
        theta: &Theta,
        z: Var,
        t: usize,
    ) -> Result<Var> {
        if tape.len_of(z) != self.config.latent_dim {
            return Err(Error::Dim(format!(
                "latent has {} values, model expects {}",
                tape.len_of(z),
                self.config.latent_dim
            )));
        }
        let feat = self.theta_features(theta)?;
        let temb = time_embed(self.time_fraction(t), self.config.time_dim)?;
        let fv = tape.leaf_tensor(&feat);
        let tv = tape.leaf_tensor(&temb);
        let mut h = self.decoder.input.forward(tape, vars, fv);
        for b in &self.decoder.blocks {
            let inner = ada_gn(
                tape,
                vars,
                h,
                z,
                &b.scale_z,
                &b.shift_z,
                self.config.groups,
                GROUP_NORM_EPS,
            )?;
            let outer = ada_gn(
                tape,
                vars,
                inner,
                tv,
                &b.scale_t,
                &b.shift_t,
                self.config.groups,
                GROUP_NORM_EPS,
            )?;
            let act = tape.silu(outer);
            h = b.dense.forward(tape, vars, act);
        }
        Ok(self.decoder.head.forward(tape, vars, h))
    }

    /// eps_psi(theta_t, z_t) for continuous models.
    pub fn predict_noise(&self, theta: &Theta, z: &Tensor, t: usize) -> Result<Tensor> {
        if !self.config.data.is_continuous() {
            return Err(Error::Usage(
                "predict_noise is only defined for continuous models".into(),
            ));
        }
        let mut tape = Tape::new();
        let vars = VarMap::stage(&mut tape, &self.store);
        let zv = tape.leaf_tensor(z);
        let out = self.decode_on(&mut tape, &vars, theta, zv, t)?;
        Ok(Tensor::from_vec(tape.value(out).to_vec()))
    }

    /// Row-wise softmax over the decoder logits for discrete models.
    pub fn output_probs(&self, theta: &Theta, z: &Tensor, t: usize) -> Result<DiscreteParams> {
        let classes = match self.config.data {
            DataSpec::Discrete { classes, .. } => classes,
            DataSpec::Continuous { .. } => {
                return Err(Error::Usage(
                    "output_probs is only defined for discrete models".into(),
                ))
            }
        };
        let mut tape = Tape::new();
        let vars = VarMap::stage(&mut tape, &self.store);
        let zv = tape.leaf_tensor(z);
        let out = self.decode_on(&mut tape, &vars, theta, zv, t)?;
        DiscreteParams::from_logits(&Tensor::from_vec(tape.value(out).to_vec()), classes)
    }
}

// ---------------------------------------------------------------------------
// Latent sampling and rate
// ---------------------------------------------------------------------------

/// Reparameterized draw z = mean + exp(logvar / 2) * eps.
pub fn reparam_sample(lg: &LatentGaussian, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(
        lg.mean
            .data()
            .iter()
            .zip(lg.logvar.data())
            .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng::standard_normal(rng))
            .collect(),
    )
}

/// Tape version of the reparameterization; `eps` is a fixed noise leaf so
/// gradients flow to mean and logvar only.
pub fn reparam_on(tape: &mut Tape, mean: Var, logvar: Var, eps: &[f64]) -> Var {
    let half = tape.scale(logvar, 0.5);
    let sd = tape.exp(half);
    let ev = tape.leaf(eps);
    let noise = tape.mul(sd, ev);
    tape.add(mean, noise)
}

/// KL(q || N(0, I)) = 1/2 sum(exp(logvar) + mean^2 - 1 - logvar).
pub fn kl_latent_prior(lg: &LatentGaussian) -> f64 {
    0.5 * lg
        .mean
        .data()
        .iter()
        .zip(lg.logvar.data())
        .map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Tape version of the latent rate term.
pub fn latent_kl_on(tape: &mut Tape, mean: Var, logvar: Var) -> Var {
    let l = tape.len_of(mean);
    let e = tape.exp(logvar);
    let m2 = tape.mul(mean, mean);
    let s = tape.add(e, m2);
    let s = tape.sub(s, logvar);
    let total = tape.sum(s);
    let shifted = tape.add_scalar(total, -(l as f64));
    tape.scale(shifted, 0.5)
}

// ---------------------------------------------------------------------------
// Continuous output estimate
// ---------------------------------------------------------------------------

/// xhat = mu / gamma - sqrt((1 - gamma) / gamma) * eps_hat, pinned to zero
/// in the no-information regime gamma <= GAMMA_MIN.
pub fn output_estimate_with_gamma(mu: &Tensor, gamma: f64, eps_hat: &Tensor) -> Tensor {
    if gamma <= GAMMA_MIN {
        return Tensor::zeros(&[mu.len()]);
    }
    let coeff = ((1.0 - gamma) / gamma).sqrt();
    Tensor::from_vec(
        mu.data()
            .iter()
            .zip(eps_hat.data())
            .map(|(&m, &e)| m / gamma - coeff * e)
            .collect(),
    )
}

/// Schedule-indexed form of the continuous output estimate.
pub fn output_estimate_continuous(
    mu: &Tensor,
    t: usize,
    eps_hat: &Tensor,
    sched: &AccuracySchedule,
) -> Result<Tensor> {
    let gamma = sched.gamma_at(t)?;
    if mu.len() != eps_hat.len() {
        return Err(Error::Dim(format!(
            "mu has {} values, eps_hat {}",
            mu.len(),
            eps_hat.len()
        )));
    }
    Ok(output_estimate_with_gamma(mu, gamma, eps_hat))
}

/// Tape version: mu enters as a constant, gradients flow through eps_hat.
/// In the clamped regime the estimate is a zero constant and the step
/// contributes no decoder gradient.
pub fn output_estimate_on(tape: &mut Tape, mu: &Tensor, gamma: f64, eps_hat: Var) -> Var {
    if gamma <= GAMMA_MIN {
        return tape.leaf(&vec![0.0; mu.len()]);
    }
    let coeff = ((1.0 - gamma) / gamma).sqrt();
    let mu_over_gamma = tape.leaf(&mu.data().iter().map(|&m| m / gamma).collect::<Vec<_>>());
    let scaled = tape.scale(eps_hat, -coeff);
    tape.add(mu_over_gamma, scaled)
}
