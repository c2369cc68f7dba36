//! Layers and the standalone tensor ops they are built from.

use crate::error::{Error, Result};
use crate::nn::store::{ParamStore, VarMap};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::rng::Rng;
use rand::Rng as _;

pub const GROUP_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_GROUPS: usize = 4;

/// y = W x + b for row-major W of shape out x in.
pub fn linear_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 {
        return Err(Error::Dim(format!("W must be rank 2, got {:?}", w.shape())));
    }
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    if b.len() != rows || x.len() != cols {
        return Err(Error::Dim(format!(
            "linear: W is {rows}x{cols}, b has {}, x has {}",
            b.len(),
            x.len()
        )));
    }
    let mut tape = Tape::new();
    let wv = tape.leaf_tensor(w);
    let bv = tape.leaf_tensor(b);
    let xv = tape.leaf_tensor(x);
    let wx = tape.matvec(wv, xv, rows, cols);
    let y = tape.add(wx, bv);
    Ok(Tensor::from_vec(tape.value(y).to_vec()))
}

/// Per-group standardization of a channel vector.
pub fn group_norm(x: &Tensor, groups: usize, eps: f64) -> Result<Tensor> {
    if groups == 0 || x.len() % groups != 0 {
        return Err(Error::Config(format!(
            "group_norm: {} channels not divisible by {} groups",
            x.len(),
            groups
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Config("group_norm: eps must be positive".into()));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf_tensor(x);
    let y = tape.group_norm(xv, groups, eps);
    Ok(Tensor::from_vec(tape.value(y).to_vec()))
}

/// Groups actually used for a channel count: fewer than `requested`
/// channels degenerate to a single group (layer-norm behaviour).
pub fn effective_groups(channels: usize, requested: usize) -> usize {
    if channels < requested || channels % requested != 0 {
        1
    } else {
        requested
    }
}

/// Sinusoidal embedding of a fractional time in [0, 1]: interleaved
/// sin/cos over geometrically spaced frequencies.
pub fn time_embed(t_frac: f64, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "time_embed: dim must be positive and even, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = 1000f64.powf(exponent);
        data[2 * i] = (freq * t_frac).sin();
        data[2 * i + 1] = (freq * t_frac).cos();
    }
    Ok(Tensor::from_vec(data))
}

/// Dense layer whose weights live in a `ParamStore` under `<name>.w` / `<name>.b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            name: name.to_string(),
            in_dim,
            out_dim,
        }
    }

    fn w_name(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b_name(&self) -> String {
        format!("{}.b", self.name)
    }

    /// Kaiming-uniform weights, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let bound = (6.0 / self.in_dim as f64).sqrt();
        let data: Vec<f64> = (0..self.in_dim * self.out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        store.insert(
            &self.w_name(),
            Tensor::new(vec![self.out_dim, self.in_dim], data)?,
        )?;
        store.insert(&self.b_name(), Tensor::zeros(&[self.out_dim]))?;
        Ok(())
    }

    /// All-zero weights and bias, used for output heads and conditioning
    /// nets so the layer starts as the identity contribution.
    pub fn init_zero(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(&self.w_name(), Tensor::zeros(&[self.out_dim, self.in_dim]))?;
        store.insert(&self.b_name(), Tensor::zeros(&[self.out_dim]))?;
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, vars: &VarMap, x: Var) -> Var {
        let w = vars.get(&self.w_name());
        let b = vars.get(&self.b_name());
        let wx = tape.matvec(w, x, self.out_dim, self.in_dim);
        tape.add(wx, b)
    }
}

/// Adaptive group normalization: (1 + s(cond)) * GroupNorm(h) + b(cond).
///
/// `scale_net` and `shift_net` map the conditioning vector to h's channel
/// count. The two-condition decoder block nests this twice.
pub fn ada_gn(
    tape: &mut Tape,
    vars: &VarMap,
    h: Var,
    cond: Var,
    scale_net: &Linear,
    shift_net: &Linear,
    groups: usize,
    eps: f64,
) -> Result<Var> {
    let channels = tape.len_of(h);
    if scale_net.out_dim != channels || shift_net.out_dim != channels {
        return Err(Error::Dim(format!(
            "ada_gn: conditioning nets emit {}/{} channels, h has {}",
            scale_net.out_dim, shift_net.out_dim, channels
        )));
    }
    if tape.len_of(cond) != scale_net.in_dim || tape.len_of(cond) != shift_net.in_dim {
        return Err(Error::Dim(format!(
            "ada_gn: cond has {} values, nets expect {}/{}",
            tape.len_of(cond),
            scale_net.in_dim,
            shift_net.in_dim
        )));
    }
    let g = effective_groups(channels, groups);
    let normed = tape.group_norm(h, g, eps);
    let s = scale_net.forward(tape, vars, cond);
    let b = shift_net.forward(tape, vars, cond);
    let one_plus_s = tape.add_scalar(s, 1.0);
    let scaled = tape.mul(one_plus_s, normed);
    Ok(tape.add(scaled, b))
}
