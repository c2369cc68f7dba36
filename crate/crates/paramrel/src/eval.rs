//! Synthetic factor datasets and representation-quality metrics: AUROC,
//! cross-validated linear probes, per-factor informativeness, and
//! reconstruction error.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::objective::Sample;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    BlobsContinuous,
    ShapesBinary,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs_continuous" => Ok(DatasetKind::BlobsContinuous),
            "shapes_binary" => Ok(DatasetKind::ShapesBinary),
            other => Err(Error::Usage(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// Samples with ground-truth generative factors.
#[derive(Debug, Clone)]
pub struct FactorDataset {
    pub samples: Tensor,
    pub factors: Vec<Vec<usize>>,
    pub factor_names: Vec<String>,
    pub kind: DatasetKind,
}

impl FactorDataset {
    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.samples.data()[i * d..(i + 1) * d]
    }

    /// Observation i in the representation the pipeline consumes.
    pub fn sample(&self, i: usize) -> Sample {
        match self.kind {
            DatasetKind::BlobsContinuous => {
                Sample::Continuous(Tensor::from_vec(self.row(i).to_vec()))
            }
            DatasetKind::ShapesBinary => {
                Sample::Discrete(self.row(i).iter().map(|&v| v as usize).collect())
            }
        }
    }

    pub fn factor_column(&self, f: usize) -> Vec<usize> {
        self.factors.iter().map(|row| row[f]).collect()
    }
}

const GRID: usize = 8;

/// Deterministic synthetic data. Factor combinations are laid out
/// round-robin before shuffling, so every factor value is guaranteed a
/// balanced share of the dataset.
pub fn make_synthetic(kind: DatasetKind, n: usize, seed: u64) -> Result<FactorDataset> {
    if n < 200 {
        return Err(Error::Usage(format!(
            "synthetic datasets need N >= 200, got {n}"
        )));
    }
    let mut rng = rng::derive(seed, 0xDA7A);
    match kind {
        DatasetKind::BlobsContinuous => Ok(make_blobs(n, &mut rng)),
        DatasetKind::ShapesBinary => Ok(make_shapes(n, &mut rng)),
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// 8x8 images of a signed Gaussian blob. Factors: x-position and
/// y-position in {0..3}, intensity sign in {0, 1}. Values stay in [-1, 1].
fn make_blobs(n: usize, rng: &mut Rng) -> FactorDataset {
    let d = GRID * GRID;
    let mut combos: Vec<[usize; 3]> = Vec::with_capacity(n);
    'fill: loop {
        for fx in 0..4 {
            for fy in 0..4 {
                for s in 0..2 {
                    combos.push([fx, fy, s]);
                    if combos.len() == n {
                        break 'fill;
                    }
                }
            }
        }
    }
    shuffle(&mut combos, rng);

    let sigma: f64 = 1.0;
    let mut data = vec![0.0; n * d];
    for (i, combo) in combos.iter().enumerate() {
        let [fx, fy, s] = *combo;
        let cx = 0.5 + 2.0 * fx as f64;
        let cy = 0.5 + 2.0 * fy as f64;
        let sign = 2.0 * s as f64 - 1.0;
        for r in 0..GRID {
            for c in 0..GRID {
                let dist2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                let v = sign * (-dist2 / (2.0 * sigma * sigma)).exp()
                    + 0.05 * rng::standard_normal(rng);
                data[i * d + r * GRID + c] = v.clamp(-1.0, 1.0);
            }
        }
    }
    FactorDataset {
        samples: Tensor::new(vec![n, d], data).expect("shape"),
        factors: combos.iter().map(|c| c.to_vec()).collect(),
        factor_names: vec!["x_position".into(), "y_position".into(), "intensity".into()],
        kind: DatasetKind::BlobsContinuous,
    }
}

/// 8x8 binary images of a 4x4 stamp. Factors: shape in {square, cross},
/// x-offset and y-offset in {0..3}.
fn make_shapes(n: usize, rng: &mut Rng) -> FactorDataset {
    let d = GRID * GRID;
    let mut combos: Vec<[usize; 3]> = Vec::with_capacity(n);
    'fill: loop {
        for shape in 0..2 {
            for fx in 0..4 {
                for fy in 0..4 {
                    combos.push([shape, fx, fy]);
                    if combos.len() == n {
                        break 'fill;
                    }
                }
            }
        }
    }
    shuffle(&mut combos, rng);

    let mut data = vec![0.0; n * d];
    for (i, combo) in combos.iter().enumerate() {
        let [shape, fx, fy] = *combo;
        for sr in 0..4usize {
            for sc in 0..4usize {
                let on = match shape {
                    // hollow square outline
                    0 => sr == 0 || sr == 3 || sc == 0 || sc == 3,
                    // filled plus through the middle rows and columns
                    _ => (1..=2).contains(&sr) || (1..=2).contains(&sc),
                };
                if on {
                    let r = fy + sr;
                    let c = fx + sc;
                    data[i * d + r * GRID + c] = 1.0;
                }
            }
        }
    }
    FactorDataset {
        samples: Tensor::new(vec![n, d], data).expect("shape"),
        factors: combos.iter().map(|c| c.to_vec()).collect(),
        factor_names: vec!["shape".into(), "x_position".into(), "y_position".into()],
        kind: DatasetKind::ShapesBinary,
    }
}

// ---------------------------------------------------------------------------
// AUROC
// ---------------------------------------------------------------------------

/// Rank-based AUROC with tie averaging.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "auroc needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average rank for the tie block, 1-based
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

// ---------------------------------------------------------------------------
// Logistic probe
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    fn fit(xs: &[&Vec<f64>]) -> Self {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v / n;
            }
        }
        let mut sd = vec![0.0; d];
        for x in xs {
            for (s, (v, m)) in sd.iter_mut().zip(x.iter().zip(&mean)) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in sd.iter_mut() {
            *s = s.sqrt().max(1e-8);
        }
        Standardizer { mean, sd }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Full-batch gradient descent on the logistic loss, run to a 1e-6
/// convergence tolerance with step halving on non-decrease.
fn train_logistic(xs: &[Vec<f64>], ys: &[f64]) -> (Vec<f64>, f64) {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;

    let loss_of = |w: &[f64], b: f64| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| {
                let f: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
                softplus(-y * f)
            })
            .sum::<f64>()
            / n
    };

    let mut lr = 1.0;
    let mut loss = loss_of(&w, b);
    for _ in 0..20_000 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let f: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
            let coeff = -y * sigmoid(-y * f) / n;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += coeff * xi;
            }
            gb += coeff;
        }
        let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - lr * g).collect();
        let b_new = b - lr * gb;
        let loss_new = loss_of(&w_new, b_new);
        if loss_new <= loss {
            let delta = loss - loss_new;
            w = w_new;
            b = b_new;
            loss = loss_new;
            lr *= 1.05;
            if delta < 1e-6 {
                break;
            }
        } else {
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
        }
    }
    (w, b)
}

/// Cross-validated logistic probe: stratified folds, AUROC on each held-out
/// fold, reported as (mean, std over folds).
pub fn latent_probe(
    z: &[Vec<f64>],
    labels: &[u8],
    folds: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if z.len() != labels.len() || z.is_empty() {
        return Err(Error::Usage("latent_probe: size mismatch".into()));
    }
    if folds < 2 || folds > z.len() {
        return Err(Error::Usage(format!("latent_probe: bad fold count {folds}")));
    }
    let mut pos: Vec<usize> = (0..z.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..z.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(
            "latent_probe needs both classes present".into(),
        ));
    }
    let mut rng = rng::derive(seed, 0xF01D);
    shuffle(&mut pos, &mut rng);
    shuffle(&mut neg, &mut rng);

    let mut fold_of = vec![0usize; z.len()];
    for (i, &idx) in pos.iter().enumerate() {
        fold_of[idx] = i % folds;
    }
    for (i, &idx) in neg.iter().enumerate() {
        fold_of[idx] = i % folds;
    }

    let mut scores_per_fold = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train_idx: Vec<usize> = (0..z.len()).filter(|&i| fold_of[i] != fold).collect();
        let test_idx: Vec<usize> = (0..z.len()).filter(|&i| fold_of[i] == fold).collect();
        let train_refs: Vec<&Vec<f64>> = train_idx.iter().map(|&i| &z[i]).collect();
        let std = Standardizer::fit(&train_refs);
        let xs: Vec<Vec<f64>> = train_idx.iter().map(|&i| std.apply(&z[i])).collect();
        let ys: Vec<f64> = train_idx
            .iter()
            .map(|&i| if labels[i] == 1 { 1.0 } else { -1.0 })
            .collect();
        let (w, b) = train_logistic(&xs, &ys);
        let test_scores: Vec<f64> = test_idx
            .iter()
            .map(|&i| {
                let x = std.apply(&z[i]);
                w.iter().zip(&x).map(|(wi, xi)| wi * xi).sum::<f64>() + b
            })
            .collect();
        let test_labels: Vec<u8> = test_idx.iter().map(|&i| labels[i]).collect();
        scores_per_fold.push(auroc(&test_scores, &test_labels)?);
    }
    let mean = scores_per_fold.iter().sum::<f64>() / folds as f64;
    let var = scores_per_fold
        .iter()
        .map(|s| (s - mean) * (s - mean))
        .sum::<f64>()
        / (folds as f64 - 1.0);
    Ok((mean, var.sqrt()))
}

// ---------------------------------------------------------------------------
// Informativeness
// ---------------------------------------------------------------------------

/// Solve (A + ridge I) x = b for a small symmetric system.
fn solve_ridge(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, ridge: f64) -> Vec<f64> {
    let n = b.len();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += ridge;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in (col + 1)..n {
            let factor = a[row][col] / diag;
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Per-factor linear-probe R^2 in [0, 1]. Factors with fewer than two
/// distinct values are omitted (None).
pub fn informativeness(z: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<Vec<Option<f64>>> {
    if z.len() != factors.len() || z.is_empty() {
        return Err(Error::Usage("informativeness: size mismatch".into()));
    }
    let n = z.len();
    let l = z[0].len();
    let n_factors = factors[0].len();
    let mut out = Vec::with_capacity(n_factors);
    for f in 0..n_factors {
        let ys: Vec<f64> = factors.iter().map(|row| row[f] as f64).collect();
        let mut distinct = ys.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        if distinct.len() < 2 {
            out.push(None);
            continue;
        }
        // least squares with intercept: X = [z | 1]
        let d = l + 1;
        let mut xtx = vec![vec![0.0; d]; d];
        let mut xty = vec![0.0; d];
        for (x, &y) in z.iter().zip(&ys) {
            for i in 0..d {
                let xi = if i < l { x[i] } else { 1.0 };
                xty[i] += xi * y;
                for j in 0..d {
                    let xj = if j < l { x[j] } else { 1.0 };
                    xtx[i][j] += xi * xj;
                }
            }
        }
        let w = solve_ridge(xtx, xty, 1e-9);
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for (x, &y) in z.iter().zip(&ys) {
            let pred: f64 =
                x.iter().zip(&w[..l]).map(|(xi, wi)| xi * wi).sum::<f64>() + w[l];
            ss_res += (y - pred) * (y - pred);
            ss_tot += (y - y_mean) * (y - y_mean);
        }
        out.push(Some((1.0 - ss_res / ss_tot).clamp(0.0, 1.0)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reconstruction error
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMetric {
    Mse,
    BitAccuracy,
}

pub fn reconstruction_error(x: &Sample, xhat: &Sample, kind: ReconMetric) -> Result<f64> {
    match (kind, x, xhat) {
        (ReconMetric::Mse, Sample::Continuous(a), Sample::Continuous(b)) => {
            if a.len() != b.len() {
                return Err(Error::Dim("reconstruction shapes differ".into()));
            }
            Ok(a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / a.len() as f64)
        }
        (ReconMetric::BitAccuracy, Sample::Discrete(a), Sample::Discrete(b)) => {
            if a.len() != b.len() {
                return Err(Error::Dim("reconstruction shapes differ".into()));
            }
            let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
            Ok(hits as f64 / a.len() as f64)
        }
        _ => Err(Error::Usage(
            "metric kind does not match the sample data type".into(),
        )),
    }
}
