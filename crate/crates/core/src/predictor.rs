//! Two-layer MLP mapping symmetry features to expected validation MRR.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::HyperParams;
use crate::srf::{srf_features, SrfVector};
use crate::structure::StructureMatrix;

/// One trained structure and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub structure: StructureMatrix,
    pub srf: SrfVector,
    pub val_mrr: f64,
    pub hyperparams: HyperParams,
    /// Search round (0 is the initial population / tier).
    pub round: usize,
    /// Position of the candidate within its round.
    pub index: usize,
    /// Excluded from `records.jsonl` so repeated runs are byte-identical;
    /// timings go to `curve.csv`.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub init_scale: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            hidden: 64,
            learning_rate: 1e-2,
            steps: 2000,
            init_scale: 0.1,
        }
    }
}

/// `y = w2 . relu(W1 x + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub input_dim: usize,
    pub hidden: usize,
    pub seed: u64,
    /// `hidden x input_dim`, row-major.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Predictor {
    fn init(input_dim: usize, cfg: &PredictorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.init_scale;
        let w1 = (0..cfg.hidden)
            .map(|_| (0..input_dim).map(|_| rng.gen_range(-s..=s)).collect())
            .collect();
        let w2 = (0..cfg.hidden).map(|_| rng.gen_range(-s..=s)).collect();
        Predictor {
            input_dim,
            hidden: cfg.hidden,
            seed,
            w1,
            b1: vec![0.0; cfg.hidden],
            w2,
            b2: 0.0,
        }
    }

    fn hidden_activations(&self, x: &[f64], out: &mut [f64]) {
        for (o, (w, b)) in out.iter_mut().zip(self.w1.iter().zip(&self.b1)) {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
            *o = z.max(0.0);
        }
    }

    fn forward(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        self.hidden_activations(x, hidden);
        hidden.iter().zip(&self.w2).map(|(h, w)| h * w).sum::<f64>() + self.b2
    }

    pub fn predict_features(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "feature length {} does not match predictor input {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut h = vec![0.0; self.hidden];
        Ok(self.forward(x, &mut h))
    }

    pub fn predict(&self, srf: &SrfVector) -> Result<f64> {
        self.predict_features(&srf.to_f64())
    }

    pub fn mse(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        xs.iter()
            .zip(ys)
            .map(|(x, y)| (self.forward(x, &mut h) - y).powi(2))
            .sum::<f64>()
            / xs.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Predictor> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Predictor = serde_json::from_str(&text)?;
        if p.w1.len() != p.hidden
            || p.w1.iter().any(|w| w.len() != p.input_dim)
            || p.b1.len() != p.hidden
            || p.w2.len() != p.hidden
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "predictor layer shapes do not match dims".into(),
            });
        }
        Ok(p)
    }
}

/// Full-batch gradient descent on mean squared error. Returns the fitted
/// model and the loss before each step (plus the final loss).
pub fn fit_features(
    xs: &[Vec<f64>],
    ys: &[f64],
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<(Predictor, Vec<f64>)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("predictor needs at least one (feature, target) pair"));
    }
    let input_dim = xs[0].len();
    if xs.iter().any(|x| x.len() != input_dim) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    let mut p = Predictor::init(input_dim, cfg, seed);
    let n = xs.len() as f64;
    let hid = cfg.hidden;
    let mut hidden = vec![0.0; hid];
    let mut g_w1 = vec![vec![0.0; input_dim]; hid];
    let mut g_b1 = vec![0.0; hid];
    let mut g_w2 = vec![0.0; hid];
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        g_w1.iter_mut().for_each(|g| g.fill(0.0));
        g_b1.fill(0.0);
        g_w2.fill(0.0);
        let mut g_b2 = 0.0;
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let pred = p.forward(x, &mut hidden);
            let err = pred - y;
            loss += err * err;
            let dy = 2.0 * err / n;
            g_b2 += dy;
            for u in 0..hid {
                g_w2[u] += dy * hidden[u];
                if hidden[u] > 0.0 {
                    let dz = dy * p.w2[u];
                    g_b1[u] += dz;
                    for (g, xi) in g_w1[u].iter_mut().zip(x) {
                        *g += dz * xi;
                    }
                }
            }
        }
        losses.push(loss / n);
        let lr = cfg.learning_rate;
        for u in 0..hid {
            for (w, g) in p.w1[u].iter_mut().zip(&g_w1[u]) {
                *w -= lr * g;
            }
            p.b1[u] -= lr * g_b1[u];
            p.w2[u] -= lr * g_w2[u];
        }
        p.b2 -= lr * g_b2;
    }
    losses.push(p.mse(xs, ys));
    if !losses.last().is_some_and(|l| l.is_finite()) {
        return Err(Error::Numeric("predictor training diverged".into()));
    }
    Ok((p, losses))
}

/// Fits the predictor on recorded SRF vectors and validation MRRs.
pub fn predictor_fit(records: &[SearchRecord], seed: u64) -> Result<Predictor> {
    predictor_fit_with(records, &PredictorConfig::default(), seed)
}

pub fn predictor_fit_with(
    records: &[SearchRecord],
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<Predictor> {
    if records.is_empty() {
        return Err(Error::invalid("cannot fit a predictor on zero records"));
    }
    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.srf.to_f64()).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.val_mrr).collect();
    Ok(fit_features(&xs, &ys, cfg, seed)?.0)
}

/// Indices of the `top_p` candidates with the highest predicted score,
/// best first; ties keep input order.
pub fn rank_indices(p: &Predictor, features: &[SrfVector], top_p: usize) -> Result<Vec<usize>> {
    let scores = features
        .iter()
        .map(|f| p.predict(f))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(top_p);
    Ok(order)
}

/// The `top_p` candidates by predicted score, descending (stable).
pub fn predictor_rank(
    p: &Predictor,
    candidates: &[StructureMatrix],
    top_p: usize,
) -> Result<Vec<StructureMatrix>> {
    let features: Vec<SrfVector> = candidates.iter().map(srf_features).collect();
    Ok(rank_indices(p, &features, top_p)?
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}
