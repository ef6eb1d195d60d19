use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::RayFeature;
use super::param_grid::ParamVoxelGrid;
use crate::error::{Error, Result};

/// Fewest defined voxels a surrogate can be trained on.
pub const MIN_TRAINING_VOXELS: usize = 50;

/// Adam with cosine learning-rate decay on sim-count-weighted squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of the initial one.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 300,
            batch_size: 64,
            learning_rate: 3e-3,
            final_lr_fraction: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            problems.push(format!("hidden layers must be non-empty and positive, got {:?}", self.hidden));
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            problems.push(format!("final_lr_fraction must lie in (0, 1], got {}", self.final_lr_fraction));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            problems.push("adam moments need beta in [0, 1) and epsilon > 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let t = if self.epochs > 1 { epoch as f64 / (self.epochs - 1) as f64 } else { 1.0 };
        let floor = self.learning_rate * self.final_lr_fraction;
        floor + 0.5 * (self.learning_rate - floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Fully connected ReLU network with a sigmoid output, inputs min-max scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    /// Out × in per layer.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input_min: [f64; 3],
    pub input_max: [f64; 3],
    pub seed: u64,
    pub params: TrainParams,
    /// Weighted training loss after each epoch.
    pub loss_history: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Surrogate {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].ncols()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    fn normalize_into(&self, f: &[f64; 3], out: &mut [f64]) {
        for k in 0..3 {
            out[k] = (f[k] - self.input_min[k]) / (self.input_max[k] - self.input_min[k]);
        }
    }

    /// Inputs as a 3 × n matrix of scaled features.
    fn input_matrix(&self, rows: &[[f64; 3]]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(3, rows.len());
        for (j, r) in rows.iter().enumerate() {
            let mut col = [0.0; 3];
            self.normalize_into(r, &mut col);
            x.column_mut(j).copy_from_slice(&col);
        }
        x
    }

    /// Pre-activations and activations of every layer.
    fn forward(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut zs = Vec::with_capacity(self.weights.len());
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().expect("input is present");
            for mut col in z.column_iter_mut() {
                col += b;
            }
            let a = if l == last { z.map(sigmoid) } else { z.map(|v| v.max(0.0)) };
            zs.push(z);
            acts.push(a);
        }
        (zs, acts)
    }

    /// Return probabilities for a batch, evaluated in fixed-size chunks.
    pub fn predict_many(&self, features: &[RayFeature]) -> Vec<f64> {
        let rows: Vec<[f64; 3]> = features.iter().map(|f| f.as_array()).collect();
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(1024) {
            let (_, acts) = self.forward(&self.input_matrix(chunk));
            out.extend(acts.last().expect("output layer").iter().copied());
        }
        out
    }

    pub fn predict(&self, f: &RayFeature) -> f64 {
        self.predict_many(std::slice::from_ref(f))[0]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SurrogateFile::from(self)).expect("surrogates serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Result<Self>> {
        let file: SurrogateFile = serde_json::from_str(text)?;
        Ok(file.into_model())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))?
    }
}

/// Serialized form: row-major weights per layer.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct SurrogateFile {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    input_min: [f64; 3],
    input_max: [f64; 3],
    seed: u64,
    params: TrainParams,
    loss_history: Vec<f64>,
}

impl From<&Surrogate> for SurrogateFile {
    fn from(m: &Surrogate) -> Self {
        Self {
            layer_sizes: m.layer_sizes(),
            weights: m.weights.iter().map(|w| w.transpose().as_slice().to_vec()).collect(),
            biases: m.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
            input_min: m.input_min,
            input_max: m.input_max,
            seed: m.seed,
            params: m.params.clone(),
            loss_history: m.loss_history.clone(),
        }
    }
}

impl SurrogateFile {
    fn into_model(self) -> Result<Surrogate> {
        let sizes = &self.layer_sizes;
        let bad = |why: String| Error::invalid("surrogate", why);
        if sizes.len() < 2 || sizes[0] != 3 || *sizes.last().unwrap_or(&0) != 1 {
            return Err(bad(format!("layer sizes {sizes:?} must run from 3 inputs to 1 output")));
        }
        if self.weights.len() != sizes.len() - 1 || self.biases.len() != sizes.len() - 1 {
            return Err(bad("one weight matrix and bias per layer is required".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (rows, cols) = (sizes[l + 1], sizes[l]);
            if self.weights[l].len() != rows * cols || self.biases[l].len() != rows {
                return Err(bad(format!("layer {l} has the wrong number of parameters")));
            }
            if !self.weights[l].iter().chain(&self.biases[l]).all(|v| v.is_finite()) {
                return Err(bad(format!("layer {l} has non-finite parameters")));
            }
            weights.push(DMatrix::from_row_slice(rows, cols, &self.weights[l]));
            biases.push(DVector::from_column_slice(&self.biases[l]));
        }
        if (0..3).any(|k| !(self.input_min[k] < self.input_max[k])) {
            return Err(bad("input normalization needs min < max per feature".into()));
        }
        Ok(Surrogate {
            weights,
            biases,
            input_min: self.input_min,
            input_max: self.input_max,
            seed: self.seed,
            params: self.params,
            loss_history: self.loss_history,
        })
    }
}

struct Adam {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    mb: Vec<DVector<f64>>,
    vb: Vec<DVector<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &Surrogate) -> Self {
        Self {
            m: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            mb: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            vb: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Surrogate, gw: &[DMatrix<f64>], gb: &[DVector<f64>], lr: f64, p: &TrainParams) {
        self.t += 1;
        let c1 = 1.0 - p.beta1.powi(self.t);
        let c2 = 1.0 - p.beta2.powi(self.t);
        let update = |param: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..param.len() {
                m[k] = p.beta1 * m[k] + (1.0 - p.beta1) * g[k];
                v[k] = p.beta2 * v[k] + (1.0 - p.beta2) * g[k] * g[k];
                param[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + p.epsilon);
            }
        };
        for l in 0..model.weights.len() {
            update(model.weights[l].as_mut_slice(), gw[l].as_slice(), self.m[l].as_mut_slice(), self.v[l].as_mut_slice());
            update(model.biases[l].as_mut_slice(), gb[l].as_slice(), self.mb[l].as_mut_slice(), self.vb[l].as_mut_slice());
        }
    }
}

/// Weighted mean squared error over the whole training set.
fn weighted_loss(model: &Surrogate, x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> f64 {
    let (_, acts) = model.forward(x);
    let out = acts.last().expect("output layer");
    let total: f64 = w.iter().sum();
    out.iter().zip(y).zip(w).map(|((o, t), wi)| wi * (o - t).powi(2)).sum::<f64>() / total
}

/// Fits a surrogate to the defined voxels of `grid`: voxel center → ratio, weighted by sim count.
pub fn train_surrogate(grid: &ParamVoxelGrid, params: &TrainParams, seed: u64) -> Result<Surrogate> {
    params.validate()?;
    let defined = grid.defined();
    if defined.len() < MIN_TRAINING_VOXELS {
        return Err(Error::Training(format!(
            "{} defined voxels, at least {MIN_TRAINING_VOXELS} are needed",
            defined.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![3];
    sizes.extend(&params.hidden);
    sizes.push(1);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let std = if l + 2 == sizes.len() {
            (1.0 / fan_in as f64).sqrt()
        } else {
            (2.0 / fan_in as f64).sqrt()
        };
        let normal = Normal::new(0.0, std).expect("positive std");
        weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| normal.sample(&mut rng)));
        biases.push(DVector::zeros(fan_out));
    }
    let mut model = Surrogate {
        weights,
        biases,
        input_min: grid.bins.lower(),
        input_max: grid.bins.upper(),
        seed,
        params: params.clone(),
        loss_history: Vec::with_capacity(params.epochs),
    };

    let rows: Vec<[f64; 3]> = defined.iter().map(|(c, _, _)| grid.bins.center(*c).as_array()).collect();
    let targets: Vec<f64> = defined.iter().map(|d| d.1).collect();
    let sample_w: Vec<f64> = defined.iter().map(|d| d.2 as f64).collect();
    let x_all = model.input_matrix(&rows);

    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let layers = model.weights.len();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let lr = params.lr_at(epoch);
        for batch in order.chunks(params.batch_size) {
            let xb = DMatrix::from_fn(3, batch.len(), |r, c| x_all[(r, batch[c])]);
            let wsum: f64 = batch.iter().map(|&k| sample_w[k]).sum();
            let (zs, acts) = model.forward(&xb);
            let out = &acts[layers];
            // d loss / d output pre-activation through the sigmoid.
            let mut delta = DMatrix::from_fn(1, batch.len(), |_, c| {
                let o = out[(0, c)];
                2.0 * sample_w[batch[c]] / wsum * (o - targets[batch[c]]) * o * (1.0 - o)
            });
            let mut gw = vec![DMatrix::zeros(0, 0); layers];
            let mut gb = vec![DVector::zeros(0); layers];
            for l in (0..layers).rev() {
                gw[l] = &delta * acts[l].transpose();
                gb[l] = delta.column_sum();
                if l > 0 {
                    let mut back = model.weights[l].transpose() * &delta;
                    back.zip_apply(&zs[l - 1], |d, z| {
                        if z <= 0.0 {
                            *d = 0.0
                        }
                    });
                    delta = back;
                }
            }
            adam.step(&mut model, &gw, &gb, lr, params);
        }
        model.loss_history.push(weighted_loss(&model, &x_all, &targets, &sample_w));
    }
    if !model.weights.iter().all(|w| w.iter().all(|v| v.is_finite())) {
        return Err(Error::Training("weights diverged to non-finite values".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raydrop::param_grid::{build_param_grid, GridBins};

    fn uniform_grid(ratio_num: u32) -> ParamVoxelGrid {
        let bins = GridBins::default();
        let mut sim = Vec::new();
        let mut real = Vec::new();
        for d in 0..10 {
            for t in 0..6 {
                let f = bins.center([d * 5, t * 2, 10]);
                sim.extend(std::iter::repeat_n(f, 20));
                real.extend(std::iter::repeat_n(f, ratio_num as usize));
            }
        }
        build_param_grid(&sim, &real, bins, 20).unwrap()
    }

    #[test]
    fn constant_one_is_learned() {
        let g = uniform_grid(20);
        let m = train_surrogate(&g, &TrainParams { epochs: 150, ..Default::default() }, 1).unwrap();
        for (c, _, _) in g.defined() {
            assert!(m.predict(&g.bins.center(c)) >= 0.95);
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let g = uniform_grid(10);
        let p = TrainParams { epochs: 20, ..Default::default() };
        let a = train_surrogate(&g, &p, 7).unwrap();
        let b = train_surrogate(&g, &p, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        let c = train_surrogate(&g, &p, 8).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = uniform_grid(10);
        let m = train_surrogate(&g, &TrainParams { epochs: 5, ..Default::default() }, 3).unwrap();
        let back = Surrogate::from_json(&m.to_json()).unwrap().unwrap();
        assert_eq!(back, m);
        assert_eq!(back.layer_sizes(), vec![3, 64, 64, 1]);
    }

    #[test]
    fn too_few_voxels_is_a_training_error() {
        let bins = GridBins::default();
        let f = bins.center([1, 1, 1]);
        let g = build_param_grid(&vec![f; 30], &vec![f; 10], bins, 20).unwrap();
        assert!(matches!(train_surrogate(&g, &TrainParams::default(), 0), Err(Error::Training(_))));
    }
}
