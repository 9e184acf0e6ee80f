//! Datasets, class filtering, mini-batch SGD on a linear classifier,
//! one-vs-all task assignment, aggregation and evaluation.
//!
//! The model family is multinomial logistic regression: one row of
//! weights (plus bias) per class. Personalized binary training applies
//! sigmoid cross-entropy to a single row; multiclass training applies
//! softmax cross-entropy over all rows. Weighted parameter averaging of
//! per-class binary models into a multiclass model is exactly
//! well-defined for this family.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::constellation::SatelliteId;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dataset has no samples of target class {0}")]
    EmptyPositives(u32),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("model shapes do not match: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("aggregation weights must be positive and sum to a positive total")]
    ZeroWeight,
    #[error("training diverged: non-finite parameters")]
    Divergence,
    #[error("sample label {label} out of range for {num_classes} classes")]
    BadLabel { label: u32, num_classes: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset file: {0}")]
    BadFile(String),
}

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u32,
}

/// A labeled dataset with a fixed class count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn check_labels(&self) -> Result<(), LearnError> {
        for s in &self.samples {
            if s.label >= self.num_classes {
                return Err(LearnError::BadLabel {
                    label: s.label,
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }
}

/// Class-filtering rule applied to a satellite's collected data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub target_class: u32,
    /// Ratio of retained negatives to positives. Zero reproduces the
    /// literal positives-only filter; the default of 1 keeps a balanced
    /// negative sample so the binary task is well-posed.
    pub negative_ratio: f64,
    pub rng_seed: u64,
}

/// Keep all target-class samples (relabeled 1) plus a seeded uniform
/// sample of `floor(negative_ratio * positives)` non-target samples
/// (relabeled 0).
pub fn filter(dataset: &Dataset, policy: &FilterPolicy) -> Result<Dataset, LearnError> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for s in &dataset.samples {
        if s.label == policy.target_class {
            positives.push(Sample {
                features: s.features.clone(),
                label: 1,
            });
        } else {
            negatives.push(s);
        }
    }
    if positives.is_empty() {
        return Err(LearnError::EmptyPositives(policy.target_class));
    }
    let want = ((policy.negative_ratio * positives.len() as f64).floor() as usize)
        .min(negatives.len());
    let mut rng = rng_from_seed(policy.rng_seed);
    negatives.shuffle(&mut rng);
    let mut samples = positives;
    samples.extend(negatives[..want].iter().map(|s| Sample {
        features: s.features.clone(),
        label: 0,
    }));
    Ok(Dataset {
        samples,
        num_classes: 2,
    })
}

/// Flat parameter tensor: L rows of (d weights + bias).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Array2<f64>,
    pub value_bits: u32,
}

impl ModelParams {
    pub fn zeros(num_classes: usize, dim: usize, value_bits: u32) -> Self {
        Self {
            weights: Array2::zeros((num_classes, dim + 1)),
            value_bits,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    pub fn size_bits(&self) -> u64 {
        self.num_params() as u64 * self.value_bits as u64
    }

    pub fn size_bytes(&self) -> u64 {
        self.size_bits() / 8
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
    }

    /// Row score w_l . [x; 1].
    pub fn logit(&self, row: usize, features: &[f64]) -> f64 {
        let w = self.weights.row(row);
        let mut z = w[features.len()]; // bias
        for (wi, xi) in w.iter().zip(features) {
            z += wi * xi;
        }
        z
    }

    pub fn predict(&self, features: &[f64]) -> u32 {
        let mut best = 0usize;
        let mut best_z = f64::NEG_INFINITY;
        for row in 0..self.num_classes() {
            let z = self.logit(row, features);
            if z > best_z {
                best_z = z;
                best = row;
            }
        }
        best as u32
    }

    pub fn l2_distance(&self, other: &ModelParams) -> f64 {
        let d = &self.weights - &other.weights;
        d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: u32,
    pub epochs: u32,
    pub loss_threshold: f64,
    pub value_bits: u32,
}

/// Which loss drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Sigmoid cross-entropy on one row; only that row is updated.
    Binary { row: usize },
    /// Softmax cross-entropy over all rows.
    Multiclass,
}

fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Numerically stable log(1 + e^x).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid cross-entropy of `row` against binary labels.
pub fn binary_loss(model: &ModelParams, row: usize, data: &Dataset) -> f64 {
    let mut total = 0.0;
    for s in &data.samples {
        let z = model.logit(row, &s.features);
        // -[t*ln(sigma) + (1-t)*ln(1-sigma)] = softplus(z) - t*z
        total += softplus(z) - s.label as f64 * z;
    }
    total / data.len().max(1) as f64
}

/// Mean softmax cross-entropy over all rows.
pub fn multiclass_loss(model: &ModelParams, data: &Dataset) -> f64 {
    let mut total = 0.0;
    for s in &data.samples {
        let logits: Vec<f64> = (0..model.num_classes())
            .map(|r| model.logit(r, &s.features))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[s.label as usize];
    }
    total / data.len().max(1) as f64
}

/// Mean gradient of the binary loss over `batch`, for the row and its
/// bias: (sigma(z) - t) * [x; 1].
pub fn binary_gradient(model: &ModelParams, row: usize, batch: &[&Sample]) -> Array1<f64> {
    let cols = model.weights.ncols();
    let mut grad = Array1::zeros(cols);
    for s in batch {
        let err = sigmoid(model.logit(row, &s.features)) - s.label as f64;
        for (j, x) in s.features.iter().enumerate() {
            grad[j] += err * x;
        }
        grad[cols - 1] += err;
    }
    grad / batch.len() as f64
}

/// Mean gradient of the softmax loss over `batch`, for all rows:
/// row l gets (p_l - [l = y]) * [x; 1].
pub fn multiclass_gradient(model: &ModelParams, batch: &[&Sample]) -> Array2<f64> {
    let (rows, cols) = (model.weights.nrows(), model.weights.ncols());
    let mut grad = Array2::zeros((rows, cols));
    for s in batch {
        let logits: Vec<f64> = (0..rows).map(|r| model.logit(r, &s.features)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for l in 0..rows {
            let p = exps[l] / sum;
            let err = p - if l as u32 == s.label { 1.0 } else { 0.0 };
            for (j, x) in s.features.iter().enumerate() {
                grad[(l, j)] += err * x;
            }
            grad[(l, cols - 1)] += err;
        }
    }
    grad / batch.len() as f64
}

/// Run J epochs of mini-batch SGD and return the updated model.
///
/// Each epoch shuffles the sample order with the seeded generator and
/// then walks fixed-order batches, so results are bit-reproducible.
/// Estimated FLOPs are added to `flops`.
pub fn sgd_epochs(
    model: &ModelParams,
    data: &Dataset,
    tc: &TrainConfig,
    mode: TrainMode,
    seed: u64,
    flops: &mut u64,
) -> Result<ModelParams, LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut out = model.clone();
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = tc.batch_size.max(1) as usize;
    for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data.samples[i]).collect();
            match mode {
                TrainMode::Binary { row } => {
                    let grad = binary_gradient(&out, row, &samples);
                    let mut w = out.weights.row_mut(row);
                    w.scaled_add(-tc.learning_rate, &grad);
                }
                TrainMode::Multiclass => {
                    let grad = multiclass_gradient(&out, &samples);
                    out.weights.scaled_add(-tc.learning_rate, &grad);
                }
            }
        }
        if !out.is_finite() {
            return Err(LearnError::Divergence);
        }
    }
    *flops += flops_estimate(model, data.len() as u64, tc);
    Ok(out)
}

/// Deterministic per-round FLOP estimate: forward, backward and update
/// passes over 2*|params| operations per sample per epoch.
pub fn flops_estimate(model: &ModelParams, data_size: u64, tc: &TrainConfig) -> u64 {
    const PASSES: u64 = 3;
    2 * model.num_params() as u64 * data_size * tc.epochs as u64 * PASSES
}

/// True iff the mean binary cross-entropy of `row` is below `tau`.
pub fn check_local_convergence(
    model: &ModelParams,
    row: usize,
    data_filtered: &Dataset,
    tau: f64,
) -> bool {
    binary_loss(model, row, data_filtered) < tau
}

/// Assign binary class tasks to the satellites of one orbit.
///
/// With L <= I_n the L satellites with the largest compute fraction take
/// one class each (ties by satellite order); otherwise classes are dealt
/// round-robin so groups differ in size by at most one.
pub fn assign_tasks(
    orbit_sats: &[SatelliteId],
    num_classes: u32,
    compute_fractions: &[f64],
) -> BTreeMap<SatelliteId, Vec<u32>> {
    assert!(!orbit_sats.is_empty());
    assert_eq!(orbit_sats.len(), compute_fractions.len());
    let mut tasks: BTreeMap<SatelliteId, Vec<u32>> =
        orbit_sats.iter().map(|&s| (s, Vec::new())).collect();
    if num_classes as usize <= orbit_sats.len() {
        let mut ranked: Vec<(usize, SatelliteId)> = orbit_sats.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| {
            compute_fractions[b.0]
                .total_cmp(&compute_fractions[a.0])
                .then(a.1.cmp(&b.1))
        });
        for (class, (_, sat)) in (0..num_classes).zip(ranked) {
            tasks.get_mut(&sat).unwrap().push(class);
        }
    } else {
        for class in 0..num_classes {
            let sat = orbit_sats[class as usize % orbit_sats.len()];
            tasks.get_mut(&sat).unwrap().push(class);
        }
    }
    tasks
}

/// Element-wise weighted average of compatible models. Weights are
/// normalized internally, so scaling them all by a constant is a no-op.
pub fn aggregate(models: &[(&ModelParams, f64)]) -> Result<ModelParams, LearnError> {
    let (first, _) = models.first().ok_or(LearnError::ZeroWeight)?;
    let shape = first.weights.dim();
    let total: f64 = models.iter().map(|(_, w)| w).sum();
    if total <= 0.0 || models.iter().any(|(_, w)| *w <= 0.0) {
        return Err(LearnError::ZeroWeight);
    }
    let mut acc = Array2::<f64>::zeros(shape);
    for (m, w) in models {
        if m.weights.dim() != shape {
            return Err(LearnError::ShapeMismatch(
                shape.0,
                shape.1,
                m.weights.nrows(),
                m.weights.ncols(),
            ));
        }
        acc.scaled_add(w / total, &m.weights);
    }
    Ok(ModelParams {
        weights: acc,
        value_bits: first.value_bits,
    })
}

/// Classification metrics for one class.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluation result on a test set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    pub fn macro_f1(&self) -> f64 {
        self.per_class.iter().map(|c| c.f1).sum::<f64>() / self.per_class.len().max(1) as f64
    }
}

/// Argmax-over-rows evaluation: accuracy, per-class precision/recall/F1
/// and the LxL confusion matrix (rows = ground truth).
pub fn evaluate(model: &ModelParams, test: &Dataset) -> Metrics {
    let classes = model.num_classes();
    let mut confusion = vec![vec![0u64; classes]; classes];
    for s in &test.samples {
        let pred = model.predict(&s.features) as usize;
        confusion[s.label as usize][pred] += 1;
    }
    let total: u64 = test.len() as u64;
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let actual: u64 = confusion[c].iter().sum();
        let predicted: u64 = (0..classes).map(|r| confusion[r][c]).sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
        });
    }
    Metrics {
        accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        per_class,
        confusion,
    }
}

/// Seeded Gaussian-blob generator. With `dim >= num_classes` each class
/// mean sits on its own coordinate axis at distance `separation`;
/// otherwise the means are evenly spaced on a circle of radius
/// `separation` in the first two dimensions. Unit-variance noise scaled
/// by `noise` is added in every dimension.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BlobSpec {
    pub dim: usize,
    pub num_classes: u32,
    pub separation: f64,
    pub noise: f64,
}

impl BlobSpec {
    pub fn mean(&self, class: u32) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        if self.dim >= self.num_classes as usize {
            m[class as usize] = self.separation;
        } else {
            let angle = 2.0 * std::f64::consts::PI * class as f64 / self.num_classes as f64;
            m[0] = self.separation * angle.cos();
            if self.dim > 1 {
                m[1] = self.separation * angle.sin();
            }
        }
        m
    }

    pub fn sample(&self, class: u32, rng: &mut ChaCha8Rng) -> Sample {
        let mut features = self.mean(class);
        for f in features.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *f += self.noise * n;
        }
        Sample {
            features,
            label: class,
        }
    }

    /// Draw `count` samples with uniformly random class labels.
    pub fn sample_mixture(&self, count: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let samples = (0..count)
            .map(|_| {
                let class = rng.gen_range(0..self.num_classes);
                self.sample(class, rng)
            })
            .collect();
        Dataset {
            samples,
            num_classes: self.num_classes,
        }
    }

    /// Draw `per_class` samples of every class, in class order.
    pub fn sample_balanced(&self, per_class: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let mut samples = Vec::with_capacity(per_class * self.num_classes as usize);
        for class in 0..self.num_classes {
            for _ in 0..per_class {
                samples.push(self.sample(class, rng));
            }
        }
        Dataset {
            samples,
            num_classes: self.num_classes,
        }
    }
}

const OFL1_MAGIC: &[u8; 4] = b"OFL1";

/// Write a dataset in the flat binary layout: magic `OFL1`, u32 counts
/// (n, d, L), n*d row-major f32 features, n u16 labels. Little-endian.
pub fn write_ofl1(path: &Path, data: &Dataset) -> Result<(), LearnError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(OFL1_MAGIC)?;
    let d = data.dim();
    f.write_all(&(data.len() as u32).to_le_bytes())?;
    f.write_all(&(d as u32).to_le_bytes())?;
    f.write_all(&data.num_classes.to_le_bytes())?;
    for s in &data.samples {
        if s.features.len() != d {
            return Err(LearnError::BadFile("ragged feature rows".into()));
        }
        for x in &s.features {
            f.write_all(&(*x as f32).to_le_bytes())?;
        }
    }
    for s in &data.samples {
        if s.label > u16::MAX as u32 {
            return Err(LearnError::BadFile("label exceeds u16".into()));
        }
        f.write_all(&(s.label as u16).to_le_bytes())?;
    }
    Ok(())
}

/// Read a dataset written by [`write_ofl1`].
pub fn read_ofl1(path: &Path) -> Result<Dataset, LearnError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != OFL1_MAGIC {
        return Err(LearnError::BadFile(format!(
            "bad magic {magic:?}, expected OFL1"
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |f: &mut dyn Read| -> Result<u32, LearnError> {
        f.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let n = read_u32(&mut f)? as usize;
    let d = read_u32(&mut f)? as usize;
    let num_classes = read_u32(&mut f)?;
    let mut features = vec![0.0f64; n * d];
    let mut fbuf = [0u8; 4];
    for x in features.iter_mut() {
        f.read_exact(&mut fbuf)?;
        *x = f32::from_le_bytes(fbuf) as f64;
    }
    let mut samples = Vec::with_capacity(n);
    let mut lbuf = [0u8; 2];
    for i in 0..n {
        f.read_exact(&mut lbuf)?;
        let label = u16::from_le_bytes(lbuf) as u32;
        if label >= num_classes {
            return Err(LearnError::BadFile(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        samples.push(Sample {
            features: features[i * d..(i + 1) * d].to_vec(),
            label,
        });
    }
    Ok(Dataset {
        samples,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn toy_dataset() -> Dataset {
        Dataset {
            samples: vec![
                Sample { features: vec![1.0, 0.0], label: 0 },
                Sample { features: vec![0.9, 0.1], label: 0 },
                Sample { features: vec![0.0, 1.0], label: 1 },
                Sample { features: vec![0.1, 0.9], label: 1 },
                Sample { features: vec![-1.0, 0.0], label: 2 },
            ],
            num_classes: 3,
        }
    }

    fn tc() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 4,
            epochs: 5,
            loss_threshold: 0.1,
            value_bits: 32,
        }
    }

    #[test]
    fn filter_literal_and_balanced() {
        let data = toy_dataset();
        // rho_neg = 0 keeps only target-class samples.
        let f0 = filter(
            &data,
            &FilterPolicy { target_class: 0, negative_ratio: 0.0, rng_seed: 7 },
        )
        .unwrap();
        assert_eq!(f0.len(), 2);
        assert!(f0.samples.iter().all(|s| s.label == 1));

        // rho_neg = 1 adds an equal number of negatives.
        let f1 = filter(
            &data,
            &FilterPolicy { target_class: 0, negative_ratio: 1.0, rng_seed: 7 },
        )
        .unwrap();
        assert_eq!(f1.len(), 4);
        assert_eq!(f1.samples.iter().filter(|s| s.label == 0).count(), 2);

        // No positives is an error.
        assert!(matches!(
            filter(&data, &FilterPolicy { target_class: 9, negative_ratio: 1.0, rng_seed: 7 }),
            Err(LearnError::BadLabel { .. }) | Err(LearnError::EmptyPositives(9))
        ));
    }

    #[test]
    fn filter_with_only_positives_is_identity_up_to_labels() {
        let data = Dataset {
            samples: vec![
                Sample { features: vec![1.0], label: 3 },
                Sample { features: vec![2.0], label: 3 },
            ],
            num_classes: 4,
        };
        let f = filter(
            &data,
            &FilterPolicy { target_class: 3, negative_ratio: 1.0, rng_seed: 1 },
        )
        .unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.samples.iter().all(|s| s.label == 1));
    }

    #[test]
    fn filter_is_deterministic() {
        let mut rng = rng_from_seed(3);
        let data = BlobSpec { dim: 2, num_classes: 5, separation: 3.0, noise: 1.0 }
            .sample_mixture(200, &mut rng);
        let policy = FilterPolicy { target_class: 2, negative_ratio: 1.5, rng_seed: 42 };
        assert_eq!(filter(&data, &policy).unwrap(), filter(&data, &policy).unwrap());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let model = ModelParams::zeros(3, 2, 32);
        let mut tc0 = tc();
        tc0.learning_rate = 0.0;
        let mut flops = 0;
        let out = sgd_epochs(&model, &toy_dataset(), &tc0, TrainMode::Multiclass, 1, &mut flops)
            .unwrap();
        assert_eq!(out.weights, model.weights);
        assert!(flops > 0);
    }

    #[test]
    fn single_binary_step_closed_form() {
        // One positive sample, one step: row - eta * (sigma(z) - 1) * [x; 1].
        let model = ModelParams::zeros(2, 2, 32);
        let data = Dataset {
            samples: vec![Sample { features: vec![2.0, -1.0], label: 1 }],
            num_classes: 2,
        };
        let mut tc1 = tc();
        tc1.epochs = 1;
        tc1.batch_size = 1;
        let mut flops = 0;
        let out = sgd_epochs(&model, &data, &tc1, TrainMode::Binary { row: 1 }, 9, &mut flops)
            .unwrap();
        let err = 0.5 - 1.0; // sigma(0) - t
        assert_relative_eq!(out.weights[(1, 0)], -tc1.learning_rate * err * 2.0);
        assert_relative_eq!(out.weights[(1, 1)], -tc1.learning_rate * err * -1.0);
        assert_relative_eq!(out.weights[(1, 2)], -tc1.learning_rate * err);
        // Row 0 untouched.
        assert!(out.weights.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_mode_touches_only_its_row() {
        let mut rng = rng_from_seed(5);
        let spec = BlobSpec { dim: 3, num_classes: 4, separation: 4.0, noise: 1.0 };
        let data = spec.sample_mixture(80, &mut rng);
        let policy = FilterPolicy { target_class: 2, negative_ratio: 1.0, rng_seed: 8 };
        let filtered = filter(&data, &policy).unwrap();
        let mut start = ModelParams::zeros(4, 3, 32);
        start.weights.mapv_inplace(|_| 0.25);
        let mut flops = 0;
        let out =
            sgd_epochs(&start, &filtered, &tc(), TrainMode::Binary { row: 2 }, 3, &mut flops)
                .unwrap();
        for row in [0usize, 1, 3] {
            assert_eq!(out.weights.row(row), start.weights.row(row));
        }
        assert_ne!(out.weights.row(2), start.weights.row(2));
    }

    #[test]
    fn gradient_check_against_finite_differences() {
        // Central finite differences of the loss are the independent
        // oracle for the analytic gradients.
        let mut rng = rng_from_seed(11);
        let spec = BlobSpec { dim: 3, num_classes: 5, separation: 2.0, noise: 1.0 };
        let data = spec.sample_mixture(12, &mut rng);
        let mut model = ModelParams::zeros(5, 3, 32);
        model.weights.mapv_inplace(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            0.3 * n
        });
        let batch: Vec<&Sample> = data.samples.iter().collect();
        let eps = 1e-5;

        let grad = multiclass_gradient(&model, &batch);
        for l in 0..5 {
            for j in 0..4 {
                let mut plus = model.clone();
                plus.weights[(l, j)] += eps;
                let mut minus = model.clone();
                minus.weights[(l, j)] -= eps;
                let numeric =
                    (multiclass_loss(&plus, &data) - multiclass_loss(&minus, &data)) / (2.0 * eps);
                let denom = numeric.abs().max(grad[(l, j)].abs()).max(1e-8);
                assert!(
                    (numeric - grad[(l, j)]).abs() / denom < 1e-4,
                    "row {l} col {j}: analytic {} vs numeric {numeric}",
                    grad[(l, j)]
                );
            }
        }
    }

    #[test]
    fn sgd_is_deterministic() {
        let mut rng = rng_from_seed(2);
        let spec = BlobSpec { dim: 2, num_classes: 3, separation: 4.0, noise: 1.0 };
        let data = spec.sample_mixture(60, &mut rng);
        let model = ModelParams::zeros(3, 2, 32);
        let mut f1 = 0;
        let mut f2 = 0;
        let a = sgd_epochs(&model, &data, &tc(), TrainMode::Multiclass, 77, &mut f1).unwrap();
        let b = sgd_epochs(&model, &data, &tc(), TrainMode::Multiclass, 77, &mut f2).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(f1, f2);
    }

    #[test]
    fn task_assignment_branches() {
        let sats: Vec<SatelliteId> =
            (0..3).map(|slot| SatelliteId { orbit: 0, slot }).collect();

        // L = 1: exactly one satellite tasked, the one with most compute.
        let t = assign_tasks(&sats, 1, &[0.2, 0.9, 0.5]);
        assert_eq!(t[&sats[1]], vec![0]);
        assert!(t[&sats[0]].is_empty() && t[&sats[2]].is_empty());

        // L = I_n with uniform resources: bijection in id order.
        let t = assign_tasks(&sats, 3, &[1.0, 1.0, 1.0]);
        for (i, sat) in sats.iter().enumerate() {
            assert_eq!(t[sat], vec![i as u32]);
        }

        // L = 7 over 3 satellites: round-robin groups of size 3/2/2.
        let t = assign_tasks(&sats, 7, &[1.0, 1.0, 1.0]);
        assert_eq!(t[&sats[0]], vec![0, 3, 6]);
        assert_eq!(t[&sats[1]], vec![1, 4]);
        assert_eq!(t[&sats[2]], vec![2, 5]);
    }

    #[test]
    fn aggregate_examples() {
        let mut a = ModelParams::zeros(2, 1, 32);
        a.weights.mapv_inplace(|_| 1.0);
        let mut b = ModelParams::zeros(2, 1, 32);
        b.weights.mapv_inplace(|_| 5.0);

        let single = aggregate(&[(&a, 3.0)]).unwrap();
        assert_eq!(single.weights, a.weights);

        let same = aggregate(&[(&a, 1.0), (&a, 9.0)]).unwrap();
        assert_eq!(same.weights, a.weights);

        let mixed = aggregate(&[(&a, 1.0), (&b, 3.0)]).unwrap();
        assert!(mixed.weights.iter().all(|&v| (v - 4.0).abs() < 1e-12));

        let bad = ModelParams::zeros(3, 1, 32);
        assert!(matches!(
            aggregate(&[(&a, 1.0), (&bad, 1.0)]),
            Err(LearnError::ShapeMismatch(..))
        ));
        assert!(matches!(aggregate(&[(&a, 0.0)]), Err(LearnError::ZeroWeight)));
    }

    #[test]
    fn evaluate_metrics() {
        // A perfect classifier for the toy dataset.
        let mut model = ModelParams::zeros(3, 2, 32);
        model.weights[(0, 0)] = 10.0;
        model.weights[(1, 1)] = 10.0;
        model.weights[(2, 0)] = -10.0;
        let data = toy_dataset();
        let m = evaluate(&model, &data);
        assert_relative_eq!(m.accuracy, 1.0);
        for c in &m.per_class {
            assert_relative_eq!(c.f1, 1.0);
        }
        // Trace of the confusion matrix over total equals accuracy.
        let trace: u64 = (0..3).map(|c| m.confusion[c][c]).sum();
        assert_relative_eq!(trace as f64 / data.len() as f64, m.accuracy);
        // Rows sum to per-class counts.
        assert_eq!(m.confusion[0].iter().sum::<u64>(), 2);
        assert_eq!(m.confusion[2].iter().sum::<u64>(), 1);
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let mut model = ModelParams::zeros(10, 2, 32);
        model.weights[(3, 2)] = 1.0; // bias makes class 3 always win
        let mut rng = rng_from_seed(4);
        let spec = BlobSpec { dim: 2, num_classes: 10, separation: 5.0, noise: 1.0 };
        let test = spec.sample_balanced(30, &mut rng);
        let m = evaluate(&model, &test);
        assert_relative_eq!(m.accuracy, 0.1);
    }

    #[test]
    fn flops_scaling() {
        let model = ModelParams::zeros(5, 4, 32);
        let mut t1 = tc();
        t1.epochs = 3;
        let mut t2 = tc();
        t2.epochs = 6;
        assert_eq!(flops_estimate(&model, 100, &t2), 2 * flops_estimate(&model, 100, &t1));
        assert_eq!(flops_estimate(&model, 0, &t1), 0);
    }

    #[test]
    fn convergence_check() {
        let mut rng = rng_from_seed(6);
        let spec = BlobSpec { dim: 2, num_classes: 2, separation: 6.0, noise: 0.5 };
        let mixture = spec.sample_balanced(10, &mut rng);
        let filtered = filter(
            &mixture,
            &FilterPolicy { target_class: 1, negative_ratio: 1.0, rng_seed: 5 },
        )
        .unwrap();

        // Untrained model on separable data: loss is ln(2), not < 0.1.
        let zero = ModelParams::zeros(2, 2, 32);
        assert!(!check_local_convergence(&zero, 1, &filtered, 0.1));
        // A huge tau always passes.
        assert!(check_local_convergence(&zero, 1, &filtered, 1e9));

        // Train to convergence: loss drops below tau.
        let mut tc_fit = tc();
        tc_fit.learning_rate = 0.5;
        tc_fit.epochs = 200;
        let mut flops = 0;
        let fit = sgd_epochs(&zero, &filtered, &tc_fit, TrainMode::Binary { row: 1 }, 1, &mut flops)
            .unwrap();
        assert!(binary_loss(&fit, 1, &filtered) < 1e-1);
        assert!(check_local_convergence(&fit, 1, &filtered, 0.1));
    }

    #[test]
    fn ofl1_round_trip() {
        let mut rng = rng_from_seed(9);
        let spec = BlobSpec { dim: 3, num_classes: 4, separation: 2.0, noise: 1.0 };
        let data = spec.sample_mixture(50, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ofl1");
        write_ofl1(&path, &data).unwrap();
        let back = read_ofl1(&path).unwrap();
        assert_eq!(back.len(), data.len());
        assert_eq!(back.num_classes, 4);
        for (a, b) in data.samples.iter().zip(&back.samples) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.features.iter().zip(&b.features) {
                assert!((x - y).abs() < 1e-6); // f32 storage
            }
        }
    }

    #[test]
    fn ofl1_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(read_ofl1(&path), Err(LearnError::BadFile(_))));
    }

    proptest! {
        #[test]
        fn aggregation_affine_invariance(shift in -5.0f64..5.0, w1 in 0.1f64..10.0, w2 in 0.1f64..10.0) {
            let mut rng = rng_from_seed(10);
            let mut a = ModelParams::zeros(3, 2, 32);
            a.weights.mapv_inplace(|_| StandardNormal.sample(&mut rng));
            let mut b = ModelParams::zeros(3, 2, 32);
            b.weights.mapv_inplace(|_| StandardNormal.sample(&mut rng));

            let base = aggregate(&[(&a, w1), (&b, w2)]).unwrap();

            let mut a_shift = a.clone();
            a_shift.weights.mapv_inplace(|v| v + shift);
            let mut b_shift = b.clone();
            b_shift.weights.mapv_inplace(|v| v + shift);
            let shifted = aggregate(&[(&a_shift, w1), (&b_shift, w2)]).unwrap();

            for (x, y) in base.weights.iter().zip(shifted.weights.iter()) {
                prop_assert!((x + shift - y).abs() < 1e-9);
            }

            // Scaling all weights by a positive factor changes nothing.
            let scaled = aggregate(&[(&a, 7.3 * w1), (&b, 7.3 * w2)]).unwrap();
            for (x, y) in base.weights.iter().zip(scaled.weights.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
