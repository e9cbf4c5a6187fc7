//! Inverse dynamics models `f_h(a | x, x')` and their learners.
//!
//! Three interchangeable implementations fit the same interface:
//!
//! * [`fit`] — a from-scratch feedforward classifier (MLP or conv) trained by
//!   mini-batch Adam on the empirical negative log-likelihood with early
//!   stopping on a held-out split;
//! * [`fit_tabular`] — the exact empirical conditional given a discretization
//!   key, i.e. the ERM over the tabular function class;
//! * [`bayes_optimal`] — the realizable target itself, computed from the
//!   latent transitions and a perfect decoder (test/oracle use).

use crate::error::{Error, Result};
use crate::mdp::EpisodicMdp;
use crate::nn::{clip_global_norm, Adam, Arch, Network};
use crate::rng::Rng;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

/// Transition triples `(x_h, a_h, x_{h+1})` gathered at one step.
#[derive(Debug, Clone)]
pub struct TransitionDataset {
    pub step: usize,
    pub obs_dim: usize,
    pub num_actions: usize,
    pub triples: Vec<(Vec<f64>, usize, Vec<f64>)>,
}

impl TransitionDataset {
    pub fn new(step: usize, obs_dim: usize, num_actions: usize) -> Self {
        TransitionDataset {
            step,
            obs_dim,
            num_actions,
            triples: Vec::new(),
        }
    }

    pub fn push(&mut self, x: Vec<f64>, a: usize, x2: Vec<f64>) {
        debug_assert_eq!(x.len(), self.obs_dim);
        debug_assert_eq!(x2.len(), self.obs_dim);
        debug_assert!(a < self.num_actions);
        self.triples.push((x, a, x2));
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Convolutional front-end configuration (channel/kernel/stride per layer).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvConfig {
    pub side: usize,
    /// Pass-through features trailing each observation's pixel grid.
    pub tail: usize,
    pub conv1: (usize, usize, usize),
    pub conv2: (usize, usize, usize),
}

impl ConvConfig {
    pub fn minigrid_default(side: usize, tail: usize) -> Self {
        ConvConfig {
            side,
            tail,
            conv1: (16, 8, 4),
            conv2: (32, 4, 2),
        }
    }
}

/// Training configuration for the feedforward classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gradient_clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub warm_start: bool,
    #[serde(default)]
    pub conv: Option<ConvConfig>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden_sizes: vec![56, 56],
            learning_rate: 3e-4,
            batch_size: 32,
            gradient_clip_norm: 0.25,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.2,
            warm_start: true,
            conv: None,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.gradient_clip_norm > 0.0
            && self.max_epochs > 0
            && self.patience > 0;
        if !positive {
            return Err(Error::InvalidConfig(
                "classifier hyperparameters must be positive".into(),
            ));
        }
        if !(0.0 < self.validation_fraction && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "validation_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn arch(&self, obs_dim: usize, num_actions: usize) -> Arch {
        match &self.conv {
            None => {
                let mut sizes = vec![2 * obs_dim];
                sizes.extend(&self.hidden_sizes);
                sizes.push(num_actions);
                Arch::Mlp { sizes }
            }
            Some(c) => Arch::Conv {
                side: c.side,
                channels: 2,
                tail: 2 * c.tail,
                conv1: c.conv1,
                conv2: c.conv2,
                classes: num_actions,
            },
        }
    }
}

/// How a pair `(x, x')` is packed into a network input vector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum PairLayout {
    /// `[x, x']`.
    Concat,
    /// `[pixels(x), pixels(x'), tail(x), tail(x')]` for the conv front-end.
    ConvPair { side: usize, tail: usize },
}

impl PairLayout {
    pub fn encode(&self, x: &[f64], x2: &[f64]) -> Vec<f64> {
        match self {
            PairLayout::Concat => {
                let mut v = Vec::with_capacity(x.len() + x2.len());
                v.extend_from_slice(x);
                v.extend_from_slice(x2);
                v
            }
            PairLayout::ConvPair { side, tail } => {
                let grid = side * side;
                debug_assert_eq!(x.len(), grid + tail);
                let mut v = Vec::with_capacity(2 * (grid + tail));
                v.extend_from_slice(&x[..grid]);
                v.extend_from_slice(&x2[..grid]);
                v.extend_from_slice(&x[grid..]);
                v.extend_from_slice(&x2[grid..]);
                v
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TrainDiagnostics {
    pub learner: String,
    pub final_nll: f64,
    pub epochs: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

#[derive(Clone)]
enum ModelImpl {
    Net {
        net: Network,
        layout: PairLayout,
    },
    Tabular {
        key: Arc<dyn Fn(&[f64]) -> u64 + Send + Sync>,
        counts: BTreeMap<(u64, u64), Vec<f64>>,
        laplace: f64,
        num_actions: usize,
    },
    Bayes {
        latent: Arc<EpisodicMdp>,
        decoder: Arc<dyn Fn(&[f64]) -> usize + Send + Sync>,
        step: usize,
    },
}

/// A fitted conditional distribution over actions given an observation pair.
#[derive(Clone)]
pub struct InverseDynamicsModel {
    inner: ModelImpl,
    pub diagnostics: TrainDiagnostics,
}

impl InverseDynamicsModel {
    /// Probability vector over actions; nonnegative, sums to one.
    pub fn predict(&self, x: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        match &self.inner {
            ModelImpl::Net { net, layout } => Ok(net.predict(&layout.encode(x, x2))),
            ModelImpl::Tabular {
                key,
                counts,
                laplace,
                num_actions,
            } => {
                let pair = (key(x), key(x2));
                let mut row = match counts.get(&pair) {
                    Some(c) => c.iter().map(|v| v + laplace).collect(),
                    // Unseen pair: all-laplace row, i.e. uniform.
                    None => vec![laplace.max(0.0); *num_actions],
                };
                let total: f64 = row.iter().sum();
                if total <= 0.0 {
                    row = vec![1.0 / *num_actions as f64; *num_actions];
                } else {
                    row.iter_mut().for_each(|v| *v /= total);
                }
                Ok(row)
            }
            ModelImpl::Bayes {
                latent,
                decoder,
                step,
            } => {
                let s = decoder(x);
                let s2 = decoder(x2);
                let na = latent.num_actions();
                let mut row: Vec<f64> = (0..na)
                    .map(|a| latent.transition_prob(*step, s, a, s2))
                    .collect();
                let total: f64 = row.iter().sum();
                if total <= 0.0 {
                    return Err(Error::UnreachablePair { from: s, to: s2 });
                }
                row.iter_mut().for_each(|v| *v /= total);
                Ok(row)
            }
        }
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.inner {
            ModelImpl::Net { net, .. } => Some(net),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match &self.inner {
            ModelImpl::Net { net, layout } => {
                let file = ModelFile {
                    arch: net.arch().clone(),
                    layout: *layout,
                    params: net.params(),
                    diagnostics: self.diagnostics.clone(),
                };
                let text = serde_json::to_string(&file)?;
                std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
            }
            _ => Err(Error::Unsupported(
                "only feedforward models serialize to files".into(),
            )),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        let mut seed = crate::rng::from_seed(0);
        let mut net = Network::new(file.arch, &mut seed);
        net.set_params(&file.params);
        Ok(InverseDynamicsModel {
            inner: ModelImpl::Net {
                net,
                layout: file.layout,
            },
            diagnostics: file.diagnostics,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    arch: Arch,
    layout: PairLayout,
    params: Vec<f64>,
    diagnostics: TrainDiagnostics,
}

/// Highest-probability action, lowest index on ties.
pub fn argmax_action(model: &InverseDynamicsModel, x: &[f64], x2: &[f64]) -> Result<usize> {
    let probs = model.predict(x, x2)?;
    let mut best = 0;
    for (a, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = a;
        }
    }
    Ok(best)
}

/// Empirical log-likelihood maximization with the feedforward classifier.
///
/// Splits off a held-out fraction (stratified by action when every class has
/// at least two samples), trains with Adam and global gradient-norm
/// clipping, and stops early when the held-out NLL has not improved for
/// `patience` epochs, restoring the best parameters seen.
pub fn fit(
    dataset: &TransitionDataset,
    config: &ClassifierConfig,
    rng: &mut Rng,
) -> Result<InverseDynamicsModel> {
    fit_warm(dataset, config, None, rng)
}

/// [`fit`] with optional warm-start parameters from a previously fitted
/// model of the same architecture.
pub fn fit_warm(
    dataset: &TransitionDataset,
    config: &ClassifierConfig,
    warm_from: Option<&InverseDynamicsModel>,
    rng: &mut Rng,
) -> Result<InverseDynamicsModel> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let arch = config.arch(dataset.obs_dim, dataset.num_actions);
    let layout = match &config.conv {
        None => PairLayout::Concat,
        Some(c) => PairLayout::ConvPair {
            side: c.side,
            tail: c.tail,
        },
    };
    let mut net = Network::new(arch.clone(), rng);
    if config.warm_start {
        if let Some(prev) = warm_from.and_then(|m| m.network()) {
            if prev.arch() == &arch {
                net.set_params(&prev.params());
            }
        }
    }

    let n = dataset.len();
    let dim = net.input_dim();
    let mut inputs = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (i, (x, a, x2)) in dataset.triples.iter().enumerate() {
        let row = layout.encode(x, x2);
        for (j, v) in row.iter().enumerate() {
            inputs[(i, j)] = *v;
        }
        labels.push(*a);
    }

    let (train_idx, val_idx) = split_indices(&labels, dataset.num_actions, config, rng);
    let take = |idx: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((idx.len(), dim));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&inputs.row(i));
            y.push(labels[i]);
        }
        (x, y)
    };
    let (train_x, train_y) = take(&train_idx);
    let (val_x, val_y) = take(&val_idx);
    let use_validation = !val_idx.is_empty();

    let mut params = net.params();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut best_params = params.clone();
    let mut best_nll = if use_validation {
        net.nll(&val_x, &val_y)
    } else {
        f64::INFINITY
    };
    let mut epochs_since_best = 0;
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..train_idx.len()).collect();

    for epoch in 0..config.max_epochs {
        epochs_run = epoch + 1;
        order.shuffle(rng);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut bx = Array2::zeros((chunk.len(), dim));
            let mut by = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                bx.row_mut(r).assign(&train_x.row(i));
                by.push(train_y[i]);
            }
            let (loss, mut grads) = net.loss_and_grad(&bx, &by);
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            clip_global_norm(&mut grads, config.gradient_clip_norm);
            adam.step(&mut params, &grads);
            net.set_params(&params);
        }
        if use_validation {
            let val_nll = net.nll(&val_x, &val_y);
            if val_nll < best_nll {
                best_nll = val_nll;
                best_params = params.clone();
                epochs_since_best = 0;
            } else {
                epochs_since_best += 1;
                if epochs_since_best >= config.patience {
                    break;
                }
            }
        }
    }
    if use_validation {
        net.set_params(&best_params);
    } else {
        best_nll = net.nll(&train_x, &train_y);
    }

    Ok(InverseDynamicsModel {
        inner: ModelImpl::Net { net, layout },
        diagnostics: TrainDiagnostics {
            learner: "neural".into(),
            final_nll: best_nll,
            epochs: epochs_run,
            train_samples: train_idx.len(),
            val_samples: val_idx.len(),
        },
    })
}

/// Seeded train/validation split, stratified by action when possible.
fn split_indices(
    labels: &[usize],
    num_actions: usize,
    config: &ClassifierConfig,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    if n < 2 {
        return ((0..n).collect(), Vec::new());
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_actions];
    for (i, &a) in labels.iter().enumerate() {
        by_class[a].push(i);
    }
    let stratifiable = by_class.iter().all(|c| c.is_empty() || c.len() >= 2);
    let mut train = Vec::new();
    let mut val = Vec::new();
    if stratifiable {
        for class in by_class.iter_mut() {
            class.shuffle(rng);
            let n_val = ((class.len() as f64) * config.validation_fraction).floor() as usize;
            val.extend_from_slice(&class[..n_val]);
            train.extend_from_slice(&class[n_val..]);
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let n_val = ((n as f64) * config.validation_fraction).floor() as usize;
        val.extend_from_slice(&order[..n_val]);
        train.extend_from_slice(&order[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    if train.is_empty() {
        // Degenerate fractions: keep everything for training.
        return ((0..n).collect(), Vec::new());
    }
    (train, val)
}

/// Exact empirical conditional over a discretization key:
/// `predict(x, x') = (count(key x, key x', a) + laplace) / sum_a (...)`.
pub fn fit_tabular(
    dataset: &TransitionDataset,
    key: Arc<dyn Fn(&[f64]) -> u64 + Send + Sync>,
    laplace: f64,
) -> InverseDynamicsModel {
    let mut counts: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
    for (x, a, x2) in &dataset.triples {
        let entry = counts
            .entry((key(x), key(x2)))
            .or_insert_with(|| vec![0.0; dataset.num_actions]);
        entry[*a] += 1.0;
    }
    InverseDynamicsModel {
        inner: ModelImpl::Tabular {
            key,
            counts,
            laplace,
            num_actions: dataset.num_actions,
        },
        diagnostics: TrainDiagnostics {
            learner: "tabular".into(),
            final_nll: f64::NAN,
            epochs: 0,
            train_samples: dataset.len(),
            val_samples: 0,
        },
    }
}

/// The posterior action distribution of a uniform-action transition at step
/// `h`: `f*(a | x, x') = T_h(dec x' | dec x, a) / sum_a' T_h(dec x' | dec x, a')`.
///
/// Independent of the roll-in distribution over `x`; defined only for pairs
/// reachable by some action.
pub fn bayes_optimal(
    latent: Arc<EpisodicMdp>,
    decoder: Arc<dyn Fn(&[f64]) -> usize + Send + Sync>,
    step: usize,
) -> InverseDynamicsModel {
    InverseDynamicsModel {
        inner: ModelImpl::Bayes {
            latent,
            decoder,
            step,
        },
        diagnostics: TrainDiagnostics {
            learner: "bayes-optimal".into(),
            final_nll: f64::NAN,
            epochs: 0,
            train_samples: 0,
            val_samples: 0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn key_first_coord() -> Arc<dyn Fn(&[f64]) -> u64 + Send + Sync> {
        Arc::new(|x: &[f64]| x[0].round() as u64)
    }

    #[test]
    fn tabular_single_triple_is_a_point_mass() {
        let mut d = TransitionDataset::new(0, 1, 2);
        d.push(vec![1.0], 1, vec![2.0]);
        let model = fit_tabular(&d, key_first_coord(), 0.0);
        let p = model.predict(&[1.0], &[2.0]).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn tabular_reproduces_empirical_frequencies() {
        let mut d = TransitionDataset::new(0, 1, 2);
        for _ in 0..3 {
            d.push(vec![1.0], 0, vec![2.0]);
        }
        d.push(vec![1.0], 1, vec![2.0]);
        let model = fit_tabular(&d, key_first_coord(), 0.0);
        let p = model.predict(&[1.0], &[2.0]).unwrap();
        assert_eq!(p, vec![0.75, 0.25]);
    }

    #[test]
    fn tabular_large_laplace_approaches_uniform() {
        let mut d = TransitionDataset::new(0, 1, 2);
        for _ in 0..10 {
            d.push(vec![1.0], 0, vec![2.0]);
        }
        let model = fit_tabular(&d, key_first_coord(), 1e9);
        let p = model.predict(&[1.0], &[2.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6);
        assert!((p[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bayes_optimal_matches_transition_ratio() {
        // 2 actions: a0 reaches state 1 w.p. 0.9, a1 w.p. 0.1.
        let m = EpisodicMdp::from_dense(
            1,
            0,
            &[vec![
                vec![vec![0.1, 0.9], vec![0.9, 0.1]],
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            ]],
            &[vec![vec![0.0, 0.0], vec![0.0, 0.0]]],
            (0.0, 1.0),
        )
        .unwrap();
        let decoder: Arc<dyn Fn(&[f64]) -> usize + Send + Sync> =
            Arc::new(|x: &[f64]| x[0] as usize);
        let model = bayes_optimal(Arc::new(m), decoder, 0);
        let p = model.predict(&[0.0], &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bayes_optimal_flags_unreachable_pairs() {
        let m = EpisodicMdp::from_dense(
            1,
            0,
            &[vec![
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ]],
            &[vec![vec![0.0, 0.0], vec![0.0, 0.0]]],
            (0.0, 1.0),
        )
        .unwrap();
        let decoder: Arc<dyn Fn(&[f64]) -> usize + Send + Sync> =
            Arc::new(|x: &[f64]| x[0] as usize);
        let model = bayes_optimal(Arc::new(m), decoder, 0);
        assert!(matches!(
            model.predict(&[0.0], &[1.0]),
            Err(Error::UnreachablePair { from: 0, to: 1 })
        ));
    }

    #[test]
    fn argmax_breaks_ties_to_lowest_index() {
        let mut d = TransitionDataset::new(0, 1, 3);
        d.push(vec![1.0], 1, vec![2.0]);
        d.push(vec![1.0], 2, vec![2.0]);
        let model = fit_tabular(&d, key_first_coord(), 0.0);
        assert_eq!(argmax_action(&model, &[1.0], &[2.0]).unwrap(), 1);
    }

    #[test]
    fn neural_fit_learns_a_separable_rule() {
        // Action is a deterministic function of the first input coordinate.
        let mut d = TransitionDataset::new(0, 2, 2);
        let mut r = rng::from_seed(21);
        use rand::Rng as _;
        for _ in 0..2000 {
            let v: f64 = r.gen_range(-1.0..1.0);
            let noise: f64 = r.gen_range(-1.0..1.0);
            let a = usize::from(v > 0.0);
            d.push(vec![v, noise], a, vec![noise, v]);
        }
        let config = ClassifierConfig {
            max_epochs: 40,
            learning_rate: 3e-3,
            ..ClassifierConfig::default()
        };
        let model = fit(&d, &config, &mut r).unwrap();
        let mut correct = 0;
        let mut total = 0;
        let mut check = rng::from_seed(22);
        for _ in 0..500 {
            let v: f64 = check.gen_range(-1.0..1.0);
            if v.abs() < 0.05 {
                continue;
            }
            let a = argmax_action(&model, &[v, 0.3], &[0.3, v]).unwrap();
            correct += usize::from(a == usize::from(v > 0.0));
            total += 1;
        }
        assert!(
            correct as f64 >= 0.99 * total as f64,
            "held-out accuracy {correct}/{total}"
        );
    }

    #[test]
    fn neural_fit_on_single_class_concentrates() {
        let mut d = TransitionDataset::new(0, 1, 2);
        let mut r = rng::from_seed(23);
        use rand::Rng as _;
        for _ in 0..200 {
            let v: f64 = r.gen_range(-1.0..1.0);
            d.push(vec![v], 0, vec![v]);
        }
        let config = ClassifierConfig {
            max_epochs: 100,
            learning_rate: 1e-2,
            ..ClassifierConfig::default()
        };
        let model = fit(&d, &config, &mut r).unwrap();
        for (x, _, x2) in d.triples.iter().take(20) {
            let p = model.predict(x, x2).unwrap();
            assert!(p[0] >= 0.95, "p(class 0) = {}", p[0]);
        }
    }

    #[test]
    fn fit_is_deterministic_given_seed() {
        let mut d = TransitionDataset::new(0, 2, 2);
        let mut r = rng::from_seed(24);
        use rand::Rng as _;
        for _ in 0..64 {
            let v: f64 = r.gen_range(-1.0..1.0);
            d.push(vec![v, -v], usize::from(v > 0.0), vec![-v, v]);
        }
        let config = ClassifierConfig {
            max_epochs: 5,
            ..ClassifierConfig::default()
        };
        let m1 = fit(&d, &config, &mut rng::from_seed(7)).unwrap();
        let m2 = fit(&d, &config, &mut rng::from_seed(7)).unwrap();
        assert_eq!(m1.network().unwrap().params(), m2.network().unwrap().params());
    }

    #[test]
    fn rejects_empty_dataset() {
        let d = TransitionDataset::new(0, 2, 2);
        assert!(matches!(
            fit(&d, &ClassifierConfig::default(), &mut rng::from_seed(0)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn model_file_round_trip_preserves_predictions() {
        let mut d = TransitionDataset::new(0, 2, 3);
        let mut r = rng::from_seed(25);
        use rand::Rng as _;
        for _ in 0..30 {
            let v: f64 = r.gen_range(-1.0..1.0);
            d.push(vec![v, 1.0], (v > 0.0) as usize, vec![1.0, v]);
        }
        let config = ClassifierConfig {
            max_epochs: 3,
            ..ClassifierConfig::default()
        };
        let model = fit(&d, &config, &mut r).unwrap();
        let dir = std::env::temp_dir().join("tasid-model-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        model.save(&path).unwrap();
        let loaded = InverseDynamicsModel::load(&path).unwrap();
        let p1 = model.predict(&[0.4, 1.0], &[1.0, 0.4]).unwrap();
        let p2 = loaded.predict(&[0.4, 1.0], &[1.0, 0.4]).unwrap();
        assert_eq!(p1, p2);
        std::fs::remove_file(&path).ok();
    }
}
