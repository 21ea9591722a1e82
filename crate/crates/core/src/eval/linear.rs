//! Softmax regression on frozen embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{accuracy, macro_f1};
use crate::numeric::{AdamConfig, AdamState, Linear, Mode, ParamStore, Session, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Stop after this many epochs without a better validation loss (0 disables).
    pub patience: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 100,
            batch_size: 128,
            // ten times the pretraining rate: small labelled sets give few steps
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            patience: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub mf1: f64,
}

impl Scores {
    pub fn of(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Self> {
        Ok(Scores {
            acc: accuracy(y_true, y_pred)?,
            mf1: macro_f1(y_true, y_pred, classes)?,
        })
    }
}

/// Labelled embedding matrix `[n × d]`.
#[derive(Clone, Copy)]
pub struct Split<'a> {
    pub x: &'a Tensor,
    pub y: &'a [usize],
}

/// Column mean and standard deviation (unit where constant).
fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n as f64;
        }
    }
    let mut sd = vec![0.0; d];
    for r in 0..n {
        for ((s, v), m) in sd.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    for s in &mut sd {
        *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
    }
    (mean, sd)
}

fn rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let d = x.shape()[1];
    let data = idx.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
    Tensor::new(vec![idx.len(), d], data).expect("row gather")
}

/// Affine softmax classifier over standardized features.
#[derive(Clone, Debug)]
pub struct LinearClassifier {
    store: ParamStore,
    layer: Linear,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.shape()[0])
        .map(|r| {
            let row = logits.row(r);
            (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
        })
        .collect()
}

pub fn require_classes(y: &[usize]) -> Result<()> {
    let first = y.first().copied();
    if y.iter().all(|&v| Some(v) == first) {
        return Err(Error::InvalidArgument(
            "classifier training set holds a single class".into(),
        ));
    }
    Ok(())
}

impl LinearClassifier {
    /// Trains on `train`, keeping the parameters with the lowest loss on
    /// `valid` when given. Features are standardized with training statistics.
    pub fn fit(
        train: Split<'_>,
        valid: Option<Split<'_>>,
        classes: usize,
        cfg: &ClassifierConfig,
        seed: u64,
    ) -> Result<Self> {
        require_classes(train.y)?;
        if train.x.shape().len() != 2 || train.x.shape()[0] != train.y.len() {
            return Err(Error::shape(
                "linear_eval",
                format!("{:?} embeddings for {} labels", train.x.shape(), train.y.len()),
            ));
        }
        if cfg.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let d = train.x.shape()[1];
        let (mean, sd) = column_stats(train.x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "classifier", d, classes, &mut rng);
        let mut model = LinearClassifier { store, layer, mean, sd };
        let xt = model.standardized(train.x)?;
        let xv = match valid {
            Some(v) => Some((model.standardized(v.x)?, v.y)),
            None => None,
        };

        let mut adam = AdamState::new(&model.store, cfg.optimizer.clone());
        let mut best: Option<(f64, ParamStore)> = None;
        let mut since_best = 0;
        let mut order: Vec<usize> = (0..train.y.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let xb = rows(&xt, chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| train.y[i]).collect();
                let mut s = Session::new(&mut model.store, Mode::Train);
                let x = s.graph.constant(xb);
                let z = model.layer.forward(&mut s, x)?;
                let l = s.graph.softmax_cross_entropy(z, &yb)?;
                let g = s.graph.backward(l)?;
                let grads = s.param_grads(&g);
                adam.apply(&mut model.store, &grads)?;
            }
            if let Some((x, y)) = &xv {
                let l = model.loss(x, y)?;
                if best.as_ref().is_none_or(|(b, _)| l < *b) {
                    best = Some((l, model.store.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if cfg.patience > 0 && since_best >= cfg.patience {
                        break;
                    }
                }
            }
        }
        if let Some((_, store)) = best {
            model.store = store;
        }
        Ok(model)
    }

    fn standardized(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.shape().len() != 2 || x.shape()[1] != d {
            return Err(Error::shape(
                "linear_eval",
                format!("width {:?}, expected {d}", x.shape()),
            ));
        }
        Ok(Tensor::from_fn(x.shape(), |k| {
            (x.data()[k] - self.mean[k % d]) / self.sd[k % d]
        }))
    }

    /// Logits on already standardized rows.
    fn raw_logits(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&mut self.store, Mode::Eval).frozen();
        let xv = s.graph.constant(x.clone());
        let y = self.layer.forward(&mut s, xv)?;
        Ok(s.graph.value(y).clone())
    }

    fn loss(&mut self, x: &Tensor, y: &[usize]) -> Result<f64> {
        let mut s = Session::new(&mut self.store, Mode::Eval).frozen();
        let xv = s.graph.constant(x.clone());
        let z = self.layer.forward(&mut s, xv)?;
        let l = s.graph.softmax_cross_entropy(z, y)?;
        Ok(s.graph.value(l).data()[0])
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        let xs = self.standardized(x)?;
        Ok(argmax_rows(&self.raw_logits(&xs)?))
    }

    pub fn score(&mut self, test: Split<'_>, classes: usize) -> Result<Scores> {
        let preds = self.predict(test.x)?;
        Scores::of(test.y, &preds, classes)
    }
}

/// Fits on `train` (early-stopping on `valid` when given) and scores `test`.
pub fn linear_eval(
    train: Split<'_>,
    valid: Option<Split<'_>>,
    test: Split<'_>,
    classes: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Scores> {
    LinearClassifier::fit(train, valid, classes, cfg, seed)?.score(test, classes)
}
