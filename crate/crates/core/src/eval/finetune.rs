//! End-to-end training of encoder plus classifier on a labelled fraction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_subset, Fold, TimeSeriesDataset};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::embed::{check_compatible, EmbedMode};
use crate::eval::linear::{argmax_rows, require_classes, ClassifierConfig, Scores};
use crate::features::batch;
use crate::numeric::{AdamState, Linear, Mode, ParamStore, Session, Tensor, Var};
use crate::ssl::twin::build_encoder;
use crate::ssl::TwinNetworks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Share of each class of the training split that keeps its label.
    pub fraction: f64,
    pub train: ClassifierConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            fraction: 0.1,
            train: ClassifierConfig::default(),
        }
    }
}

struct Net {
    encoder: Encoder,
    head: Linear,
    mode: EmbedMode,
}

impl Net {
    fn logits(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let feats = self.encoder.forward(s, x)?;
        let z = match self.mode {
            EmbedMode::Finest => feats.r[0],
            EmbedMode::Concat => s.graph.concat_cols(&feats.r)?,
        };
        self.head.forward(s, z)
    }
}

struct Model {
    store: ParamStore,
    net: Net,
}

impl Model {
    fn eval_logits(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&mut self.store, Mode::Eval).frozen();
        let xv = s.graph.constant(x.clone());
        let z = self.net.logits(&mut s, xv)?;
        Ok(s.graph.value(z).clone())
    }
}

/// Copies the online encoder of `twin` into a fresh store and appends a classifier.
fn build_model(twin: &TwinNetworks, classes: usize, mode: EmbedMode, rng: &mut ChaCha8Rng) -> Result<Model> {
    let mut store = ParamStore::new();
    let encoder = build_encoder(&mut store, &twin.arch, rng)?;
    let on = &twin.online;
    store.load_named(
        on.params()
            .iter()
            .chain(on.buffers())
            .filter(|p| p.name.starts_with("enc."))
            .map(|p| (p.name.as_str(), &p.tensor)),
    )?;
    let d = twin.arch.encoder.embedding_width(mode == EmbedMode::Concat);
    let head = Linear::new(&mut store, "classifier", d, classes, rng);
    Ok(Model {
        store,
        net: Net { encoder, head, mode },
    })
}

fn stack(inputs: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    batch(&idx.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())
}

/// Fine-tunes a copy of `twin`'s encoder on `cfg.fraction` of `fold.train`,
/// keeps the epoch with the lowest validation loss and scores `fold.test`.
/// Pass an untrained twin for the supervised-from-scratch baseline.
pub fn finetune(
    twin: &TwinNetworks,
    data: &TimeSeriesDataset,
    fold: &Fold,
    cfg: &FinetuneConfig,
    mode: EmbedMode,
    seed: u64,
) -> Result<Scores> {
    check_compatible(&twin.arch, data)?;
    let classes = data.num_classes();
    let labeled = stratified_subset(data.labels(), &fold.train, classes, cfg.fraction, seed)?;
    let y: Vec<usize> = labeled.iter().map(|&i| data.labels()[i]).collect();
    require_classes(&y)?;
    if labeled.len() < 2 {
        return Err(Error::InvalidArgument(
            "fine-tuning needs at least 2 labelled samples".into(),
        ));
    }
    let feat = twin.arch.featurizer()?;
    let xs = feat.inputs(data, &labeled)?;
    let valid_x = feat.inputs(data, &fold.valid)?;
    let valid_y: Vec<usize> = fold.valid.iter().map(|&i| data.labels()[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_model(twin, classes, mode, &mut rng)?;
    let mut adam = AdamState::new(&model.store, cfg.train.optimizer.clone());
    let bs = cfg.train.batch_size.max(2);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    for _ in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = stack(&xs, chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let drop_rng = ChaCha8Rng::from_rng(&mut rng).expect("chacha seeding");
            let grads = {
                let mut s = Session::new(&mut model.store, Mode::Train).with_dropout_rng(drop_rng);
                let x = s.graph.constant(xb);
                let z = model.net.logits(&mut s, x)?;
                let l = s.graph.softmax_cross_entropy(z, &yb)?;
                let g = s.graph.backward(l)?;
                s.param_grads(&g)
            };
            adam.apply(&mut model.store, &grads)?;
        }
        if !fold.valid.is_empty() {
            let l = validation_loss(&mut model, &valid_x, &valid_y)?;
            if best.as_ref().is_none_or(|(b, _)| l < *b) {
                best = Some((l, model.store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.train.patience > 0 && since_best >= cfg.train.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    let test_x = feat.inputs(data, &fold.test)?;
    let test_y: Vec<usize> = fold.test.iter().map(|&i| data.labels()[i]).collect();
    let preds = predict(&mut model, &test_x)?;
    Scores::of(&test_y, &preds, classes)
}

const EVAL_BATCH: usize = 64;

fn predict(model: &mut Model, xs: &[Tensor]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(xs.len());
    let idx: Vec<usize> = (0..xs.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        out.extend(argmax_rows(&model.eval_logits(&stack(xs, chunk)?)?));
    }
    Ok(out)
}

fn validation_loss(model: &mut Model, xs: &[Tensor], y: &[usize]) -> Result<f64> {
    let idx: Vec<usize> = (0..xs.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let logits = model.eval_logits(&stack(xs, chunk)?)?;
        let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
        let mut g = crate::numeric::Graph::new();
        let z = g.constant(logits);
        let l = g.softmax_cross_entropy(z, &yb)?;
        total += g.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(total / xs.len() as f64)
}
