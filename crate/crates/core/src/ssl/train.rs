//! One optimization step on a pair of views, and the pretraining loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::View;
use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::features::batch;
use crate::numeric::{AdamState, Graph, Mode, Session, Tensor, Var};
use crate::ssl::loss::{multiscale_loss, ntxent_loss};
use crate::ssl::twin::{ArchSpec, TwinNetworks};
use crate::ssl::{PretrainConfig, SslConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_scale_l: Vec<f64>,
    pub per_scale_l_prime: Vec<f64>,
    pub l: f64,
    pub l_prime: f64,
    pub l_total: f64,
}

/// Per-epoch training log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L_prime")]
    pub l_prime: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
    pub wall_ms: u64,
}

fn view_loss(g: &mut Graph, pred: &[Var], target: &[Tensor], ssl: &SslConfig) -> Result<(Var, Vec<f64>)> {
    let consts: Vec<Var> = target.iter().map(|t| g.constant(t.clone())).collect();
    if ssl.negatives {
        let l = ntxent_loss(g, pred[0], consts[0], ssl.temperature)?;
        let v = g.value(l).data()[0];
        Ok((l, vec![v]))
    } else {
        multiscale_loss(g, pred, &consts)
    }
}

/// Online forward on both views, loss against the frozen target outputs,
/// Adam on the online parameters, then the moving-average target update.
pub fn training_step(
    twin: &mut TwinNetworks,
    adam: &mut AdamState,
    v1: &Tensor,
    v2: &Tensor,
    ssl: &SslConfig,
    dropout_rng: Option<ChaCha8Rng>,
) -> Result<LossReport> {
    let target_1 = twin.target_projections(v1)?;
    let target_2 = twin.target_projections(v2)?;

    let mut store = std::mem::take(&mut twin.online);
    let outcome = (|| {
        let mut s = Session::new(&mut store, Mode::Train);
        if let Some(rng) = dropout_rng {
            s = s.with_dropout_rng(rng);
        }
        let x1 = s.graph.constant(v1.clone());
        let x2 = s.graph.constant(v2.clone());
        let (_, _, pred_1) = twin.online_forward(&mut s, x1)?;
        let (_, _, pred_2) = twin.online_forward(&mut s, x2)?;
        let (l, per_l) = view_loss(&mut s.graph, &pred_1, &target_2, ssl)?;
        let (lp, per_lp) = view_loss(&mut s.graph, &pred_2, &target_1, ssl)?;
        let total = s.graph.add(l, lp)?;
        let report = LossReport {
            l: s.graph.value(l).data()[0],
            l_prime: s.graph.value(lp).data()[0],
            l_total: s.graph.value(total).data()[0],
            per_scale_l: per_l,
            per_scale_l_prime: per_lp,
        };
        if !report.l_total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: twin.steps,
                l: report.l,
                l_prime: report.l_prime,
            });
        }
        let grads = s.graph.backward(total)?;
        Ok((report, s.param_grads(&grads)))
    })();
    let result = outcome.and_then(|(report, grads)| {
        adam.apply(&mut store, &grads)?;
        Ok(report)
    });
    twin.online = store;
    let report = result?;
    twin.ema_update()?;
    twin.steps += 1;
    Ok(report)
}

/// Deterministic random streams derived from one seed.
pub struct Streams {
    pub init: u64,
    pub shuffle: ChaCha8Rng,
    pub augment: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Streams {
            init: seed,
            shuffle: stream(1),
            augment: stream(2),
            dropout: stream(3),
        }
    }
}

pub struct Pretrained {
    pub twin: TwinNetworks,
    pub log: Vec<EpochRecord>,
}

pub fn arch_for(cfg: &PretrainConfig, data: &TimeSeriesDataset) -> ArchSpec {
    ArchSpec {
        encoder: cfg.encoder.clone(),
        head: cfg.ssl.head.clone(),
        stft: cfg.stft.clone(),
        len: data.len,
        channels: data.channels,
        sample_rate: data.sample_rate,
    }
}

/// Self-supervised pretraining on the samples `indices` of `data` (labels
/// unused). `on_epoch` sees each record as it is produced; with
/// `record_wall_time` off every `wall_ms` is 0 so logs are reproducible.
pub fn pretrain(
    data: &TimeSeriesDataset,
    indices: &[usize],
    cfg: &PretrainConfig,
    seed: u64,
    record_wall_time: bool,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Pretrained> {
    cfg.validate()?;
    if indices.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pretraining needs at least 2 samples, got {}",
            indices.len()
        )));
    }
    let arch = arch_for(cfg, data);
    let feat = arch.featurizer()?;
    let mut streams = Streams::new(seed);
    let mut twin = TwinNetworks::new(arch, cfg.ssl.tau, streams.init)?;
    let mut adam = AdamState::new(&twin.online, cfg.ssl.optimizer.clone());

    let series: Vec<Tensor> = indices.iter().map(|&i| feat.series(data, i)).collect();
    let clean: Vec<Tensor> = series.iter().map(|s| feat.encode_input(s)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..indices.len()).collect();
    let mut log = Vec::with_capacity(cfg.ssl.epochs);
    for epoch in 1..=cfg.ssl.epochs {
        let start = Instant::now();
        order.shuffle(&mut streams.shuffle);
        let (mut sl, mut slp, mut st, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.ssl.batch_size) {
            // batch statistics are undefined for a single sample
            if chunk.len() < 2 {
                continue;
            }
            let mut a = Vec::with_capacity(chunk.len());
            let mut b = Vec::with_capacity(chunk.len());
            for &k in chunk {
                a.push(feat.view(&series[k], &clean[k], View::First, &cfg.augment, &mut streams.augment)?);
                b.push(feat.view(&series[k], &clean[k], View::Second, &cfg.augment, &mut streams.augment)?);
            }
            let v1 = batch(&a.iter().collect::<Vec<_>>())?;
            let v2 = batch(&b.iter().collect::<Vec<_>>())?;
            let drop_rng = ChaCha8Rng::from_rng(&mut streams.dropout).expect("chacha seeding");
            let r = training_step(&mut twin, &mut adam, &v1, &v2, &cfg.ssl, Some(drop_rng))?;
            sl += r.l;
            slp += r.l_prime;
            st += r.l_total;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        let rec = EpochRecord {
            epoch,
            l: sl / n,
            l_prime: slp / n,
            l_total: st / n,
            wall_ms: if record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        log::info!("epoch {epoch}: L_total={:.5}", rec.l_total);
        on_epoch(&rec)?;
        log.push(rec);
    }
    Ok(Pretrained { twin, log })
}
