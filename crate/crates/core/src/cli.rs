//! Command-line front end. Every command writes into a fresh run directory
//! under `$TRLS_RUN_ROOT` (default `runs`) holding the resolved
//! `config.toml`, logs, checkpoints and reports.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{RunConfig, Variant};
use crate::data::convert::{convert, SourceFormat};
use crate::data::{Corruption, Fold, SynthSpec, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::eval::protocol::elapsed_ms;
use crate::eval::{
    embed, export_embeddings, finetune_folds, linear_eval_fold, sweep_k, sweep_robustness, write_table, EmbedMode,
    EvalReport, FoldScores, SweepRow,
};
use crate::features::Featurizer;
use crate::ssl::{pretrain, EpochRecord, PretrainConfig, TwinNetworks};

pub const RUN_ROOT_ENV: &str = "TRLS_RUN_ROOT";

#[derive(Parser, Debug)]
#[command(
    name = "trls",
    version,
    about = "Spectrogram-based self-supervised time-series representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides `data.path`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pretraining epochs (overrides `ssl.epochs`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Number of folds to run (overrides `eval.run_folds`).
    #[arg(long)]
    folds: Option<usize>,
    /// Record no wall-clock times so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Concat,
    Finest,
}

impl From<ModeArg> for EmbedMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Concat => EmbedMode::Concat,
            ModeArg::Finest => EmbedMode::Finest,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Har,
    Epilepsy,
    SleepEdf,
    Ecg,
}

impl From<FormatArg> for SourceFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Har => SourceFormat::Har,
            FormatArg::Epilepsy => SourceFormat::Epilepsy,
            FormatArg::SleepEdf => SourceFormat::SleepEdf,
            FormatArg::Ecg => SourceFormat::Ecg,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Self-supervised pretraining on one fold's training split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Linear classifier on frozen embeddings. Without a checkpoint every
    /// configured fold is pretrained first.
    LinearEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Fold evaluated with a checkpoint.
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Encoder plus classifier trained on a labelled fraction.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "random_init")]
        checkpoint: Option<PathBuf>,
        /// Start from untrained networks (supervised baseline).
        #[arg(long)]
        random_init: bool,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Pretraining plus linear evaluation for one ablation variant.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: String,
    },
    /// Pretraining plus linear evaluation for each number of scales.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
    },
    /// Linear evaluation with a corrupted test split.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        dropout: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,5,1,0.9,0.7,0.5,0.3,0.1,0.01")]
        snr_db: Vec<f64>,
    },
    /// Writes every sample's stacked spectrogram as a dataset (len = frames).
    Featurize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generates the synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Samples per class.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Per-class counts (overrides --n).
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long, default_value_t = 256)]
        len: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 64.0)]
        sample_rate: f64,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Converts a downloaded public dataset into the native format.
    Convert {
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long)]
        input: PathBuf,
        /// HAR split directory (`train` or `test`).
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embeds every sample with a checkpoint's encoder and writes the matrix.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "concat")]
        mode: ModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A fresh directory for one command's outputs.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// `<root>/<verb>-<timestamp>`, suffixed when the name is taken.
    pub fn create(verb: &str) -> Result<Self> {
        let root = std::env::var_os(RUN_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = format!("{verb}-{stamp}");
        for k in 1.. {
            let name = if k == 1 { base.clone() } else { format!("{base}-{k}") };
            let path = root.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        unreachable!("unbounded suffix search")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let p = self.file(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        let p = self.file("config.toml");
        fs::write(&p, cfg.to_toml()?).map_err(|e| Error::io(&p, e))
    }
}

/// Appends epoch records as JSON lines.
struct TrainLog {
    file: File,
    path: PathBuf,
}

impl TrainLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(TrainLog { file, path })
    }

    fn push(&mut self, rec: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

struct Context {
    cfg: RunConfig,
    data: TimeSeriesDataset,
    record_time: bool,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &common.data {
            cfg.data.path = Some(d.clone());
        }
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(e) = common.epochs {
            cfg.ssl.epochs = e;
        }
        if let Some(f) = common.folds {
            cfg.eval.run_folds = f;
        }
        let data = cfg.data.load()?;
        Ok(Context {
            cfg,
            data,
            record_time: !common.deterministic,
        })
    }

    fn fold(&self, k: usize) -> Result<Fold> {
        let folds = crate::data::make_splits(self.data.labels(), self.data.num_classes(), &self.cfg.eval.split)?;
        folds
            .into_iter()
            .nth(k)
            .ok_or_else(|| Error::Config(format!("fold {k} does not exist")))
    }

    fn pretrain_logged(
        &self,
        run: &RunDir,
        fold: &Fold,
        log_name: &str,
        pcfg: &PretrainConfig,
    ) -> Result<TwinNetworks> {
        let mut log = TrainLog::create(run.file(log_name))?;
        let out = pretrain(&self.data, &fold.train, pcfg, self.cfg.seed, self.record_time, |r| {
            log.push(r)
        })?;
        Ok(out.twin)
    }

    fn load_twin(&self, checkpoint: &Path) -> Result<TwinNetworks> {
        let twin = TwinNetworks::load(checkpoint)?;
        crate::eval::embed::check_compatible(&twin.arch, &self.data)?;
        Ok(twin)
    }

    fn config_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(&self.cfg)?)
    }

    /// Pretrain on every configured fold and evaluate each linearly.
    fn protocol(&self, run: &RunDir, pcfg: &PretrainConfig) -> Result<Vec<FoldScores>> {
        let folds = self.cfg.eval.folds(&self.data)?;
        folds
            .iter()
            .enumerate()
            .map(|(k, fold)| {
                let mut twin = self.pretrain_logged(run, fold, &format!("train_log_fold{k}.jsonl"), pcfg)?;
                let s = linear_eval_fold(&mut twin, &self.data, fold, &self.cfg.eval, self.cfg.seed)?;
                log::info!("fold {k}: acc {:.4} mf1 {:.4}", s.acc, s.mf1);
                Ok(FoldScores {
                    fold: k,
                    acc: s.acc,
                    mf1: s.mf1,
                })
            })
            .collect()
    }
}

fn save_dataset(run: &RunDir, out: Option<PathBuf>, data: &TimeSeriesDataset) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| run.file("dataset"));
    data.save(&dir)?;
    Ok(dir)
}

fn report(run: &RunDir, ctx: &Context, folds: Vec<FoldScores>, start: Instant) -> Result<EvalReport> {
    let r = EvalReport::new(
        folds,
        ctx.cfg.seed,
        elapsed_ms(start, ctx.record_time),
        ctx.config_json()?,
    );
    run.write_json("report.json", &r)?;
    println!(
        "acc {:.4} ± {:.4}  mf1 {:.4} ± {:.4}",
        r.acc_mean, r.acc_std, r.mf1_mean, r.mf1_std
    );
    Ok(r)
}

fn table(run: &RunDir, ctx: &Context, rows: &[SweepRow], start: Instant) -> Result<()> {
    write_table(&run.file("table.csv"), rows)?;
    run.write_json(
        "report.json",
        &serde_json::json!({
            "rows": rows,
            "seed": ctx.cfg.seed,
            "wall_ms": elapsed_ms(start, ctx.record_time),
            "config": ctx.config_json()?,
        }),
    )?;
    for r in rows {
        println!(
            "{:<16} acc {:.4} ± {:.4}  mf1 {:.4} ± {:.4}",
            r.setting, r.acc_mean, r.acc_std, r.mf1_mean, r.mf1_std
        );
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    let start = Instant::now();
    match cmd {
        Command::Pretrain { common, fold } => {
            let ctx = Context::new(&common)?;
            let run = RunDir::create("pretrain")?;
            run.write_config(&ctx.cfg)?;
            let f = ctx.fold(fold)?;
            let twin = ctx.pretrain_logged(&run, &f, "train_log.jsonl", &ctx.cfg.pretrain())?;
            twin.save(&run.file("checkpoint"))?;
            run.write_json(
                "report.json",
                &serde_json::json!({
                    "fold": fold,
                    "steps": twin.steps,
                    "seed": ctx.cfg.seed,
                    "wall_ms": elapsed_ms(start, ctx.record_time),
                    "config": ctx.config_json()?,
                }),
            )?;
            println!("{}", run.path.display());
        }
        Command::LinearEval {
            common,
            checkpoint,
            fold,
        } => {
            let ctx = Context::new(&common)?;
            let run = RunDir::create("linear-eval")?;
            run.write_config(&ctx.cfg)?;
            let folds = match checkpoint {
                Some(ck) => {
                    let mut twin = ctx.load_twin(&ck)?;
                    let s = linear_eval_fold(&mut twin, &ctx.data, &ctx.fold(fold)?, &ctx.cfg.eval, ctx.cfg.seed)?;
                    vec![FoldScores {
                        fold,
                        acc: s.acc,
                        mf1: s.mf1,
                    }]
                }
                None => ctx.protocol(&run, &ctx.cfg.pretrain())?,
            };
            report(&run, &ctx, folds, start)?;
            println!("{}", run.path.display());
        }
        Command::Finetune {
            common,
            checkpoint,
            random_init,
            fraction,
            fold,
        } => {
            let mut ctx = Context::new(&common)?;
            if let Some(f) = fraction {
                ctx.cfg.eval.finetune.fraction = f;
            }
            let run = RunDir::create("finetune")?;
            run.write_config(&ctx.cfg)?;
            let pcfg = ctx.cfg.pretrain();
            let arch = crate::ssl::train::arch_for(&pcfg, &ctx.data);
            let folds = if let Some(ck) = checkpoint {
                let twin = ctx.load_twin(&ck)?;
                let f = ctx.fold(fold)?;
                let s = crate::eval::finetune(
                    &twin,
                    &ctx.data,
                    &f,
                    &ctx.cfg.eval.finetune,
                    ctx.cfg.eval.embed,
                    ctx.cfg.seed,
                )?;
                vec![FoldScores {
                    fold,
                    acc: s.acc,
                    mf1: s.mf1,
                }]
            } else if random_init {
                let twin = TwinNetworks::new(arch, pcfg.ssl.tau, ctx.cfg.seed)?;
                finetune_folds(&twin, &ctx.data, &ctx.cfg.eval, ctx.cfg.seed)?
            } else {
                let folds = ctx.cfg.eval.folds(&ctx.data)?;
                let mut out = Vec::new();
                for (k, f) in folds.iter().enumerate() {
                    let twin = ctx.pretrain_logged(&run, f, &format!("train_log_fold{k}.jsonl"), &pcfg)?;
                    let s = crate::eval::finetune(
                        &twin,
                        &ctx.data,
                        f,
                        &ctx.cfg.eval.finetune,
                        ctx.cfg.eval.embed,
                        ctx.cfg.seed,
                    )?;
                    out.push(FoldScores {
                        fold: k,
                        acc: s.acc,
                        mf1: s.mf1,
                    });
                }
                out
            };
            report(&run, &ctx, folds, start)?;
            println!("{}", run.path.display());
        }
        Command::Ablate { common, variant } => {
            let mut ctx = Context::new(&common)?;
            ctx.cfg.ablation.variant = Variant::parse(&variant)?;
            let run = RunDir::create(&format!("ablate-{variant}"))?;
            run.write_config(&ctx.cfg)?;
            let folds = ctx.protocol(&run, &ctx.cfg.pretrain())?;
            report(&run, &ctx, folds, start)?;
            println!("{}", run.path.display());
        }
        Command::SweepK { common, ks } => {
            let ctx = Context::new(&common)?;
            let run = RunDir::create("sweep-k")?;
            run.write_config(&ctx.cfg)?;
            let rows = sweep_k(&ctx.data, &ks, &ctx.cfg.pretrain(), &ctx.cfg.eval, ctx.cfg.seed)?;
            table(&run, &ctx, &rows, start)?;
            println!("{}", run.path.display());
        }
        Command::Robustness {
            common,
            checkpoint,
            fold,
            dropout,
            snr_db,
        } => {
            let ctx = Context::new(&common)?;
            let run = RunDir::create("robustness")?;
            run.write_config(&ctx.cfg)?;
            let f = ctx.fold(fold)?;
            let mut twin = match checkpoint {
                Some(ck) => ctx.load_twin(&ck)?,
                None => ctx.pretrain_logged(&run, &f, "train_log.jsonl", &ctx.cfg.pretrain())?,
            };
            let how: Vec<Corruption> = dropout
                .iter()
                .map(|&r| Corruption::Dropout(r))
                .chain(snr_db.iter().map(|&s| Corruption::SnrDb(s)))
                .collect();
            let rows = sweep_robustness(&mut twin, &ctx.data, &f, &how, &ctx.cfg.eval, ctx.cfg.seed)?;
            table(&run, &ctx, &rows, start)?;
            println!("{}", run.path.display());
        }
        Command::Featurize { common, out } => {
            let ctx = Context::new(&common)?;
            let run = RunDir::create("featurize")?;
            run.write_config(&ctx.cfg)?;
            let feat = Featurizer::for_dataset(&ctx.cfg.stft, crate::encoder::InputKind::Spectrogram, &ctx.data)?;
            let (frames, width) = feat.map_dims();
            let all: Vec<usize> = (0..ctx.data.n()).collect();
            let values = feat
                .inputs(&ctx.data, &all)?
                .iter()
                .flat_map(|t| t.data().iter().map(|&v| v as f32).collect::<Vec<_>>())
                .collect();
            let maps = TimeSeriesDataset::new(
                values,
                ctx.data.labels().to_vec(),
                frames,
                width,
                ctx.data.class_names.clone(),
                ctx.data.sample_rate / ctx.cfg.stft.hop() as f64,
                format!("spectrogram:{}", ctx.data.source),
            )?;
            println!("{}", save_dataset(&run, out, &maps)?.display());
        }
        Command::Synth {
            classes,
            n,
            counts,
            len,
            channels,
            sample_rate,
            noise,
            seed,
            out,
        } => {
            let spec = SynthSpec {
                classes,
                n_per_class: n,
                class_counts: counts,
                len,
                channels,
                sample_rate,
                noise_std: noise,
                seed,
            };
            let mut cfg = RunConfig::default();
            cfg.data.synth = spec.clone();
            cfg.seed = seed;
            let run = RunDir::create("synth")?;
            run.write_config(&cfg)?;
            let data = crate::data::synth_generate(&spec)?;
            println!("{}", save_dataset(&run, out, &data)?.display());
        }
        Command::Convert {
            format,
            input,
            split,
            out,
        } => {
            let run = RunDir::create("convert")?;
            run.write_config(&RunConfig::default())?;
            let data = convert(format.into(), &input, &split)?;
            println!("{}", save_dataset(&run, out, &data)?.display());
        }
        Command::ExportEmbeddings {
            common,
            checkpoint,
            mode,
            out,
        } => {
            let ctx = Context::new(&common)?;
            let run = RunDir::create("export-embeddings")?;
            run.write_config(&ctx.cfg)?;
            let mut twin = ctx.load_twin(&checkpoint)?;
            let all: Vec<usize> = (0..ctx.data.n()).collect();
            let x = embed(&mut twin, &ctx.data, &all, mode.into())?;
            let dir = out.unwrap_or_else(|| run.file("embeddings"));
            export_embeddings(&dir, &x, ctx.data.labels(), &ctx.data.class_names)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 1 usage or configuration error, 2 runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}
