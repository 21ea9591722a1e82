//! Fine-tuning with 10% of the training labels, starting from a pretrained
//! encoder and from scratch.

use trls::config::RunConfig;
use trls::eval::finetune;
use trls::ssl::train::arch_for;
use trls::ssl::{pretrain, TwinNetworks};

fn main() -> trls::Result<()> {
    let cfg = RunConfig::desk();
    let data = cfg.data.load()?;
    let pcfg = cfg.pretrain();
    let fold = &cfg.eval.folds(&data)?[0];
    let ft = &cfg.eval.finetune;

    let scratch = TwinNetworks::new(arch_for(&pcfg, &data), pcfg.ssl.tau, cfg.seed)?;
    let trained = pretrain(&data, &fold.train, &pcfg, cfg.seed, false, |_| Ok(()))?.twin;
    for (name, twin) in [("scratch", &scratch), ("pretrained", &trained)] {
        let s = finetune(twin, &data, fold, ft, cfg.eval.embed, cfg.seed)?;
        println!(
            "{name:<10} {:.0}% labels  acc {:.3}  mf1 {:.3}",
            ft.fraction * 100.0,
            s.acc,
            s.mf1
        );
    }
    Ok(())
}
