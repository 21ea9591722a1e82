//! Linear evaluation of a pretrained encoder next to the same encoder left
//! at its random initialization.

use trls::config::RunConfig;
use trls::eval::linear_eval_fold;
use trls::ssl::train::arch_for;
use trls::ssl::{pretrain, TwinNetworks};

fn main() -> trls::Result<()> {
    let cfg = RunConfig::desk();
    let data = cfg.data.load()?;
    let pcfg = cfg.pretrain();
    let fold = &cfg.eval.folds(&data)?[0];

    let mut random = TwinNetworks::new(arch_for(&pcfg, &data), pcfg.ssl.tau, cfg.seed)?;
    let r = linear_eval_fold(&mut random, &data, fold, &cfg.eval, cfg.seed)?;
    let mut trained = pretrain(&data, &fold.train, &pcfg, cfg.seed, false, |_| Ok(()))?.twin;
    let p = linear_eval_fold(&mut trained, &data, fold, &cfg.eval, cfg.seed)?;

    println!("random-init  acc {:.3}  mf1 {:.3}", r.acc, r.mf1);
    println!("pretrained   acc {:.3}  mf1 {:.3}", p.acc, p.mf1);
    Ok(())
}
