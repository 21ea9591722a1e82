//! One linear probe trained on clean data, scored on test data with point
//! dropout and with additive noise.

use trls::config::RunConfig;
use trls::data::Corruption;
use trls::eval::sweep_robustness;
use trls::ssl::pretrain;

fn main() -> trls::Result<()> {
    let cfg = RunConfig::desk();
    let data = cfg.data.load()?;
    let fold = &cfg.eval.folds(&data)?[0];
    let mut twin = pretrain(&data, &fold.train, &cfg.pretrain(), cfg.seed, false, |_| Ok(()))?.twin;
    let how: Vec<Corruption> = [0.0, 0.3, 0.6, 0.9]
        .into_iter()
        .map(Corruption::Dropout)
        .chain([10.0, 1.0, 0.1].into_iter().map(Corruption::SnrDb))
        .collect();
    for row in sweep_robustness(&mut twin, &data, fold, &how, &cfg.eval, cfg.seed)? {
        println!("{:<12} acc {:.3}  mf1 {:.3}", row.setting, row.acc_mean, row.mf1_mean);
    }
    Ok(())
}
