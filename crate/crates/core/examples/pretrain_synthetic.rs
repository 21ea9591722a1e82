//! Self-supervised pretraining on the synthetic dataset with per-epoch
//! losses, then a checkpoint round trip.

use trls::config::RunConfig;
use trls::ssl::{pretrain, TwinNetworks};

fn main() -> trls::Result<()> {
    let cfg = RunConfig::desk();
    let data = cfg.data.load()?;
    let fold = &cfg.eval.folds(&data)?[0];
    let out = pretrain(&data, &fold.train, &cfg.pretrain(), cfg.seed, true, |r| {
        println!(
            "epoch {:2}  L {:.4}  L' {:.4}  total {:.4}  {} ms",
            r.epoch, r.l, r.l_prime, r.l_total, r.wall_ms
        );
        Ok(())
    })?;
    let dir = std::env::temp_dir().join("trls-checkpoint");
    out.twin.save(&dir)?;
    let back = TwinNetworks::load(&dir)?;
    println!(
        "saved {} steps to {}; reloaded {} steps",
        out.twin.steps,
        dir.display(),
        back.steps
    );
    Ok(())
}
