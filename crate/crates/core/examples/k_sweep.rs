//! Number of pyramid scales against linear-evaluation scores on an
//! imbalanced synthetic set.

use trls::config::RunConfig;
use trls::eval::sweep_k;

fn main() -> trls::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.data.synth.class_counts = Some(vec![240, 60, 20]);
    let data = cfg.data.load()?;
    println!("class counts {:?}", data.class_counts());
    for row in sweep_k(&data, &[1, 3, 5], &cfg.pretrain(), &cfg.eval, cfg.seed)? {
        println!("{:<4} acc {:.3}  mf1 {:.3}", row.setting, row.acc_mean, row.mf1_mean);
    }
    Ok(())
}
