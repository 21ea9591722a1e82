//! A few ablation variants, each pretrained and linearly evaluated under
//! the same seed. Pass variant names as arguments to choose others.

use trls::config::{RunConfig, Variant};
use trls::eval::pretrain_and_evaluate;

fn main() -> trls::Result<()> {
    let names: Vec<String> = std::env::args().skip(1).collect();
    let variants = if names.is_empty() {
        vec![
            Variant::Full,
            Variant::WoMultiscale,
            Variant::WoSpectrogram,
            Variant::CellGru,
        ]
    } else {
        names.iter().map(|n| Variant::parse(n)).collect::<trls::Result<_>>()?
    };
    let mut cfg = RunConfig::desk();
    let data = cfg.data.load()?;
    for v in variants {
        cfg.ablation.variant = v;
        let s = &pretrain_and_evaluate(&data, &cfg.pretrain(), &cfg.eval, cfg.seed)?[0];
        println!("{:<24} acc {:.3}  mf1 {:.3}", v.name(), s.acc, s.mf1);
    }
    Ok(())
}
