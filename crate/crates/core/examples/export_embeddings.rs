//! Embeds every sample with a pretrained encoder and writes the matrix in
//! the dataset format, ready for external 2-D projection.

use trls::config::RunConfig;
use trls::eval::{embed, export_embeddings, EmbedMode};
use trls::ssl::pretrain;

fn main() -> trls::Result<()> {
    let cfg = RunConfig::desk();
    let data = cfg.data.load()?;
    let fold = &cfg.eval.folds(&data)?[0];
    let mut twin = pretrain(&data, &fold.train, &cfg.pretrain(), cfg.seed, false, |_| Ok(()))?.twin;
    let all: Vec<usize> = (0..data.n()).collect();
    for mode in [EmbedMode::Finest, EmbedMode::Concat] {
        let x = embed(&mut twin, &data, &all, mode)?;
        let dir = std::env::temp_dir().join(format!("trls-embeddings-{mode:?}").to_lowercase());
        export_embeddings(&dir, &x, data.labels(), &data.class_names)?;
        println!("{mode:?}: {:?} -> {}", x.shape(), dir.display());
    }
    Ok(())
}
