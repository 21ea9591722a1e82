//! Two augmented views of one spectrogram, and how far each drifts from
//! the clean map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trls::augment::{AugmentConfig, View};
use trls::data::{synth_generate, SynthSpec};
use trls::encoder::InputKind;
use trls::features::Featurizer;
use trls::signal::StftConfig;

fn main() -> trls::Result<()> {
    let data = synth_generate(&SynthSpec {
        n_per_class: 4,
        ..SynthSpec::default()
    })?;
    let stft = StftConfig {
        hop: Some(8),
        ..StftConfig::default()
    };
    let feat = Featurizer::for_dataset(&stft, InputKind::Spectrogram, &data)?;
    let series = feat.series(&data, 0);
    let clean = feat.encode_input(&series)?;
    let aug = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("input map {:?}", clean.shape());
    for view in [View::First, View::Second] {
        let v = feat.view(&series, &clean, view, &aug, &mut rng)?;
        println!(
            "{view:?}: ops {:?}, mean {:+.3}, max |change| {:.3}",
            aug.pipeline(view),
            v.mean(),
            v.max_abs_diff(&clean)
        );
    }
    Ok(())
}
