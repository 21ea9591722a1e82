//! Point dropout and additive noise at a target SNR.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Zero each point independently with this probability.
    Dropout(f64),
    /// Add Gaussian noise at this signal-to-noise ratio (dB) per sample.
    SnrDb(f64),
}

impl Corruption {
    pub fn label(&self) -> String {
        match self {
            Corruption::Dropout(r) => format!("dropout={r}"),
            Corruption::SnrDb(s) => format!("snr_db={s}"),
        }
    }
}

pub fn corrupt(data: &TimeSeriesDataset, how: Corruption, seed: u64) -> Result<TimeSeriesDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = data.len * data.channels;
    let mut out = Vec::with_capacity(data.values().len());
    match how {
        Corruption::Dropout(rate) => {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
            }
            if rate == 0.0 {
                return Ok(data.clone());
            }
            for &v in data.values() {
                out.push(if rng.gen::<f64>() < rate { 0.0 } else { v });
            }
        }
        Corruption::SnrDb(db) => {
            if !db.is_finite() {
                return Err(Error::InvalidArgument(format!("SNR {db} dB")));
            }
            for i in 0..data.n() {
                let x = data.sample_f64(i);
                let p_signal = x.iter().map(|v| v * v).sum::<f64>() / w as f64;
                if p_signal == 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "sample {i} has zero power; SNR is undefined"
                    )));
                }
                let noise: Vec<f64> = (0..w).map(|_| StandardNormal.sample(&mut rng)).collect();
                let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / w as f64;
                // rescale the realized noise to the exact target power
                let k = (p_signal / 10f64.powf(db / 10.0) / p_noise).sqrt();
                out.extend(x.iter().zip(&noise).map(|(s, n)| (s + k * n) as f32));
            }
        }
    }
    data.with_values(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};

    fn sample_set(len: usize) -> TimeSeriesDataset {
        synth_generate(&SynthSpec {
            n_per_class: 4,
            len,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_dropout_is_identity() {
        let d = sample_set(128);
        assert_eq!(corrupt(&d, Corruption::Dropout(0.0), 1).unwrap(), d);
        assert!(corrupt(&d, Corruption::Dropout(1.0), 1).is_err());
    }

    #[test]
    fn dropout_zeroes_about_the_rate() {
        let d = sample_set(256);
        let c = corrupt(&d, Corruption::Dropout(0.9), 2).unwrap();
        let zeros = c.values().iter().filter(|v| **v == 0.0).count() as f64;
        let frac = zeros / c.values().len() as f64;
        assert!((frac - 0.9).abs() < 0.02, "{frac}");
        assert_eq!(c.labels(), d.labels());
    }

    #[test]
    fn realized_snr_matches_request() {
        let d = sample_set(2500);
        for db in [-5.0, 0.0, 10.0, 20.0] {
            let c = corrupt(&d, Corruption::SnrDb(db), 3).unwrap();
            for i in 0..d.n() {
                let x = d.sample_f64(i);
                let y = c.sample_f64(i);
                let ps = x.iter().map(|v| v * v).sum::<f64>();
                let pn = x.iter().zip(&y).map(|(a, b)| (b - a).powi(2)).sum::<f64>();
                let got = 10.0 * (ps / pn).log10();
                assert!((got - db).abs() < 0.2, "{got} vs {db}");
            }
        }
    }

    #[test]
    fn zero_power_sample_rejected() {
        let d = TimeSeriesDataset::new(vec![0.0; 8], vec![0, 0], 4, 1, vec!["a".into()], 1.0, "z").unwrap();
        assert!(corrupt(&d, Corruption::SnrDb(10.0), 1).is_err());
    }

    #[test]
    fn seeded() {
        let d = sample_set(128);
        let a = corrupt(&d, Corruption::SnrDb(5.0), 9).unwrap();
        assert_eq!(a, corrupt(&d, Corruption::SnrDb(5.0), 9).unwrap());
    }
}
