//! Converters from the public datasets' distribution layouts (downloaded by
//! the user) into the native dataset format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    /// UCI HAR `<root>/<split>/Inertial Signals/*_<split>.txt` plus
    /// `<root>/<split>/y_<split>.txt`; 128 steps × 9 channels at 50 Hz.
    Har,
    /// Epileptic Seizure Recognition CSV: header, id column, 178 values,
    /// label 1–5 last (1 is seizure).
    Epilepsy,
    /// CSV rows `label, v₀ … v₂₉₉₉` (30 s epochs at 100 Hz), label 0–4.
    SleepEdf,
    /// CSV rows `label, lead-0 values…, lead-1 values…` (2500 × 2 at 250 Hz), label 0–3.
    Ecg,
}

pub struct Layout {
    pub len: usize,
    pub channels: usize,
    pub sample_rate: f64,
    pub classes: &'static [&'static str],
}

impl SourceFormat {
    pub fn layout(self) -> Layout {
        match self {
            SourceFormat::Har => Layout {
                len: 128,
                channels: 9,
                sample_rate: 50.0,
                classes: &[
                    "walking",
                    "walking_upstairs",
                    "walking_downstairs",
                    "sitting",
                    "standing",
                    "laying",
                ],
            },
            SourceFormat::Epilepsy => Layout {
                len: 178,
                channels: 1,
                sample_rate: 178.0,
                classes: &["non_seizure", "seizure"],
            },
            SourceFormat::SleepEdf => Layout {
                len: 3000,
                channels: 1,
                sample_rate: 100.0,
                classes: &["W", "N1", "N2", "N3", "REM"],
            },
            SourceFormat::Ecg => Layout {
                len: 2500,
                channels: 2,
                sample_rate: 250.0,
                classes: &["N", "AFIB", "AFL", "J"],
            },
        }
    }
}

pub const HAR_SIGNALS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];

/// `split` selects `train` or `test` for HAR and is ignored otherwise.
pub fn convert(format: SourceFormat, input: &Path, split: &str) -> Result<TimeSeriesDataset> {
    match format {
        SourceFormat::Har => convert_har(input, split),
        SourceFormat::Epilepsy => convert_rows(format, input, true, |row, path| {
            let y: f64 = parse(row.get(row.len().saturating_sub(1)).unwrap_or(""), path)?;
            let values = row.iter().skip(1).take(row.len().saturating_sub(2));
            Ok((
                usize::from(y == 1.0),
                values.map(|v| parse(v, path)).collect::<Result<_>>()?,
            ))
        }),
        SourceFormat::SleepEdf | SourceFormat::Ecg => convert_rows(format, input, false, |row, path| {
            let y: f64 = parse(row.get(0).unwrap_or(""), path)?;
            let values = row
                .iter()
                .skip(1)
                .map(|v| parse(v, path))
                .collect::<Result<Vec<f64>>>()?;
            Ok((y as usize, values))
        }),
    }
}

fn parse(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("not a number: `{s}`")))
}

/// Channel-major row values into `[len × channels]` order.
fn interleave(row: &[f64], len: usize, channels: usize) -> impl Iterator<Item = f32> + '_ {
    (0..len).flat_map(move |i| (0..channels).map(move |c| row[c * len + i] as f32))
}

fn convert_rows(
    format: SourceFormat,
    path: &Path,
    headers: bool,
    row_fn: impl Fn(&csv::StringRecord, &Path) -> Result<(usize, Vec<f64>)>,
) -> Result<TimeSeriesDataset> {
    let lay = format.layout();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let (y, row) = row_fn(&rec, path)?;
        if row.len() != lay.len * lay.channels {
            return Err(Error::format(
                path,
                format!("row {k} has {} values, expected {}", row.len(), lay.len * lay.channels),
            ));
        }
        if y >= lay.classes.len() {
            return Err(Error::format(path, format!("row {k} has label {y}")));
        }
        values.extend(interleave(&row, lay.len, lay.channels));
        labels.push(y);
    }
    finish(format, values, labels, path)
}

fn finish(format: SourceFormat, values: Vec<f32>, labels: Vec<usize>, path: &Path) -> Result<TimeSeriesDataset> {
    let lay = format.layout();
    TimeSeriesDataset::new(
        values,
        labels,
        lay.len,
        lay.channels,
        lay.classes.iter().map(|s| s.to_string()).collect(),
        lay.sample_rate,
        format!("{format:?}:{}", path.display()).to_lowercase(),
    )
}

fn read_whitespace_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|v| parse(v, path)).collect())
        .collect()
}

fn convert_har(root: &Path, split: &str) -> Result<TimeSeriesDataset> {
    let lay = SourceFormat::Har.layout();
    let dir = root.join(split);
    let signals = HAR_SIGNALS
        .iter()
        .map(|s| read_whitespace_rows(&dir.join("Inertial Signals").join(format!("{s}_{split}.txt"))))
        .collect::<Result<Vec<_>>>()?;
    let ypath = dir.join(format!("y_{split}.txt"));
    let ys = read_whitespace_rows(&ypath)?;
    let n = ys.len();
    for (s, rows) in HAR_SIGNALS.iter().zip(&signals) {
        if rows.len() != n || rows.iter().any(|r| r.len() != lay.len) {
            return Err(Error::format(
                &dir,
                format!("signal {s} must have {n} rows of {} values", lay.len),
            ));
        }
    }
    let mut values = Vec::with_capacity(n * lay.len * lay.channels);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for t in 0..lay.len {
            for rows in &signals {
                values.push(rows[i][t] as f32);
            }
        }
        let y = ys[i].first().copied().unwrap_or(0.0) as usize;
        if !(1..=lay.classes.len()).contains(&y) {
            return Err(Error::format(&ypath, format!("label {y} on line {}", i + 1)));
        }
        labels.push(y - 1);
    }
    finish(SourceFormat::Har, values, labels, root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    #[test]
    fn epilepsy_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("id");
        for i in 0..178 {
            write!(text, ",X{i}").unwrap();
        }
        text.push_str(",y\n");
        for (r, y) in [(0, 1), (1, 3)] {
            write!(text, "X.{r}").unwrap();
            for i in 0..178 {
                write!(text, ",{}", i + r).unwrap();
            }
            writeln!(text, ",{y}").unwrap();
        }
        let p = dir.path().join("data.csv");
        fs::write(&p, text).unwrap();
        let d = convert(SourceFormat::Epilepsy, &p, "").unwrap();
        assert_eq!((d.n(), d.len, d.channels), (2, 178, 1));
        assert_eq!(d.labels(), &[1, 0]);
        assert_eq!(d.sample(1)[5], 6.0);
    }

    #[test]
    fn ecg_rows_are_interleaved() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("2");
        for i in 0..5000 {
            write!(text, ",{i}").unwrap();
        }
        text.push('\n');
        let p = dir.path().join("ecg.csv");
        fs::write(&p, text).unwrap();
        let d = convert(SourceFormat::Ecg, &p, "").unwrap();
        assert_eq!(d.labels(), &[2]);
        // [len × channels]: step 1 holds lead-0 value 1 and lead-1 value 2501
        assert_eq!(&d.sample(0)[2..4], &[1.0, 2501.0]);
    }

    #[test]
    fn wrong_row_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "0,1,2,3\n").unwrap();
        let err = convert(SourceFormat::SleepEdf, &p, "").unwrap_err().to_string();
        assert!(err.contains("expected 3000"), "{err}");
    }

    #[test]
    fn har_directory() {
        let dir = tempfile::tempdir().unwrap();
        let sig = dir.path().join("train").join("Inertial Signals");
        fs::create_dir_all(&sig).unwrap();
        for (k, s) in HAR_SIGNALS.iter().enumerate() {
            let row = |r: usize| {
                (0..128)
                    .map(|i| format!("{}", k * 1000 + r * 200 + i))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            fs::write(
                sig.join(format!("{s}_train.txt")),
                format!(" {}\n {}\n", row(0), row(1)),
            )
            .unwrap();
        }
        fs::write(dir.path().join("train").join("y_train.txt"), "5\n1\n").unwrap();
        let d = convert(SourceFormat::Har, dir.path(), "train").unwrap();
        assert_eq!((d.n(), d.len, d.channels), (2, 128, 9));
        assert_eq!(d.labels(), &[4, 0]);
        assert_eq!(d.sample(1)[9 * 3 + 2], (2 * 1000 + 200 + 3) as f32);
    }
}
