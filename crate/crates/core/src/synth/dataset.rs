use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "EEGINTERP-DATASET";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EEGSample {
    pub id: usize,
    /// `[channels, time]`
    pub data: Tensor<f32>,
    pub label: usize,
    pub subject: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channel_names: Vec<String>,
    pub rate: f64,
    pub length: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<EEGSample>,
}

impl Dataset {
    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.samples.iter().map(|x| x.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn inputs(&self) -> Vec<Tensor<f32>> {
        self.samples.iter().map(|s| s.data.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn sample(&self, id: usize) -> Option<&EEGSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    fn with_samples(&self, samples: Vec<EEGSample>) -> Dataset {
        Dataset {
            channel_names: self.channel_names.clone(),
            rate: self.rate,
            length: self.length,
            class_names: self.class_names.clone(),
            samples,
        }
    }
}

/// `(train, test)` where test holds exactly the samples of `subject`.
pub fn split_leave_one_subject_out(ds: &Dataset, subject: u32) -> Result<(Dataset, Dataset)> {
    if !ds.samples.iter().any(|s| s.subject == subject) {
        return Err(Error::UnknownSubject(subject));
    }
    let (test, train): (Vec<_>, Vec<_>) = ds.samples.iter().cloned().partition(|s| s.subject == subject);
    Ok((ds.with_samples(train), ds.with_samples(test)))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    n: usize,
    t: usize,
    rate: f64,
    channel_names: Vec<String>,
    class_names: Vec<String>,
    ids: Vec<usize>,
    labels: Vec<usize>,
    subjects: Vec<u32>,
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let (n, t) = (ds.channels(), ds.length);
    let mut blob = Vec::with_capacity(ds.samples.len() * n * t);
    for s in &ds.samples {
        if s.data.shape() != [n, t] {
            return Err(Error::InvalidArgument(format!(
                "sample {} has shape {:?}, dataset is [{n}, {t}]",
                s.id,
                s.data.shape()
            )));
        }
        blob.extend_from_slice(s.data.data());
    }
    let manifest = Manifest {
        version: VERSION,
        n,
        t,
        rate: ds.rate,
        channel_names: ds.channel_names.clone(),
        class_names: ds.class_names.clone(),
        ids: ds.samples.iter().map(|s| s.id).collect(),
        labels: ds.labels(),
        subjects: ds.samples.iter().map(|s| s.subject).collect(),
    };
    let text = serde_json::to_string(&manifest).expect("manifest serializes");
    container::write(path, MAGIC, VERSION, &text, &blob)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (text, blob) = container::read(path, MAGIC, VERSION)?;
    let m: Manifest = container::parse_manifest(&text, path)?;
    let mismatch = |detail: String| Error::ShapeMismatch {
        path: path.to_path_buf(),
        detail,
    };
    if m.version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            expected: VERSION,
            found: m.version,
        });
    }
    let count = m.labels.len();
    if m.channel_names.len() != m.n {
        return Err(mismatch(format!(
            "n = {} but {} channel names",
            m.n,
            m.channel_names.len()
        )));
    }
    if m.ids.len() != count || m.subjects.len() != count {
        return Err(mismatch("ids, labels and subjects differ in length".into()));
    }
    if blob.len() != count * m.n * m.t {
        return Err(mismatch(format!(
            "{count} samples of [{}, {}] need {} values, blob has {}",
            m.n,
            m.t,
            count * m.n * m.t,
            blob.len()
        )));
    }
    if let Some(&bad) = m.labels.iter().find(|&&l| l >= m.class_names.len()) {
        return Err(mismatch(format!(
            "label {bad} out of range for {} classes",
            m.class_names.len()
        )));
    }
    let size = m.n * m.t;
    let samples = (0..count)
        .map(|i| EEGSample {
            id: m.ids[i],
            data: Tensor::new(vec![m.n, m.t], blob[i * size..(i + 1) * size].to_vec())
                .expect("length checked"),
            label: m.labels[i],
            subject: m.subjects[i],
        })
        .collect();
    Ok(Dataset {
        channel_names: m.channel_names,
        rate: m.rate,
        length: m.t,
        class_names: m.class_names,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthConfig};

    fn tiny() -> Dataset {
        let mut cfg = SynthConfig::two_class_demo(2);
        cfg.subjects = 4;
        cfg.samples_per_class = 2;
        cfg.length = 128;
        generate_dataset(&cfg).unwrap()
    }

    #[test]
    fn leave_one_subject_out_partitions() {
        let ds = tiny();
        let mut seen = Vec::new();
        for s in ds.subjects() {
            let (train, test) = split_leave_one_subject_out(&ds, s).unwrap();
            assert!(test.samples.iter().all(|x| x.subject == s));
            assert!(train.samples.iter().all(|x| x.subject != s));
            let mut ids: Vec<usize> = train.samples.iter().chain(&test.samples).map(|x| x.id).collect();
            ids.sort_unstable();
            assert_eq!(ids, (0..ds.samples.len()).collect::<Vec<_>>());
            seen.push(s);
        }
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert!(matches!(
            split_leave_one_subject_out(&ds, 9),
            Err(Error::UnknownSubject(9))
        ));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.eegds");
        save_dataset(&ds, &p).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(back, ds);
        let p2 = dir.path().join("e.eegds");
        save_dataset(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }
}
