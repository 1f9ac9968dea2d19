//! Packed `(N, V, T)` sample tensors with binary labels.

use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use crate::binio::{Reader, Writer};
use crate::error::{Error, LoadError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FLDDATA\0";
const VERSION: u32 = 1;

/// Where a window came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMeta {
    pub sensor_id: String,
    pub event: u32,
    /// Index of the last in-window step within its event trace.
    pub t_end: u32,
    pub window_end: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_vars: usize,
    seq_len: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    meta: Vec<SampleMeta>,
}

/// Positive/negative counts of a labelled set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassBalance {
    pub positives: usize,
    pub negatives: usize,
}

impl ClassBalance {
    /// Negatives per positive (`r` in `1:r`); infinite without positives.
    pub fn ratio(&self) -> f64 {
        if self.positives == 0 {
            f64::INFINITY
        } else {
            self.negatives as f64 / self.positives as f64
        }
    }
}

impl std::fmt::Display for ClassBalance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} positive / {} negative (1:{:.2})",
            self.positives,
            self.negatives,
            self.ratio()
        )
    }
}

impl Dataset {
    pub fn new(n_vars: usize, seq_len: usize) -> Self {
        Self {
            n_vars,
            seq_len,
            features: Vec::new(),
            labels: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn push(&mut self, features: &[f64], label: u8, meta: SampleMeta) -> Result<()> {
        if features.len() != self.n_vars * self.seq_len {
            return Err(Error::dim(
                "dataset push",
                &[self.n_vars, self.seq_len],
                &[features.len()],
            ));
        }
        if label > 1 {
            return Err(Error::Contract(format!("label {label} is not binary")));
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        self.meta.push(meta);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// `(N, V, T)`.
    pub fn shape(&self) -> [usize; 3] {
        [self.len(), self.n_vars, self.seq_len]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        let stride = self.n_vars * self.seq_len;
        &self.features[i * stride..(i + 1) * stride]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn meta(&self, i: usize) -> &SampleMeta {
        &self.meta[i]
    }

    pub fn balance(&self) -> ClassBalance {
        let positives = self.labels.iter().filter(|&&l| l == 1).count();
        ClassBalance {
            positives,
            negatives: self.len() - positives,
        }
    }

    /// Stacks the selected samples into a `B×V×T` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("dataset batch"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.n_vars * self.seq_len);
        for &i in indices {
            data.extend_from_slice(self.features(i));
        }
        Tensor::new(&[indices.len(), self.n_vars, self.seq_len], data)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.n_vars, self.seq_len);
        for &i in indices {
            out.features.extend_from_slice(self.features(i));
            out.labels.push(self.labels[i]);
            out.meta.push(self.meta[i].clone());
        }
        out
    }

    /// Appends all samples of `other` (same `V`, `T`).
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.n_vars != self.n_vars || other.seq_len != self.seq_len {
            return Err(Error::dim(
                "dataset extend",
                &[self.n_vars, self.seq_len],
                &[other.n_vars, other.seq_len],
            ));
        }
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        self.meta.extend_from_slice(&other.meta);
        Ok(())
    }

    /// Random split into `(first, second)` with `first` holding
    /// `round(frac·N)` samples.
    pub fn split(&self, frac: f64, rng: &mut RngState) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut idx);
        let cut = ((self.len() as f64) * frac).round() as usize;
        let (a, b) = idx.split_at(cut.min(self.len()));
        (self.subset(a), self.subset(b))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer().write_to(path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_writer().finish()
    }

    fn to_writer(&self) -> Writer {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u64(self.len() as u64);
        w.u32(self.n_vars as u32);
        w.u32(self.seq_len as u32);
        for (label, meta) in self.labels.iter().zip(&self.meta) {
            w.u8(*label);
            w.u32(meta.event);
            w.u32(meta.t_end);
            w.i64(meta.window_end.and_utc().timestamp());
            w.str(&meta.sensor_id);
        }
        w.f64s(&self.features);
        w
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, LoadError> {
        let mut r = Reader::open(bytes, MAGIC, "dataset", VERSION)?;
        let n = r.u64()? as usize;
        let n_vars = r.u32()? as usize;
        let seq_len = r.u32()? as usize;
        let mut labels = Vec::with_capacity(n.min(1 << 24));
        let mut meta = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let label = r.u8()?;
            if label > 1 {
                return Err(LoadError::Corrupt(format!("label {label} is not binary")));
            }
            let event = r.u32()?;
            let t_end = r.u32()?;
            let secs = r.i64()?;
            let window_end = DateTime::from_timestamp(secs, 0)
                .ok_or_else(|| LoadError::Corrupt(format!("bad timestamp {secs}")))?
                .naive_utc();
            let sensor_id = r.str()?;
            labels.push(label);
            meta.push(SampleMeta {
                sensor_id,
                event,
                t_end,
                window_end,
            });
        }
        let features = r.f64s(n * n_vars * seq_len)?;
        r.expect_end()?;
        Ok(Dataset {
            n_vars,
            seq_len,
            features,
            labels,
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(i: u32) -> SampleMeta {
        SampleMeta {
            sensor_id: format!("S{i}"),
            event: 0,
            t_end: i,
            window_end: DateTime::from_timestamp(1_600_000_000 + i as i64 * 1800, 0)
                .unwrap()
                .naive_utc(),
        }
    }

    fn small() -> Dataset {
        let mut d = Dataset::new(2, 3);
        for i in 0..5u32 {
            let f: Vec<f64> = (0..6).map(|j| (i * 10 + j) as f64 * 0.1).collect();
            d.push(&f, (i % 2) as u8, meta(i)).unwrap();
        }
        d
    }

    #[test]
    fn bytes_round_trip() {
        let d = small();
        let bytes = d.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_and_tampered_files_fail() {
        let bytes = small().to_bytes();
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 9]).is_err());
        let mut bad = bytes.clone();
        bad[20] ^= 0xff;
        assert!(matches!(
            Dataset::from_bytes(&bad),
            Err(LoadError::Checksum { .. })
        ));
        assert!(matches!(
            Dataset::from_bytes(b"nonsense-bytes-here"),
            Err(LoadError::BadMagic { .. })
        ));
    }

    #[test]
    fn batch_and_balance() {
        let d = small();
        let b = d.batch(&[1, 3]).unwrap();
        assert_eq!(b.shape(), &[2, 2, 3]);
        assert_eq!(&b.data()[..6], d.features(1));
        let bal = d.balance();
        assert_eq!((bal.positives, bal.negatives), (2, 3));
        assert!((bal.ratio() - 1.5).abs() < 1e-15);
    }
}
