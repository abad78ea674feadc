use super::config::DatasetSpec;
use crate::crypto::derive_rng;
use crate::messages::{sha256, Writer};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;
use std::path::Path;

/// Features are stored on this grid so they are exact fixed-point values.
pub const FEATURE_FRAC_BITS: u32 = 16;

pub const LABEL_NOISE: f64 = 0.05;
/// Share of each party's ids that the other party also holds.
pub const OVERLAP: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    /// Row-major, `rows × dim`.
    pub features: Vec<Vec<f64>>,
    /// Guest only.
    pub labels: Option<Vec<u8>>,
    pub dim: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("unknown dataset {0:?} (expected small, medium or large)")]
    UnknownName(String),
    #[error("csv {path}: {reason}")]
    Csv { path: String, reason: String },
    #[error("dataset invariant violated: {0}")]
    Invalid(String),
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// `(rows, guest_dim, host_dim)` for the named sizes.
pub fn named_dims(name: &str) -> Option<(usize, usize, usize)> {
    match name {
        "small" => Some((569, 10, 20)),
        "medium" => Some((5000, 20, 80)),
        "large" => Some((30000, 13, 10)),
        _ => None,
    }
}

pub fn quantize(x: f64) -> f64 {
    let s = (FEATURE_FRAC_BITS as f64).exp2();
    (x * s).round() / s
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for id in &self.ids {
            if !seen.insert(id) {
                return Err(DatasetError::Invalid(format!("duplicate id {id}")));
            }
        }
        if self.features.len() != self.ids.len() {
            return Err(DatasetError::Invalid("feature rows differ from id count".into()));
        }
        if self.features.iter().any(|r| r.len() != self.dim) {
            return Err(DatasetError::Invalid("ragged feature matrix".into()));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.ids.len() || l.iter().any(|&y| y > 1) {
                return Err(DatasetError::Invalid("labels must be 0/1, one per row".into()));
            }
        }
        Ok(())
    }

    /// Canonical byte encoding; the recorded data hash is over this.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.ids.len() as u64).u64(self.dim as u64);
        for (id, row) in self.ids.iter().zip(&self.features) {
            w.str(id);
            for x in row {
                w.f64(*x);
            }
        }
        match &self.labels {
            Some(l) => {
                w.u8(1).bytes(l);
            }
            None => {
                w.u8(0);
            }
        }
        w.finish()
    }

    pub fn content_hash(&self) -> [u8; 32] {
        sha256(&self.canonical_bytes())
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<Dataset, DatasetError> {
        let pos: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let idx: Vec<usize> = ids
            .iter()
            .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| DatasetError::Invalid(format!("missing id {id}"))))
            .collect::<Result<_, _>>()?;
        Ok(Dataset {
            ids: ids.to_vec(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            dim: self.dim,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for j in 0..self.dim {
            out.push_str(&format!(",f{j}"));
        }
        if self.labels.is_some() {
            out.push_str(",label");
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for x in &self.features[i] {
                out.push(',');
                out.push_str(&x.to_string());
            }
            if let Some(l) = &self.labels {
                out.push_str(&format!(",{}", l[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// `id,<features...>[,label]` with a header row. A last column named
    /// `label` is taken as the label vector.
    pub fn read_csv(path: &Path) -> Result<Dataset, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        let err = |reason: String| DatasetError::Csv { path: path.display().to_string(), reason };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| err("empty file".into()))?.split(',').collect();
        let has_label = header.last().is_some_and(|h| h.trim() == "label");
        let dim = header.len().saturating_sub(1 + has_label as usize);
        let mut ds = Dataset { ids: vec![], features: vec![], labels: has_label.then(Vec::new), dim };
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != header.len() {
                return Err(err(format!("line {}: expected {} columns", n + 2, header.len())));
            }
            ds.ids.push(cols[0].to_string());
            let row = cols[1..1 + dim]
                .iter()
                .map(|c| c.parse::<f64>().map(quantize).map_err(|e| err(format!("line {}: {e}", n + 2))))
                .collect::<Result<Vec<_>, _>>()?;
            ds.features.push(row);
            if let Some(l) = ds.labels.as_mut() {
                let y: u8 = cols[dim + 1].parse().map_err(|e| err(format!("line {}: {e}", n + 2)))?;
                l.push(y);
            }
        }
        ds.validate()?;
        Ok(ds)
    }
}

fn seed_bytes(seed: u64) -> [u8; 32] {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(b"dataset\0");
    s[24..].copy_from_slice(&seed.to_be_bytes());
    s
}

/// Synthetic pair: Gaussian features, labels from a random hyperplane over
/// the joint feature space with label noise, partially overlapping ids.
pub fn synthetic(rows: usize, guest_dim: usize, host_dim: usize, seed: u64) -> (Dataset, Dataset) {
    let s = seed_bytes(seed);
    let common = ((rows as f64) * OVERLAP).round() as usize;
    let extra = rows - common;
    let entities = common + 2 * extra;
    let d = guest_dim + host_dim;

    let mut frng = derive_rng(&s, "dataset.features").unwrap();
    let mut wrng = derive_rng(&s, "dataset.hyperplane").unwrap();
    let mut nrng = derive_rng(&s, "dataset.noise").unwrap();
    let w: Vec<f64> = (0..d).map(|_| wrng.sample::<f64, _>(StandardNormal)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let bias: f64 = wrng.sample::<f64, _>(StandardNormal) * 0.2;

    let mut x = Vec::with_capacity(entities);
    let mut y = Vec::with_capacity(entities);
    for _ in 0..entities {
        let row: Vec<f64> = (0..d).map(|_| quantize(frng.sample::<f64, _>(StandardNormal))).collect();
        let score = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / norm + bias;
        let mut label = (score > 0.0) as u8;
        if nrng.gen::<f64>() < LABEL_NOISE {
            label ^= 1;
        }
        x.push(row);
        y.push(label);
    }
    let id = |e: usize| format!("id{e:07}");
    // Entities [0, common) are shared; the next `extra` are guest-only, the
    // last `extra` host-only.
    let mut guest_idx: Vec<usize> = (0..common).chain(common..common + extra).collect();
    let mut host_idx: Vec<usize> = (0..common).chain(common + extra..entities).collect();
    guest_idx.shuffle(&mut derive_rng(&s, "dataset.guest_order").unwrap());
    host_idx.shuffle(&mut derive_rng(&s, "dataset.host_order").unwrap());
    let guest = Dataset {
        ids: guest_idx.iter().map(|&e| id(e)).collect(),
        features: guest_idx.iter().map(|&e| x[e][..guest_dim].to_vec()).collect(),
        labels: Some(guest_idx.iter().map(|&e| y[e]).collect()),
        dim: guest_dim,
    };
    let host = Dataset {
        ids: host_idx.iter().map(|&e| id(e)).collect(),
        features: host_idx.iter().map(|&e| x[e][guest_dim..].to_vec()).collect(),
        labels: None,
        dim: host_dim,
    };
    (guest, host)
}

/// `(guest, host)` for a spec.
pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, Dataset), DatasetError> {
    match spec {
        DatasetSpec::Named { name, seed } => {
            let (r, g, h) = named_dims(name).ok_or_else(|| DatasetError::UnknownName(name.clone()))?;
            Ok(synthetic(r, g, h, *seed))
        }
        DatasetSpec::Explicit { rows, guest_dim, host_dim, seed } => Ok(synthetic(*rows, *guest_dim, *host_dim, *seed)),
        DatasetSpec::Csv { guest_csv, host_csv } => {
            let g = Dataset::read_csv(guest_csv)?;
            let h = Dataset::read_csv(host_csv)?;
            if g.labels.is_none() {
                return Err(DatasetError::Invalid("guest csv needs a label column".into()));
            }
            if h.labels.is_some() {
                return Err(DatasetError::Invalid("host csv must not carry labels".into()));
            }
            Ok((g, h))
        }
    }
}
