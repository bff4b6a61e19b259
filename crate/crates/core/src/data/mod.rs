//! Paired-modality data: Gaussian generators with closed-form information
//! oracles, a clustered generator with class labels, and CSV ingestion.

mod clustered;
mod csvio;
mod gaussian;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{sample_without_replacement, Stream};

pub use clustered::{gen_clustered_pairs, ClusterModel, ClusteredPairSpec};
pub use csvio::{load_paired_csv, read_labels_csv, read_matrix_csv, write_matrix_csv, CsvMatrix};
pub use gaussian::{
    gaussian_conditional_mi, gaussian_mi, gaussian_mi_from_covariance, gen_gaussian_pairs, sample_mvn,
    GaussianModel, GaussianPairSpec, MixingMatrices, TripleBlocks, MAX_CONDITION,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Gaussian(GaussianPairSpec),
    Clustered(ClusteredPairSpec),
    Files { v: PathBuf, t: PathBuf, labels: Option<PathBuf> },
}

/// Row `i` of `xv` and row `i` of `xt` form an aligned pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub xv: Tensor<f64>,
    pub xt: Tensor<f64>,
    pub labels: Option<Vec<usize>>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub provenance: Provenance,
    pub n: usize,
    pub dim_v: usize,
    pub dim_t: usize,
    pub seed: Option<u64>,
    pub labeled: bool,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.xv.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn manifest(&self) -> DatasetManifest {
        let seed = match &self.provenance {
            Provenance::Gaussian(s) => Some(s.seed),
            Provenance::Clustered(s) => Some(s.seed),
            Provenance::Files { .. } => None,
        };
        DatasetManifest {
            provenance: self.provenance.clone(),
            n: self.len(),
            dim_v: self.xv.cols(),
            dim_t: self.xt.cols(),
            seed,
            labeled: self.labels.is_some(),
        }
    }
}

/// Where a training run draws its pairs from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    Gaussian(GaussianPairSpec),
    Clustered(ClusteredPairSpec),
    Csv { path_v: PathBuf, path_t: PathBuf, path_labels: Option<PathBuf> },
}

/// A batch of aligned pairs, labels when the source has them.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub xv: Tensor<f64>,
    pub xt: Tensor<f64>,
    pub labels: Option<Vec<usize>>,
}

/// Resolved [`DataSpec`] that serves deterministic batches.
#[derive(Clone, Debug)]
pub enum DataSource {
    Gaussian(GaussianModel),
    Clustered(ClusterModel),
    /// File data; the last `holdout` rows are reserved for evaluation.
    Fixed { data: PairedDataset, holdout: usize },
}

impl DataSpec {
    pub fn open(&self) -> Result<DataSource> {
        Ok(match self {
            DataSpec::Gaussian(s) => DataSource::Gaussian(s.model()?),
            DataSpec::Clustered(s) => DataSource::Clustered(s.model()?),
            DataSpec::Csv { path_v, path_t, path_labels } => {
                DataSource::Fixed { data: load_paired_csv(path_v, path_t, path_labels.as_deref())?, holdout: 0 }
            }
        })
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            DataSpec::Gaussian(s) => Some(s.seed),
            DataSpec::Clustered(s) => Some(s.seed),
            DataSpec::Csv { .. } => None,
        }
    }
}

impl DataSource {
    pub fn dim_v(&self) -> usize {
        match self {
            DataSource::Gaussian(m) => m.dim_v(),
            DataSource::Clustered(m) => m.sample_range(&Stream::new(0, "probe"), 0, 1).0.cols(),
            DataSource::Fixed { data, .. } => data.xv.cols(),
        }
    }

    pub fn dim_t(&self) -> usize {
        match self {
            DataSource::Gaussian(m) => m.dim_t(),
            DataSource::Clustered(m) => m.sample_range(&Stream::new(0, "probe"), 0, 1).1.cols(),
            DataSource::Fixed { data, .. } => data.xt.cols(),
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            DataSource::Clustered(m) => Some(m.n_classes()),
            DataSource::Fixed { data: d, .. } => d.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1)),
            DataSource::Gaussian(_) => None,
        }
    }

    /// Reserves the last `n` rows of file data for evaluation; generated
    /// sources already have disjoint held-out streams.
    pub fn reserve_holdout(&mut self, n: usize) -> Result<()> {
        if let DataSource::Fixed { data, holdout } = self {
            if n >= data.len() {
                return Err(Error::Config(format!("file dataset has {} rows, cannot hold out {n}", data.len())));
            }
            *holdout = n;
        }
        Ok(())
    }

    /// Training batch `step`: a fresh block of the generator stream, or `n`
    /// distinct rows of a finite pool (file data, or clustered data with
    /// `n_per_class > 0`) drawn by the `perm` stream.
    pub fn train_batch(&self, seed: u64, step: u64, n: usize) -> Result<Batch> {
        match self {
            DataSource::Fixed { data, holdout } => {
                let pool = data.len() - holdout;
                if pool < n {
                    return Err(Error::Config(format!("file dataset has {pool} training rows, batch needs {n}")));
                }
                let idx = sample_without_replacement(&mut Stream::new(seed, "perm").at(step), pool, n);
                Ok(rows(data, &idx))
            }
            DataSource::Clustered(m) if m.train_pool() > 0 => {
                let pool = m.train_pool();
                if pool < n {
                    return Err(Error::Config(format!("clustered training pool has {pool} pairs, batch needs {n}")));
                }
                let idx: Vec<u64> = sample_without_replacement(&mut Stream::new(seed, "perm").at(step), pool, n)
                    .into_iter()
                    .map(|i| i as u64)
                    .collect();
                let (xv, xt, labels) = m.sample_indices(&Stream::new(seed, "data/train"), &idx);
                Ok(Batch { xv, xt, labels: Some(labels) })
            }
            _ => self.generated(&Stream::new(seed, "data/train"), step * n as u64, n),
        }
    }

    /// Held-out split named `split` (e.g. `"eval"`, `"proto"`), disjoint from
    /// training. File data returns its reserved rows (all rows if none are
    /// reserved) for every split.
    pub fn held_out(&self, seed: u64, split: &str, n: usize) -> Result<Batch> {
        match self {
            DataSource::Fixed { data, holdout } => {
                let start = if *holdout == 0 { 0 } else { data.len() - holdout };
                let idx: Vec<usize> = (start..data.len()).take(n).collect();
                Ok(rows(data, &idx))
            }
            _ => self.generated(&Stream::new(seed, format!("data/{split}")), 0, n),
        }
    }

    fn generated(&self, stream: &Stream, start: u64, n: usize) -> Result<Batch> {
        Ok(match self {
            DataSource::Gaussian(m) => {
                let (xv, xt) = m.sample_range(stream, start, n);
                Batch { xv, xt, labels: None }
            }
            DataSource::Clustered(m) => {
                let (xv, xt, labels) = m.sample_range(stream, start, n);
                Batch { xv, xt, labels: Some(labels) }
            }
            DataSource::Fixed { .. } => unreachable!("file data is served by index"),
        })
    }
}

fn rows(d: &PairedDataset, idx: &[usize]) -> Batch {
    Batch {
        xv: d.xv.select_rows(idx),
        xt: d.xt.select_rows(idx),
        labels: d.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_reports_shape() {
        let d = gen_gaussian_pairs(&GaussianPairSpec { dim_v_noise: 2, ..GaussianPairSpec::correlated(1, 0.5, 7, 4) }).unwrap();
        let m = d.manifest();
        assert_eq!((m.n, m.dim_v, m.dim_t, m.seed, m.labeled), (7, 3, 1, Some(4), false));
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"kind\":\"gaussian\""));
    }

    #[test]
    fn train_and_held_out_streams_differ() {
        let src = DataSpec::Gaussian(GaussianPairSpec::correlated(1, 0.5, 0, 4)).open().unwrap();
        let a = src.train_batch(1, 0, 4).unwrap();
        let b = src.train_batch(1, 1, 4).unwrap();
        let e = src.held_out(1, "eval", 4).unwrap();
        assert_ne!(a.xv, b.xv);
        assert_ne!(a.xv, e.xv);
        assert_eq!(a, src.train_batch(1, 0, 4).unwrap());
    }
}
