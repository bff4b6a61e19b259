//! Retrieval recall, nearest-prototype classification and embedding export.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, MIN_ROW_NORM};
use crate::data::write_matrix_csv;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which modality supplies the queries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// text queries, image gallery
    #[default]
    T2v,
    /// image queries, text gallery
    V2t,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::T2v => "t2v",
            Direction::V2t => "v2t",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2v" => Ok(Direction::T2v),
            "v2t" => Ok(Direction::V2t),
            other => Err(Error::Config(format!("direction must be t2v or v2t, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub n_classes: usize,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

/// Unit-norm rows in f64; a row with norm below [`MIN_ROW_NORM`] is an error.
fn normalized_rows<T: Scalar>(z: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    z.iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let r: Vec<f64> = row.iter().map(|x| x.to_f64_lossy()).collect();
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm >= MIN_ROW_NORM) {
                return Err(Error::DegenerateEmbedding { row: i, norm });
            }
            Ok(r.into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 0-based rank of gallery row `i` for query `i`, by descending cosine
/// similarity with ties going to the lower gallery index.
pub fn match_ranks<T: Scalar>(zq: &Tensor<T>, zg: &Tensor<T>) -> Result<Vec<usize>> {
    if zq.shape() != zg.shape() {
        return Err(Error::dim("match_ranks", zq.shape(), zg.shape()));
    }
    if zq.rows() == 0 {
        return Err(Error::EmptyInput("retrieval needs at least one query"));
    }
    let q = normalized_rows(zq)?;
    let g = normalized_rows(zg)?;
    Ok(q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let target = dot(qi, &g[i]);
            g.iter()
                .enumerate()
                .filter(|&(j, gj)| {
                    let s = dot(qi, gj);
                    s > target || (s == target && j < i)
                })
                .count()
        })
        .collect())
}

/// Recall@k of aligned query/gallery rows.
pub fn retrieval_recall<T: Scalar>(zq: &Tensor<T>, zg: &Tensor<T>, ks: &[usize], direction: Direction) -> Result<RetrievalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!("recall cut-offs must be a non-empty list of k >= 1, got {ks:?}")));
    }
    let ranks = match_ranks(zq, zg)?;
    let n = ranks.len();
    let recall_at = ks.iter().map(|&k| (k, ranks.iter().filter(|&&r| r < k).count() as f64 / n as f64)).collect();
    Ok(RetrievalReport { recall_at, n_queries: n, direction })
}

/// Retrieval between paired embeddings, queries chosen by `direction`.
pub fn paired_retrieval<T: Scalar>(zv: &Tensor<T>, zt: &Tensor<T>, ks: &[usize], direction: Direction) -> Result<RetrievalReport> {
    match direction {
        Direction::T2v => retrieval_recall(zt, zv, ks, direction),
        Direction::V2t => retrieval_recall(zv, zt, ks, direction),
    }
}

/// Row `c` is the normalized mean of the `zt` rows labelled `c`.
pub fn build_prototypes<T: Scalar>(zt: &Tensor<T>, labels: &[usize], n_classes: usize) -> Result<Tensor<f64>> {
    if labels.len() != zt.rows() {
        return Err(Error::Alignment { what: "labels vs embedding rows".into(), left: zt.rows(), right: labels.len() });
    }
    let d = zt.cols();
    let mut sums = vec![vec![0.0; d]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (row, &c) in zt.iter_rows().zip(labels) {
        if c >= n_classes {
            return Err(Error::Label { label: c, n_classes });
        }
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(row) {
            *s += x.to_f64_lossy();
        }
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Coverage { class });
    }
    let means: Vec<f64> = sums.iter().zip(&counts).flat_map(|(s, &n)| s.iter().map(move |x| x / n as f64)).collect();
    let rows = normalized_rows(&Tensor::new(n_classes, d, means)?)?;
    Tensor::new(n_classes, d, rows.concat())
}

/// Assigns each row of `zv` to the most cosine-similar prototype (ties to the lower class).
pub fn prototype_classify<T: Scalar>(zv: &Tensor<T>, prototypes: &Tensor<f64>, labels: &[usize]) -> Result<ClassificationReport> {
    if zv.cols() != prototypes.cols() {
        return Err(Error::dim("prototype_classify", zv.shape(), prototypes.shape()));
    }
    if labels.len() != zv.rows() {
        return Err(Error::Alignment { what: "labels vs embedding rows".into(), left: zv.rows(), right: labels.len() });
    }
    if zv.rows() == 0 {
        return Err(Error::EmptyInput("classification needs at least one sample"));
    }
    let c = prototypes.rows();
    let p = normalized_rows(prototypes)?;
    let z = normalized_rows(zv)?;
    let mut confusion = vec![vec![0usize; c]; c];
    for (zi, &label) in z.iter().zip(labels) {
        if label >= c {
            return Err(Error::Label { label, n_classes: c });
        }
        let mut best = 0;
        let mut best_s = f64::NEG_INFINITY;
        for (k, pk) in p.iter().enumerate() {
            let s = dot(zi, pk);
            if s > best_s {
                best = k;
                best_s = s;
            }
        }
        confusion[label][best] += 1;
    }
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    Ok(ClassificationReport { accuracy: correct as f64 / labels.len() as f64, n_classes: c, confusion })
}

/// Writes `dim_0..dim_{d-1}[,label]` CSV that reads back bit-exactly.
pub fn export_embeddings<T: Scalar>(z: &Tensor<T>, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    write_matrix_csv(path, &z.cast::<f64>(), labels)
}

/// Everything the evaluation protocol reports for one set of embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub retrieval: RetrievalReport,
    pub classification: Option<ClassificationReport>,
}
