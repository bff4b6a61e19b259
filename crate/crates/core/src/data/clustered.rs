//! Labeled paired data: one latent prototype per class, seen through a fixed
//! random projection per modality plus modality-private noise.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PairedDataset, Provenance};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteredPairSpec {
    pub n_classes: usize,
    pub dim_v: usize,
    pub dim_t: usize,
    /// norm of every class prototype
    pub class_separation: f64,
    /// standard deviation of isotropic per-coordinate noise
    pub noise_scale: f64,
    pub n_per_class: usize,
    pub seed: u64,
    /// prototype dimension; defaults to `n_classes`
    #[serde(default)]
    pub latent_dim: Option<usize>,
    /// number of private low-rank nuisance factors per modality
    #[serde(default)]
    pub nuisance_dim: usize,
    /// standard deviation of each nuisance factor
    #[serde(default)]
    pub nuisance_scale: f64,
    /// number of class-independent style factors shared by both modalities
    #[serde(default)]
    pub style_dim: usize,
    /// standard deviation of each shared style factor
    #[serde(default)]
    pub style_scale: f64,
    /// standard deviation of the private corruption each modality adds to
    /// the shared style before projecting it
    #[serde(default)]
    pub style_noise: f64,
}

/// Fixed structure drawn once from the generator seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    spec: ClusteredPairSpec,
    /// n_classes × latent
    prototypes: DMatrix<f64>,
    proj_v: DMatrix<f64>,
    proj_t: DMatrix<f64>,
    nuis_v: DMatrix<f64>,
    nuis_t: DMatrix<f64>,
    style_v: DMatrix<f64>,
    style_t: DMatrix<f64>,
}

fn gaussian_matrix(stream: &Stream, index: u64, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    let mut rng = stream.at(index);
    // row-major fill so the draw order is independent of nalgebra's storage
    let vals: Vec<f64> = (0..rows * cols).map(|_| scale * standard_normal(&mut rng)).collect();
    DMatrix::from_row_slice(rows, cols, &vals)
}

impl ClusteredPairSpec {
    pub fn latent(&self) -> usize {
        self.latent_dim.unwrap_or(self.n_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("clustered data needs n_classes >= 2, got {}", self.n_classes)));
        }
        if self.dim_v == 0 || self.dim_t == 0 || self.latent() == 0 {
            return Err(Error::Config("clustered dims must be >= 1".into()));
        }
        if !(self.class_separation > 0.0) || !(self.noise_scale >= 0.0) || !(self.nuisance_scale >= 0.0)
            || !(self.style_scale >= 0.0)
            || !(self.style_noise >= 0.0)
        {
            return Err(Error::Config("class_separation must be > 0 and noise scales >= 0".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ClusterModel> {
        self.validate()?;
        let s = Stream::new(self.seed, "clusters");
        let latent = self.latent();
        let mut prototypes = gaussian_matrix(&s, 0, self.n_classes, latent, 1.0);
        for mut row in prototypes.row_iter_mut() {
            let n = row.norm();
            row *= self.class_separation / n;
        }
        let rank = prototypes.clone().svd(false, false).rank(1e-9 * self.class_separation);
        if rank < self.n_classes {
            return Err(Error::Config(format!(
                "class prototypes have rank {rank} < {} classes; raise latent_dim",
                self.n_classes
            )));
        }
        let scale = 1.0 / (latent as f64).sqrt();
        let proj_v = gaussian_matrix(&s, 1, self.dim_v, latent, scale);
        let proj_t = gaussian_matrix(&s, 2, self.dim_t, latent, scale);
        let nuis_v = gaussian_matrix(&s, 3, self.dim_v, self.nuisance_dim, 1.0);
        let nuis_t = gaussian_matrix(&s, 4, self.dim_t, self.nuisance_dim, 1.0);
        let style_v = gaussian_matrix(&s, 5, self.dim_v, self.style_dim, 1.0);
        let style_t = gaussian_matrix(&s, 6, self.dim_t, self.style_dim, 1.0);
        Ok(ClusterModel { spec: self.clone(), prototypes, proj_v, proj_t, nuis_v, nuis_t, style_v, style_t })
    }
}

impl ClusterModel {
    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    fn view(
        &self,
        proj: &DMatrix<f64>,
        nuis: &DMatrix<f64>,
        style_proj: &DMatrix<f64>,
        class: usize,
        style: &[f64],
        rng: &mut impl rand::Rng,
    ) -> Vec<f64> {
        let p = self.prototypes.row(class).transpose();
        let base = proj * p;
        let u: Vec<f64> = (0..self.spec.nuisance_dim).map(|_| self.spec.nuisance_scale * standard_normal(rng)).collect();
        let seen: Vec<f64> = style.iter().map(|s| s + self.spec.style_noise * standard_normal(rng)).collect();
        (0..proj.nrows())
            .map(|r| {
                let nuisance: f64 = (0..u.len()).map(|k| nuis[(r, k)] * u[k]).sum();
                let shared: f64 = (0..seen.len()).map(|k| style_proj[(r, k)] * seen[k]).sum();
                base[r] + nuisance + shared + self.spec.noise_scale * standard_normal(rng)
            })
            .collect()
    }

    /// Size of the finite training pool; 0 means every batch is fresh.
    pub fn train_pool(&self) -> usize {
        self.spec.n_classes * self.spec.n_per_class
    }

    /// Samples `start..start+count` of `stream` with their class labels.
    pub fn sample_range(&self, stream: &Stream, start: u64, count: usize) -> (Tensor<f64>, Tensor<f64>, Vec<usize>) {
        let idx: Vec<u64> = (start..start + count as u64).collect();
        self.sample_indices(stream, &idx)
    }

    /// Samples the given global indices of `stream`; index `i` always yields
    /// the same pair, its class drawn uniformly so that batch order carries no
    /// label information.
    pub fn sample_indices(&self, stream: &Stream, idx: &[u64]) -> (Tensor<f64>, Tensor<f64>, Vec<usize>) {
        let rows = idx.iter().map(|&i| {
            let mut rng = stream.at(i);
            let c = rng.random_range(0..self.spec.n_classes);
            (c, rng)
        });
        self.assemble(rows)
    }

    fn assemble(&self, rows: impl ExactSizeIterator<Item = (usize, ChaCha8Rng)>) -> (Tensor<f64>, Tensor<f64>, Vec<usize>) {
        let count = rows.len();
        let mut v = Vec::with_capacity(count * self.spec.dim_v);
        let mut t = Vec::with_capacity(count * self.spec.dim_t);
        let mut labels = Vec::with_capacity(count);
        for (c, mut rng) in rows {
            let style: Vec<f64> = (0..self.spec.style_dim).map(|_| self.spec.style_scale * standard_normal(&mut rng)).collect();
            v.extend(self.view(&self.proj_v, &self.nuis_v, &self.style_v, c, &style, &mut rng));
            t.extend(self.view(&self.proj_t, &self.nuis_t, &self.style_t, c, &style, &mut rng));
            labels.push(c);
        }
        (
            Tensor::new(count, self.spec.dim_v, v).expect("row lengths fixed by spec"),
            Tensor::new(count, self.spec.dim_t, t).expect("row lengths fixed by spec"),
            labels,
        )
    }
}

/// `n_classes · n_per_class` labeled pairs from the `"data"` stream, exactly
/// balanced and in shuffled class order.
pub fn gen_clustered_pairs(spec: &ClusteredPairSpec) -> Result<PairedDataset> {
    let model = spec.model()?;
    let n = spec.n_classes * spec.n_per_class;
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    labels.shuffle(&mut Stream::new(spec.seed, "data/labels").at(0));
    let stream = Stream::new(spec.seed, "data");
    let (xv, xt, labels) = model.assemble(labels.into_iter().enumerate().map(|(i, c)| (c, stream.at(i as u64))));
    Ok(PairedDataset { xv, xt, labels: Some(labels), provenance: Provenance::Clustered(spec.clone()) })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(noise: f64) -> ClusteredPairSpec {
        ClusteredPairSpec {
            n_classes: 4,
            dim_v: 6,
            dim_t: 5,
            class_separation: 3.0,
            noise_scale: noise,
            n_per_class: 5,
            seed: 17,
            latent_dim: None,
            nuisance_dim: 0,
            nuisance_scale: 0.0,
            style_dim: 0,
            style_scale: 0.0,
            style_noise: 0.0,
        }
    }

    #[test]
    fn zero_noise_collapses_classes() {
        let d = gen_clustered_pairs(&spec(0.0)).unwrap();
        let labels = d.labels.as_ref().unwrap();
        for i in 0..d.len() {
            for j in 0..d.len() {
                if labels[i] == labels[j] {
                    assert_eq!(d.xv.row(i), d.xv.row(j));
                    assert_eq!(d.xt.row(i), d.xt.row(j));
                }
            }
        }
        assert_ne!(d.xv.row(0), d.xv.row(1));
    }

    #[test]
    fn deterministic_and_labeled() {
        let a = gen_clustered_pairs(&spec(0.5)).unwrap();
        assert_eq!(a, gen_clustered_pairs(&spec(0.5)).unwrap());
        assert_eq!(a.len(), 20);
        let labels = a.labels.unwrap();
        assert_eq!(labels.iter().filter(|&&c| c == 2).count(), 5);
    }

    #[test]
    fn validation() {
        assert!(gen_clustered_pairs(&ClusteredPairSpec { n_classes: 1, ..spec(0.1) }).is_err());
        // 4 prototypes cannot have full row rank in a 2-D latent space
        assert!(gen_clustered_pairs(&ClusteredPairSpec { latent_dim: Some(2), ..spec(0.1) }).is_err());
    }

    #[test]
    fn nuisance_adds_private_variance() {
        let with = ClusteredPairSpec { nuisance_dim: 2, nuisance_scale: 2.0, ..spec(0.0) };
        let d = gen_clustered_pairs(&with).unwrap();
        assert_ne!(d.xv.row(0), d.xv.row(4));
    }
}
