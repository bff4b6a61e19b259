//! Jointly Gaussian paired modalities with closed-form information oracles.
//!
//! A sample is generated from a shared source `s ~ N(0, I_ds)`:
//!
//! ```text
//! xv = [ A·s + σv·εv ; ηv ]      xt = [ B·s + σt·εt ; ηt ]
//! ```
//!
//! where `ηv`, `ηt` are `dim_v_noise` / `dim_t_noise` independent unit-normal
//! nuisance coordinates private to each modality.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{PairedDataset, Provenance};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, Stream};

/// Condition number above which a covariance is refused by the oracles.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingMatrices {
    /// rows × dim_shared
    pub a: Vec<Vec<f64>>,
    /// rows × dim_shared
    pub b: Vec<Vec<f64>>,
    pub sigma_v: f64,
    pub sigma_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPairSpec {
    pub dim_shared: usize,
    #[serde(default)]
    pub dim_v_noise: usize,
    #[serde(default)]
    pub dim_t_noise: usize,
    /// Per-shared-coordinate correlation. Exclusive with `mixing`.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub mixing: Option<MixingMatrices>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Resolved linear-Gaussian model behind a [`GaussianPairSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma_v: f64,
    sigma_t: f64,
    dim_v_noise: usize,
    dim_t_noise: usize,
}

fn matrix(rows: &[Vec<f64>], cols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("mixing matrix {name} rows must have dim_shared = {cols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl GaussianPairSpec {
    /// `d` shared coordinates with correlation `rho`, no private coordinates.
    pub fn correlated(dim_shared: usize, rho: f64, n_samples: usize, seed: u64) -> Self {
        GaussianPairSpec { dim_shared, dim_v_noise: 0, dim_t_noise: 0, rho: Some(rho), mixing: None, n_samples, seed }
    }

    pub fn model(&self) -> Result<GaussianModel> {
        let ds = self.dim_shared;
        let (a, b, sigma_v, sigma_t) = match (&self.rho, &self.mixing) {
            (Some(rho), None) => {
                if !(rho.abs() < 1.0) {
                    return Err(Error::Config(format!("rho must lie in (-1, 1), got {rho}")));
                }
                let g = rho.abs().sqrt();
                let a = DMatrix::identity(ds, ds) * g;
                let b = DMatrix::identity(ds, ds) * (g * rho.signum());
                let s = (1.0 - rho.abs()).sqrt();
                (a, b, s, s)
            }
            (None, Some(m)) => {
                if !(m.sigma_v >= 0.0 && m.sigma_t >= 0.0) {
                    return Err(Error::Config("noise scales must be >= 0".into()));
                }
                (matrix(&m.a, ds, "a")?, matrix(&m.b, ds, "b")?, m.sigma_v, m.sigma_t)
            }
            _ => return Err(Error::Config("gaussian spec needs exactly one of `rho` or `mixing`".into())),
        };
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Config("mixing matrices must be finite".into()));
        }
        let model = GaussianModel { a, b, sigma_v, sigma_t, dim_v_noise: self.dim_v_noise, dim_t_noise: self.dim_t_noise };
        if model.dim_v() == 0 || model.dim_t() == 0 {
            return Err(Error::Config("each modality needs at least one coordinate".into()));
        }
        Ok(model)
    }
}

impl GaussianModel {
    pub fn dim_shared(&self) -> usize {
        self.a.ncols()
    }

    pub fn dim_v(&self) -> usize {
        self.a.nrows() + self.dim_v_noise
    }

    pub fn dim_t(&self) -> usize {
        self.b.nrows() + self.dim_t_noise
    }

    /// Joint covariance of `(xv, xt)`, xv block first.
    pub fn covariance(&self) -> DMatrix<f64> {
        let (dv, dt) = (self.dim_v(), self.dim_t());
        let (rv, rt) = (self.a.nrows(), self.b.nrows());
        let mut c = DMatrix::zeros(dv + dt, dv + dt);
        let vv = &self.a * self.a.transpose() + DMatrix::identity(rv, rv) * self.sigma_v.powi(2);
        let tt = &self.b * self.b.transpose() + DMatrix::identity(rt, rt) * self.sigma_t.powi(2);
        let vt = &self.a * self.b.transpose();
        c.view_mut((0, 0), (rv, rv)).copy_from(&vv);
        c.view_mut((dv, dv), (rt, rt)).copy_from(&tt);
        c.view_mut((0, dv), (rv, rt)).copy_from(&vt);
        c.view_mut((dv, 0), (rt, rv)).copy_from(&vt.transpose());
        for k in rv..dv {
            c[(k, k)] = 1.0;
        }
        for k in rt..dt {
            c[(dv + k, dv + k)] = 1.0;
        }
        c
    }

    /// One sample drawn from sub-stream `index`: returns `(xv, xt)` rows.
    fn sample(&self, stream: &Stream, index: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream.at(index);
        let s: Vec<f64> = (0..self.dim_shared()).map(|_| standard_normal(&mut rng)).collect();
        let mut xv = Vec::with_capacity(self.dim_v());
        for i in 0..self.a.nrows() {
            let signal: f64 = (0..s.len()).map(|k| self.a[(i, k)] * s[k]).sum();
            xv.push(signal + self.sigma_v * standard_normal(&mut rng));
        }
        let mut xt = Vec::with_capacity(self.dim_t());
        for i in 0..self.b.nrows() {
            let signal: f64 = (0..s.len()).map(|k| self.b[(i, k)] * s[k]).sum();
            xt.push(signal + self.sigma_t * standard_normal(&mut rng));
        }
        xv.extend((0..self.dim_v_noise).map(|_| standard_normal(&mut rng)));
        xt.extend((0..self.dim_t_noise).map(|_| standard_normal(&mut rng)));
        (xv, xt)
    }

    /// Samples `start..start+count` of `stream`.
    pub fn sample_range(&self, stream: &Stream, start: u64, count: usize) -> (Tensor<f64>, Tensor<f64>) {
        let mut v = Vec::with_capacity(count * self.dim_v());
        let mut t = Vec::with_capacity(count * self.dim_t());
        for i in 0..count as u64 {
            let (a, b) = self.sample(stream, start + i);
            v.extend(a);
            t.extend(b);
        }
        (
            Tensor::new(count, self.dim_v(), v).expect("row lengths fixed by model"),
            Tensor::new(count, self.dim_t(), t).expect("row lengths fixed by model"),
        )
    }
}

/// Dataset of `spec.n_samples` pairs from the `"data"` stream of `spec.seed`.
pub fn gen_gaussian_pairs(spec: &GaussianPairSpec) -> Result<PairedDataset> {
    let model = spec.model()?;
    let (xv, xt) = model.sample_range(&Stream::new(spec.seed, "data"), 0, spec.n_samples);
    Ok(PairedDataset { xv, xt, labels: None, provenance: Provenance::Gaussian(spec.clone()) })
}

fn check_conditioning(cov: &DMatrix<f64>) -> Result<()> {
    if cov.nrows() != cov.ncols() || cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::IllConditioned { cond: f64::INFINITY });
    }
    let asym = (cov - cov.transpose()).abs().max();
    if asym > 1e-12 * cov.abs().max().max(1.0) {
        return Err(Error::Config(format!("covariance is not symmetric (max asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    Ok(())
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = m.clone().cholesky().ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Principal submatrix on the given (sorted) index set.
fn sub(cov: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov[(idx[i], idx[j])])
}

/// `I(U;V)` in nats for a joint covariance whose first `dim_u` coordinates are `U`.
pub fn gaussian_mi_from_covariance(cov: &DMatrix<f64>, dim_u: usize) -> Result<f64> {
    check_conditioning(cov)?;
    let n = cov.nrows();
    let u: Vec<usize> = (0..dim_u).collect();
    let v: Vec<usize> = (dim_u..n).collect();
    Ok(0.5 * (log_det_spd(&sub(cov, &u))? + log_det_spd(&sub(cov, &v))? - log_det_spd(cov)?))
}

/// Closed-form `I(Xv;Xt)` of this generator.
pub fn gaussian_mi(spec: &GaussianPairSpec) -> Result<f64> {
    let model = spec.model()?;
    gaussian_mi_from_covariance(&model.covariance(), model.dim_v())
}

/// Block sizes of a `(Z, X, X')` covariance, in that order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripleBlocks {
    pub z: usize,
    pub x: usize,
    pub cond: usize,
}

/// Closed-form `I(Z;X|X')` from the joint covariance of `(Z, X, X')`.
pub fn gaussian_conditional_mi(cov: &DMatrix<f64>, blocks: TripleBlocks) -> Result<f64> {
    let n = blocks.z + blocks.x + blocks.cond;
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::dim("gaussian_conditional_mi", (cov.nrows(), cov.ncols()), (n, n)));
    }
    check_conditioning(cov)?;
    let z: Vec<usize> = (0..blocks.z).collect();
    let x: Vec<usize> = (blocks.z..blocks.z + blocks.x).collect();
    let c: Vec<usize> = (blocks.z + blocks.x..n).collect();
    let zc: Vec<usize> = z.iter().chain(&c).copied().collect();
    let xc: Vec<usize> = x.iter().chain(&c).copied().collect();
    let ld_zc = log_det_spd(&sub(cov, &zc))?;
    let ld_xc = log_det_spd(&sub(cov, &xc))?;
    let ld_c = log_det_spd(&sub(cov, &c))?;
    let ld_all = log_det_spd(cov)?;
    Ok(0.5 * (ld_zc + ld_xc - ld_c - ld_all))
}

/// Rows `start..start+count` of `stream` drawn from `N(0, cov)` via the Cholesky factor.
pub fn sample_mvn(cov: &DMatrix<f64>, stream: &Stream, start: u64, count: usize) -> Result<Tensor<f64>> {
    check_conditioning(cov)?;
    let l = cov.clone().cholesky().ok_or(Error::IllConditioned { cond: f64::INFINITY })?.unpack();
    let d = cov.nrows();
    let mut data = Vec::with_capacity(count * d);
    for i in start..start + count as u64 {
        let mut rng = stream.at(i);
        let eps: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        data.extend((0..d).map(|r| (0..=r).map(|k| l[(r, k)] * eps[k]).sum::<f64>()));
    }
    Tensor::new(count, d, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let mi = |rho| gaussian_mi(&GaussianPairSpec::correlated(1, rho, 10, 0)).unwrap();
        assert!((mi(0.5) - 0.143841).abs() < 1e-6);
        assert!((mi(0.9) - 0.830366).abs() < 1e-6);
        assert!((mi(-0.9) - mi(0.9)).abs() < 1e-12);
        let indep = GaussianPairSpec { dim_shared: 0, dim_v_noise: 2, dim_t_noise: 3, ..GaussianPairSpec::correlated(0, 0.0, 10, 0) };
        assert!(gaussian_mi(&indep).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mi_adds_over_independent_coordinates() {
        let two = GaussianPairSpec { dim_v_noise: 1, ..GaussianPairSpec::correlated(2, 0.5, 10, 0) };
        assert!((gaussian_mi(&two).unwrap() - 2.0 * 0.5 * (1.0f64 / 0.75).ln()).abs() < 1e-12);
    }

    #[test]
    fn fully_shared_signal_duplicates_rows() {
        let spec = GaussianPairSpec {
            dim_shared: 2,
            dim_v_noise: 0,
            dim_t_noise: 0,
            rho: None,
            mixing: Some(MixingMatrices { a: vec![vec![1.0, 0.0], vec![0.0, 1.0]], b: vec![vec![1.0, 0.0], vec![0.0, 1.0]], sigma_v: 0.0, sigma_t: 0.0 }),
            n_samples: 20,
            seed: 3,
        };
        let d = gen_gaussian_pairs(&spec).unwrap();
        assert_eq!(d.xv, d.xt);
        // singular joint covariance
        assert!(matches!(gaussian_mi(&spec), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn invalid_specs() {
        assert!(GaussianPairSpec::correlated(1, 1.0, 10, 0).model().is_err());
        let both = GaussianPairSpec { mixing: Some(MixingMatrices { a: vec![vec![1.0]], b: vec![vec![1.0]], sigma_v: 1.0, sigma_t: 1.0 }), ..GaussianPairSpec::correlated(1, 0.5, 10, 0) };
        assert!(both.model().is_err());
        let ragged = GaussianPairSpec { rho: None, mixing: Some(MixingMatrices { a: vec![vec![1.0, 2.0]], b: vec![vec![1.0]], sigma_v: 1.0, sigma_t: 1.0 }), ..GaussianPairSpec::correlated(1, 0.5, 10, 0) };
        assert!(ragged.model().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GaussianPairSpec { dim_v_noise: 2, dim_t_noise: 1, ..GaussianPairSpec::correlated(2, 0.7, 50, 9) };
        assert_eq!(gen_gaussian_pairs(&spec).unwrap(), gen_gaussian_pairs(&spec).unwrap());
        let other = GaussianPairSpec { seed: 10, ..spec.clone() };
        assert_ne!(gen_gaussian_pairs(&spec).unwrap().xv, gen_gaussian_pairs(&other).unwrap().xv);
        let d = gen_gaussian_pairs(&spec).unwrap();
        assert_eq!((d.xv.cols(), d.xt.cols()), (4, 3));
    }

    #[test]
    fn markov_chain_conditional_mi_is_zero() {
        // X' ~ N(0,1), X = 0.8 X' + e1, Z = 0.5 X' + e2
        let (a, b) = (0.8, 0.5);
        let cov = DMatrix::from_row_slice(3, 3, &[
            b * b + 0.3, a * b, b,
            a * b, a * a + 0.4, a,
            b, a, 1.0,
        ]);
        let v = gaussian_conditional_mi(&cov, TripleBlocks { z: 1, x: 1, cond: 1 }).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn duplicate_block_is_ill_conditioned() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.3, 1.0, 1.0, 0.3, 0.3, 0.3, 1.0]);
        assert!(matches!(gaussian_conditional_mi(&cov, TripleBlocks { z: 1, x: 1, cond: 1 }), Err(Error::IllConditioned { .. })));
    }
}
