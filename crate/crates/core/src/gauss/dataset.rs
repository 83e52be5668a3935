use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::covariance::{gain_with_factor, residual_variance, sample_covariance};
use super::{GaussError, GaussTaskSpec};
use crate::cells::Batch;
use crate::numeric::linalg::{cholesky, submatrix};
use crate::numeric::rng::streams;
use crate::numeric::{apply_primitive, Primitive, RngStream, Tensor};
use crate::util::digest_f64_slices;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// 80/10/10 assignment of `n` rows by a seeded shuffle.
    pub fn assign(n: usize, seed: u64) -> Vec<Split> {
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::new(seed, streams::SPLIT).shuffle(&mut order);
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        let mut splits = vec![Split::Test; n];
        for (pos, &row) in order.iter().enumerate() {
            if pos < n_train {
                splits[row] = Split::Train;
            } else if pos < n_train + n_val {
                splits[row] = Split::Val;
            }
        }
        splits
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// Sampled rows plus everything needed to produce exact targets. Targets
/// are not stored; `gains[t - 1]` maps the first `chunk * t` observed
/// values of a row to `E[y | x_prefix]`.
#[derive(Clone, Debug)]
pub struct GaussDataset {
    pub spec: GaussTaskSpec,
    pub sigma: Tensor,
    samples: Tensor,
    splits: Vec<Split>,
    gains: Vec<Tensor>,
}

impl GaussDataset {
    pub(crate) fn from_parts(spec: GaussTaskSpec, sigma: Tensor, samples: Tensor, splits: Vec<Split>) -> Result<Self, GaussError> {
        spec.validate()?;
        let d = spec.dim();
        if sigma.shape() != [d, d] {
            return Err(GaussError::Spec(format!("covariance shape {:?} does not match dimension {d}", sigma.shape())));
        }
        if samples.shape() != [spec.n_samples, d] || splits.len() != spec.n_samples {
            return Err(GaussError::Spec("sample count does not match the spec".into()));
        }
        let observed: Vec<usize> = (0..spec.d_x).collect();
        let l_xx = cholesky(&submatrix(&sigma, &observed, &observed))?;
        let unobserved = Self::unobserved_of(&spec);
        let gains = (1..=spec.timesteps)
            .map(|t| {
                let k: Vec<usize> = (0..spec.chunk * t).collect();
                gain_with_factor(&sigma, &submatrix(&l_xx, &k, &k), &unobserved)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            spec,
            sigma,
            samples,
            splits,
            gains,
        })
    }

    fn unobserved_of(spec: &GaussTaskSpec) -> Vec<usize> {
        (spec.d_x..spec.dim()).collect()
    }

    pub fn unobserved_indices(&self) -> Vec<usize> {
        Self::unobserved_of(&self.spec)
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    /// Full row `[x, y]`.
    pub fn row(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn observed(&self, i: usize) -> &[f64] {
        &self.row(i)[..self.spec.d_x]
    }

    pub fn unobserved(&self, i: usize) -> &[f64] {
        &self.row(i)[self.spec.d_x..]
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Gain for timestep `t` in `1..=T`.
    pub fn gain(&self, t: usize) -> &Tensor {
        &self.gains[t - 1]
    }

    /// `E[y | x_1..x_{chunk t}]` for row `i`, `t` in `1..=T`.
    pub fn target(&self, i: usize, t: usize) -> Vec<f64> {
        let k = self.spec.chunk * t;
        let g = self.gain(t);
        let x = &self.observed(i)[..k];
        (0..self.spec.d_y)
            .map(|r| g.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn targets(&self, i: usize) -> Vec<Vec<f64>> {
        (1..=self.spec.timesteps).map(|t| self.target(i, t)).collect()
    }

    /// Expected squared error per variable of the exact conditional mean
    /// against `y` after `t` steps.
    pub fn oracle_residual(&self, t: usize) -> Result<f64, GaussError> {
        residual_variance(&self.sigma, self.spec.chunk * t, &self.unobserved_indices())
    }

    pub fn sigma_digest(&self) -> String {
        digest_f64_slices([self.sigma.data()])
    }

    /// Time-major regression batch over `rows`.
    pub fn batch(&self, rows: &[usize], final_only: bool) -> Batch {
        let (chunk, b) = (self.spec.chunk, rows.len());
        let mut inputs = Vec::with_capacity(self.spec.timesteps);
        let mut targets = Vec::with_capacity(self.spec.timesteps);
        for t in 1..=self.spec.timesteps {
            let lo = chunk * (t - 1);
            inputs.push(Tensor::from_fn2(b, chunk, |r, j| self.observed(rows[r])[lo + j]));
            let k = chunk * t;
            let prefix = Tensor::from_fn2(b, k, |r, j| self.observed(rows[r])[j]);
            targets.push(apply_primitive(&Primitive::MatMulTransB, &[&prefix, self.gain(t)]).expect("conforming gain"));
        }
        Batch::Regression {
            inputs,
            targets,
            final_only,
        }
    }
}

/// Draws `Σ`, samples rows `L z` from per-row substreams and assigns splits.
pub fn build_dataset(spec: &GaussTaskSpec) -> Result<GaussDataset, GaussError> {
    spec.validate()?;
    let d = spec.dim();
    let sigma = sample_covariance(d, spec.sparsity, &mut RngStream::new(spec.seed, streams::COVARIANCE))?;
    let l = cholesky(&sigma)?;
    let mut z = Tensor::zeros(&[spec.n_samples, d]);
    for i in 0..spec.n_samples {
        let mut rng = RngStream::new(spec.seed, streams::SAMPLE_BASE + i as u64);
        for v in &mut z.data_mut()[i * d..(i + 1) * d] {
            *v = rng.normal();
        }
    }
    let samples = apply_primitive(&Primitive::MatMulTransB, &[&z, &l])?;
    GaussDataset::from_parts(*spec, sigma, samples, Split::assign(spec.n_samples, spec.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::conditional_expectation;

    fn small() -> GaussTaskSpec {
        GaussTaskSpec {
            d_x: 12,
            d_y: 3,
            chunk: 4,
            timesteps: 3,
            sparsity: 0.2,
            n_samples: 50,
            seed: 7,
        }
    }

    #[test]
    fn split_sizes() {
        let s = Split::assign(20_000, 3);
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (16_000, 2_000, 2_000));
    }

    #[test]
    fn final_targets_match_direct_conditioning() {
        let ds = build_dataset(&small()).unwrap();
        let unobserved = ds.unobserved_indices();
        for i in [0, 17, 49] {
            let direct = conditional_expectation(&ds.sigma, ds.observed(i), &unobserved).unwrap();
            for (a, b) in ds.target(i, 3).iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn targets_ignore_later_observations() {
        let ds = build_dataset(&small()).unwrap();
        let mut samples = ds.samples().clone();
        for j in 8..12 {
            samples.set2(5, j, 100.0 + j as f64);
        }
        let perturbed = GaussDataset::from_parts(ds.spec, ds.sigma.clone(), samples, ds.splits().to_vec()).unwrap();
        for t in 1..=2 {
            assert_eq!(ds.target(5, t), perturbed.target(5, t));
        }
        assert_ne!(ds.target(5, 3), perturbed.target(5, 3));
    }

    #[test]
    fn batch_layout() {
        let ds = build_dataset(&small()).unwrap();
        let Batch::Regression { inputs, targets, .. } = ds.batch(&[3, 9], false) else {
            panic!("regression batch")
        };
        assert_eq!(inputs.len(), 3);
        assert_eq!(inputs[1].shape(), &[2, 4]);
        assert_eq!(inputs[1].row(1), &ds.observed(9)[4..8]);
        for (a, b) in targets[2].row(0).iter().zip(ds.target(3, 3)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = build_dataset(&small()).unwrap();
        let b = build_dataset(&small()).unwrap();
        assert!(a.samples().bit_eq(b.samples()));
        let c = build_dataset(&GaussTaskSpec { seed: 8, ..small() }).unwrap();
        assert!(!a.samples().bit_eq(c.samples()));
    }
}
