//! Comparison methods: the principal-axis heuristic, and HoG descriptors
//! classified by per-bin kNN or per-bin linear SVMs.

pub mod heuristic;
pub mod hog;
pub mod knn;
pub mod svm;

use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::learner::checkpoint::{read_checkpoint, write_checkpoint};
use crate::learner::LearnError;
use crate::patch::{TrainingSample, N_BINS};

pub use heuristic::{
    axis_angle_error, heuristic_predict, optimistic_param_select, patch_principal, principal_axes, sym_eigen2,
    ExtentMode, HeuristicParams, Principal,
};
pub use hog::{hog, HogConfig};
pub use knn::{sweep_k, KnnModel};
pub use svm::{svm_train, LinearSvm, SvmConfig, SvmModel};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Container(#[from] LearnError),
}

/// HoG descriptor, angle bin and label of every sample, in input order.
pub fn describe(samples: &[TrainingSample], cfg: &HogConfig) -> Result<Vec<(Vec<f64>, usize, bool)>, BaselineError> {
    samples
        .par_iter()
        .map(|s| Ok((hog(&s.pixels, cfg)?, s.bin.index(), s.label)))
        .collect()
}

fn field<'a>(desc: &'a str, key: &str) -> Result<&'a str, BaselineError> {
    desc.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .ok_or_else(|| BaselineError::Format(format!("descriptor lacks `{key}`: {desc}")))
}

fn num<T: std::str::FromStr>(desc: &str, key: &str) -> Result<T, BaselineError> {
    field(desc, key)?
        .parse()
        .map_err(|_| BaselineError::Format(format!("bad `{key}` in {desc}")))
}

impl SvmModel {
    pub fn save<W: Write>(&self, w: W) -> Result<(), BaselineError> {
        let dim = self.bins.first().map_or(0, |b| b.w.len());
        let mut params = Vec::with_capacity(N_BINS * (dim + 1));
        for b in &self.bins {
            params.extend_from_slice(&b.w);
            params.push(b.b);
        }
        let desc = format!("svm bins={} dim={dim} c={:e}", self.bins.len(), self.c);
        Ok(write_checkpoint(w, &desc, &params)?)
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, BaselineError> {
        let (desc, params) = read_checkpoint(r)?;
        if !desc.starts_with("svm ") {
            return Err(BaselineError::Format(format!("not an svm model: {desc}")));
        }
        let bins: usize = num(&desc, "bins")?;
        let dim: usize = num(&desc, "dim")?;
        if params.len() != bins * (dim + 1) {
            return Err(BaselineError::Format(format!("{} values for {desc}", params.len())));
        }
        let bins = params
            .chunks_exact(dim + 1)
            .map(|c| LinearSvm {
                w: c[..dim].to_vec(),
                b: c[dim],
            })
            .collect();
        Ok(SvmModel {
            c: num(&desc, "c")?,
            bins,
        })
    }
}

impl KnnModel {
    /// Stored items are written bin by bin as `descriptor…, label`.
    pub fn save<W: Write>(&self, w: W) -> Result<(), BaselineError> {
        let dim = self.bins.iter().flatten().next().map_or(0, |(d, _)| d.len());
        let counts: Vec<String> = self.bins.iter().map(|b| b.len().to_string()).collect();
        let mut params = Vec::new();
        for (d, l) in self.bins.iter().flatten() {
            params.extend_from_slice(d);
            params.push(if *l { 1.0 } else { 0.0 });
        }
        let desc = format!("knn k={} dim={dim} counts={}", self.k, counts.join(","));
        Ok(write_checkpoint(w, &desc, &params)?)
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, BaselineError> {
        let (desc, params) = read_checkpoint(r)?;
        if !desc.starts_with("knn ") {
            return Err(BaselineError::Format(format!("not a knn model: {desc}")));
        }
        let dim: usize = num(&desc, "dim")?;
        let counts = field(&desc, "counts")?
            .split(',')
            .map(|c| {
                c.parse::<usize>()
                    .map_err(|_| BaselineError::Format(format!("bad counts in {desc}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if params.len() != counts.iter().sum::<usize>() * (dim + 1) {
            return Err(BaselineError::Format(format!("{} values for {desc}", params.len())));
        }
        let mut chunks = params.chunks_exact(dim + 1);
        let bins = counts
            .iter()
            .map(|&n| {
                chunks
                    .by_ref()
                    .take(n)
                    .map(|c| (c[..dim].to_vec(), c[dim] > 0.5))
                    .collect()
            })
            .collect();
        Ok(KnnModel {
            k: num(&desc, "k")?,
            bins,
        })
    }
}

impl HeuristicParams {
    pub fn save<W: Write>(&self, w: W) -> Result<(), BaselineError> {
        let mode = match self.mode {
            ExtentMode::Extent => "extent",
            ExtentMode::RawEigenvalue => "raw_eigenvalue",
        };
        let params = [self.angle_error_threshold_deg, self.eigenvalue_limit];
        Ok(write_checkpoint(w, &format!("heuristic mode={mode}"), &params)?)
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, BaselineError> {
        let (desc, params) = read_checkpoint(r)?;
        let mode = match field(&desc, "mode")? {
            "extent" if desc.starts_with("heuristic ") => ExtentMode::Extent,
            "raw_eigenvalue" if desc.starts_with("heuristic ") => ExtentMode::RawEigenvalue,
            _ => return Err(BaselineError::Format(format!("not a heuristic model: {desc}"))),
        };
        let [t, l] = params[..] else {
            return Err(BaselineError::Format(format!("{} values for {desc}", params.len())));
        };
        Ok(HeuristicParams {
            angle_error_threshold_deg: t,
            eigenvalue_limit: l,
            mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn models_round_trip() {
        let svm = SvmModel {
            c: 0.1,
            bins: (0..N_BINS)
                .map(|i| LinearSvm {
                    w: vec![i as f64, -0.25, 1e-9],
                    b: 0.5 - i as f64,
                })
                .collect(),
        };
        let mut buf = Vec::new();
        svm.save(&mut buf).unwrap();
        assert_eq!(SvmModel::load(&buf[..]).unwrap(), svm);
        assert!(KnnModel::load(&buf[..]).is_err());

        let knn = KnnModel::new(
            3,
            vec![
                (2, vec![1.0, 2.0], true),
                (2, vec![0.5, 0.0], false),
                (17, vec![3.0, 3.0], true),
            ],
        );
        let mut buf = Vec::new();
        knn.save(&mut buf).unwrap();
        assert_eq!(KnnModel::load(&buf[..]).unwrap(), knn);

        let h = HeuristicParams {
            angle_error_threshold_deg: 15.0,
            eigenvalue_limit: 4.5,
            mode: ExtentMode::RawEigenvalue,
        };
        let mut buf = Vec::new();
        h.save(&mut buf).unwrap();
        assert_eq!(HeuristicParams::load(&buf[..]).unwrap(), h);
    }
}
