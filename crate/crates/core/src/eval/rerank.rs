//! Re-ranking of the best-scoring grasps by how well their surroundings
//! score, for robustness to small execution errors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::collect::{Choice, CollectError, GraspPolicy, SceneView};
use crate::curriculum::{sample_centers, score_centers, PriorMatrix};
use crate::learner::Network;
use crate::patch::{PatchGeometry, N_BINS};
use crate::scene::GraspConfig;

/// Scores every bin of patches centred at given points of a scene.
pub trait PatchScorer: Sync {
    fn score(&self, view: &SceneView, centers: &[(f64, f64)]) -> Result<Vec<[f64; N_BINS]>, EvalError>;
}

pub struct NetScorer<'a> {
    pub net: &'a Network,
    pub geo: &'a PatchGeometry,
}

impl PatchScorer for NetScorer<'_> {
    fn score(&self, view: &SceneView, centers: &[(f64, f64)]) -> Result<Vec<[f64; N_BINS]>, EvalError> {
        Ok(score_centers(self.net, view, self.geo, centers)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankConfig {
    pub top_k: usize,
    pub n_neighbors: usize,
    pub radius_mm: f64,
    /// Candidate patches sampled per decision.
    pub n_patches: usize,
    /// Score neighbours at the candidate's bin instead of their best bin.
    pub same_bin: bool,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            n_neighbors: 10,
            radius_mm: 5.0,
            n_patches: 800,
            same_bin: false,
        }
    }
}

impl RerankConfig {
    /// Plain arg-max selection.
    pub fn argmax(n_patches: usize) -> Self {
        Self {
            top_k: 1,
            n_neighbors: 0,
            n_patches,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankCandidate {
    pub patch: usize,
    pub bin: usize,
    pub center: (f64, f64),
    pub original_score: f64,
    pub reranked_score: f64,
}

/// The `k` highest cells of a score matrix; ties keep the lower patch,
/// then the lower bin.
pub fn top_cells(entries: &[[f64; N_BINS]], k: usize) -> Vec<(usize, usize)> {
    let mut cells: Vec<(usize, usize)> = (0..entries.len())
        .flat_map(|i| (0..N_BINS).map(move |j| (i, j)))
        .collect();
    cells.sort_by(|a, b| entries[b.0][b.1].total_cmp(&entries[a.0][a.1]).then(a.cmp(b)));
    cells.truncate(k);
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub grasp: GraspConfig,
    pub candidates: Vec<RerankCandidate>,
    /// Index of the executed candidate.
    pub chosen: usize,
}

/// Uniform point in a disc around `c`, clamped to the workspace.
fn disc_point(c: (f64, f64), radius: f64, w: f64, h: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    ((c.0 + r * phi.cos()).clamp(0.0, w), (c.1 + r * phi.sin()).clamp(0.0, h))
}

/// Picks a grasp: sample candidate patches, keep the top-`k` cells, score
/// each by the mean best-bin score of its neighbourhood, execute the best.
/// Ties go to the higher-ranked candidate. With no neighbours a
/// candidate's reranked score is its own score.
pub fn rerank<S: PatchScorer + ?Sized>(
    scorer: &S,
    view: &SceneView,
    cfg: &RerankConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RerankOutcome, EvalError> {
    if cfg.top_k == 0 || cfg.n_patches == 0 {
        return Err(EvalError::Config(
            "rerank needs top_k and n_patches of at least 1".into(),
        ));
    }
    let centers = sample_centers(view, cfg.n_patches, rng)?;
    let prior = PriorMatrix {
        entries: scorer.score(view, &centers)?,
        centers,
    };
    let cells = top_cells(&prior.entries, cfg.top_k);
    let ws = view.scene.workspace();
    let neighbours: Vec<(f64, f64)> = cells
        .iter()
        .flat_map(|&(i, _)| {
            let c = prior.centers[i];
            (0..cfg.n_neighbors)
                .map(|_| disc_point(c, cfg.radius_mm, ws.width_mm, ws.height_mm, rng))
                .collect::<Vec<_>>()
        })
        .collect();
    let nscores = if neighbours.is_empty() {
        Vec::new()
    } else {
        scorer.score(view, &neighbours)?
    };
    let candidates: Vec<RerankCandidate> = cells
        .iter()
        .enumerate()
        .map(|(c, &(i, j))| {
            let own = prior.entries[i][j];
            let reranked = if cfg.n_neighbors == 0 {
                own
            } else {
                let rows = &nscores[c * cfg.n_neighbors..(c + 1) * cfg.n_neighbors];
                let pick = |r: &[f64; N_BINS]| {
                    if cfg.same_bin {
                        r[j]
                    } else {
                        r.iter().cloned().fold(f64::MIN, f64::max)
                    }
                };
                rows.iter().map(pick).sum::<f64>() / cfg.n_neighbors as f64
            };
            RerankCandidate {
                patch: i,
                bin: j,
                center: prior.centers[i],
                original_score: own,
                reranked_score: reranked,
            }
        })
        .collect();
    let best = (0..candidates.len()).fold(0, |b, c| {
        if candidates[c].reranked_score > candidates[b].reranked_score {
            c
        } else {
            b
        }
    });
    let grasp = prior.grasp(candidates[best].patch, candidates[best].bin);
    Ok(RerankOutcome {
        grasp,
        candidates,
        chosen: best,
    })
}

/// Grasp policy backed by [`rerank`]; every decision samples fresh
/// candidates.
pub struct RerankPolicy<'a, S: PatchScorer + ?Sized> {
    pub scorer: &'a S,
    pub cfg: RerankConfig,
}

impl<S: PatchScorer + ?Sized> GraspPolicy for RerankPolicy<'_, S> {
    fn choose(&mut self, view: &SceneView, rng: &mut ChaCha8Rng) -> Result<Choice, CollectError> {
        let out = rerank(self.scorer, view, &self.cfg, rng).map_err(|e| match e {
            EvalError::Collect(c) => c,
            other => CollectError::Policy(other.to_string()),
        })?;
        Ok(Choice {
            grasp: out.grasp,
            score: Some(out.candidates[out.chosen].original_score),
        })
    }
}

/// Executes the highest-scoring cell among freshly sampled patches.
pub struct ArgmaxPolicy<'a, S: PatchScorer + ?Sized> {
    pub scorer: &'a S,
    pub n_patches: usize,
}

impl<S: PatchScorer + ?Sized> GraspPolicy for ArgmaxPolicy<'_, S> {
    fn choose(&mut self, view: &SceneView, rng: &mut ChaCha8Rng) -> Result<Choice, CollectError> {
        let centers = sample_centers(view, self.n_patches, rng)?;
        let entries = self
            .scorer
            .score(view, &centers)
            .map_err(|e| CollectError::Policy(e.to_string()))?;
        let prior = PriorMatrix { entries, centers };
        let (i, j) = prior.argmax();
        Ok(Choice {
            grasp: prior.grasp(i, j),
            score: Some(prior.entries[i][j]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_cells_break_ties_by_index() {
        let mut e = vec![[0.5; N_BINS]; 3];
        e[2][4] = 0.9;
        assert_eq!(top_cells(&e, 3), vec![(2, 4), (0, 0), (0, 1)]);
        assert_eq!(top_cells(&[[0.1; N_BINS]], 1), vec![(0, 0)]);
    }
}
