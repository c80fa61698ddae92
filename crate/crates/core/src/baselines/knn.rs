//! Nearest-neighbour voting restricted to the query's angle bin.

use crate::patch::N_BINS;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnnModel {
    pub k: usize,
    /// Per bin: stored descriptors and labels in insertion order.
    pub bins: Vec<Vec<(Vec<f64>, bool)>>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KnnModel {
    pub fn new(k: usize, items: impl IntoIterator<Item = (usize, Vec<f64>, bool)>) -> Self {
        let mut bins = vec![Vec::new(); N_BINS];
        for (b, d, l) in items {
            bins[b].push((d, l));
        }
        Self { k, bins }
    }

    /// Labels of the stored items of `bin`, nearest first; distance ties
    /// keep insertion order.
    pub fn ranked_labels(&self, query: &[f64], bin: usize, limit: usize) -> Vec<bool> {
        let store = &self.bins[bin];
        let mut d: Vec<(f64, usize)> = store
            .iter()
            .enumerate()
            .map(|(i, (x, _))| (dist2(x, query), i))
            .collect();
        let limit = limit.min(d.len());
        if limit == 0 {
            return Vec::new();
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if limit < d.len() {
            d.select_nth_unstable_by(limit - 1, cmp);
            d.truncate(limit);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| store[i].1).collect()
    }

    /// Majority vote of the `k` nearest same-bin items; ties and empty
    /// stores predict failure.
    pub fn predict(&self, query: &[f64], bin: usize) -> bool {
        vote(&self.ranked_labels(query, bin, self.k), self.k)
    }
}

/// Majority among the first `k` labels, ties negative.
pub fn vote(ranked: &[bool], k: usize) -> bool {
    let top = &ranked[..k.min(ranked.len())];
    let pos = top.iter().filter(|&&l| l).count();
    2 * pos > top.len()
}

/// Best `k` on the given queries (optimistic: chosen on the evaluation set
/// itself). Returns `(k, accuracy)`; ties keep the smaller `k`.
pub fn sweep_k(model: &KnnModel, queries: &[(Vec<f64>, usize, bool)], ks: &[usize]) -> Option<(usize, f64)> {
    let kmax = ks.iter().copied().max()?;
    let ranked: Vec<Vec<bool>> = queries
        .iter()
        .map(|(q, b, _)| model.ranked_labels(q, *b, kmax))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for &k in ks {
        let correct = ranked
            .iter()
            .zip(queries)
            .filter(|(r, (_, _, y))| vote(r, k) == *y)
            .count();
        let acc = correct as f64 / queries.len().max(1) as f64;
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((k, acc));
        }
    }
    best
}
