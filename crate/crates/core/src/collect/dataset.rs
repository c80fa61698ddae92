//! Trial records, dataset persistence and summary statistics.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CollectConfig, CollectError};
use crate::scene::{parse_scenes, write_scenes, GraspConfig, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// Index into [`Dataset::scenes`]: the scene as it was before the trial.
    pub scene_id: u32,
    pub grasp: GraspConfig,
    pub label: bool,
    pub stage: u32,
    pub patch_path: String,
    /// Score the collecting policy gave this grasp; not persisted.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub stage: u32,
    /// Names of the shapes scenes were built from.
    pub objects: Vec<String>,
    pub config: CollectConfig,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<TrialRecord>,
    pub scenes: Vec<Scene>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            records: Vec::new(),
            scenes: Vec::new(),
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scene_of(&self, record: &TrialRecord) -> &Scene {
        &self.scenes[record.scene_id as usize]
    }

    /// Appends another dataset's records and scenes, re-indexing scene ids.
    pub fn append(&mut self, other: Dataset) {
        let offset = self.scenes.len() as u32;
        self.scenes.extend(other.scenes);
        self.records.extend(other.records.into_iter().map(|mut r| {
            r.scene_id += offset;
            r
        }));
    }

    /// The first `n` records (and the scenes they reference).
    pub fn truncated(&self, n: usize) -> Dataset {
        let records: Vec<TrialRecord> = self.records.iter().take(n).cloned().collect();
        let n_scenes = records.last().map_or(0, |r| r.scene_id as usize + 1);
        Dataset {
            records,
            scenes: self.scenes[..n_scenes].to_vec(),
            provenance: self.provenance.clone(),
        }
    }

    pub(crate) fn assign_patch_paths(&mut self) {
        for (i, r) in self.records.iter_mut().enumerate() {
            r.patch_path = format!("patches/{i:06}.pgm");
        }
    }

    /// Writes `trials.csv`, `scenes.txt` and `provenance.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), CollectError> {
        fs::create_dir_all(dir)?;
        write_trials_csv(&self.records, fs::File::create(dir.join("trials.csv"))?)?;
        fs::write(dir.join("scenes.txt"), write_scenes(&self.scenes))?;
        let prov = serde_json::to_string_pretty(&self.provenance).map_err(|e| CollectError::Format(e.to_string()))?;
        fs::write(dir.join("provenance.json"), prov + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset, CollectError> {
        let records = read_trials_csv(fs::File::open(dir.join("trials.csv"))?)?;
        let scenes = parse_scenes(&fs::read_to_string(dir.join("scenes.txt"))?)?;
        let provenance = serde_json::from_str(&fs::read_to_string(dir.join("provenance.json"))?)
            .map_err(|e| CollectError::Format(e.to_string()))?;
        if let Some(r) = records.iter().find(|r| r.scene_id as usize >= scenes.len()) {
            return Err(CollectError::Format(format!(
                "record references missing scene {}",
                r.scene_id
            )));
        }
        Ok(Dataset {
            records,
            scenes,
            provenance,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    scene_id: u32,
    x_mm: f64,
    y_mm: f64,
    theta_deg: f64,
    label: u8,
    stage: u32,
    patch_path: String,
}

pub fn write_trials_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<(), CollectError> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(Row {
            scene_id: r.scene_id,
            x_mm: r.grasp.x_mm,
            y_mm: r.grasp.y_mm,
            theta_deg: r.grasp.theta_deg,
            label: r.label as u8,
            stage: r.stage,
            patch_path: r.patch_path.clone(),
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trials_csv<R: Read>(r: R) -> Result<Vec<TrialRecord>, CollectError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            if row.label > 1 {
                return Err(CollectError::Format(format!("label must be 0 or 1, got {}", row.label)));
            }
            Ok(TrialRecord {
                scene_id: row.scene_id,
                grasp: GraspConfig::new(row.x_mm, row.y_mm, row.theta_deg),
                label: row.label == 1,
                stage: row.stage,
                patch_path: row.patch_path,
                score: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub positives: usize,
    pub negatives: usize,
    pub total: usize,
    /// `None` for an empty selection.
    pub grasp_rate: Option<f64>,
}

impl DatasetStats {
    pub fn from_labels(labels: impl IntoIterator<Item = bool>) -> Self {
        let (mut positives, mut negatives) = (0, 0);
        for l in labels {
            if l {
                positives += 1;
            } else {
                negatives += 1;
            }
        }
        let total = positives + negatives;
        Self {
            positives,
            negatives,
            total,
            grasp_rate: (total > 0).then(|| positives as f64 / total as f64),
        }
    }

    pub fn merged(&self, o: &DatasetStats) -> DatasetStats {
        let positives = self.positives + o.positives;
        let negatives = self.negatives + o.negatives;
        let total = positives + negatives;
        Self {
            positives,
            negatives,
            total,
            grasp_rate: (total > 0).then(|| positives as f64 / total as f64),
        }
    }
}

/// Counts over all records, or only those of one stage.
pub fn summarize(dataset: &Dataset, stage: Option<u32>) -> DatasetStats {
    DatasetStats::from_labels(
        dataset
            .records
            .iter()
            .filter(|r| stage.is_none_or(|s| r.stage == s))
            .map(|r| r.label),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: bool, stage: u32) -> TrialRecord {
        TrialRecord {
            scene_id: 0,
            grasp: GraspConfig::new(1.5, 2.25, 95.0),
            label,
            stage,
            patch_path: "patches/000000.pgm".into(),
            score: None,
        }
    }

    #[test]
    fn stats_counts() {
        let d = Dataset {
            records: vec![rec(true, 0), rec(true, 0), rec(true, 1), rec(false, 1)],
            ..Default::default()
        };
        let s = summarize(&d, None);
        assert_eq!((s.positives, s.negatives, s.total), (3, 1, 4));
        assert_eq!(s.grasp_rate, Some(0.75));
        assert_eq!(summarize(&d, Some(1)).grasp_rate, Some(0.5));
        assert_eq!(summarize(&Dataset::default(), None).grasp_rate, None);
    }

    #[test]
    fn csv_header_and_round_trip() {
        let recs = vec![rec(true, 0), rec(false, 2)];
        let mut buf = Vec::new();
        write_trials_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scene_id,x_mm,y_mm,theta_deg,label,stage,patch_path\n"));
        assert!(text.contains("0,1.5,2.25,95.0,1,0,patches/000000.pgm"));
        assert_eq!(read_trials_csv(&buf[..]).unwrap(), recs);
    }
}
