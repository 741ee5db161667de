//! Persistence, dataset splits, the synthetic mini-city generator, and the
//! end-to-end benchmark orchestration behind the CLI.

pub mod run;
pub mod synth;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::AnnotationRecord;
use crate::geo::{CellIndex, GeoPoint, HexConfig};
use crate::roadnet::{load_roadnet, RoadGraph};
use crate::traj::{load_trajectories, Trajectory};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {file} at line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("split ratios must sum to 1, got {0}")]
    BadRatios(f64),
    #[error("empty id list")]
    EmptyIds,
    #[error("bundle is missing {0}")]
    MissingFile(PathBuf),
    #[error("unresolved rid {rid} referenced by trajectory {traj}")]
    UnresolvedRid { rid: u64, traj: u64 },
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
    #[error(transparent)]
    Roadnet(#[from] crate::roadnet::RoadnetError),
    #[error(transparent)]
    Traj(#[from] crate::traj::TrajError),
    #[error(transparent)]
    Intent(#[from] crate::intent::IntentError),
    #[error(transparent)]
    Annotate(#[from] crate::annotate::AnnotateError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Anchor(#[from] crate::anchor::AnchorError),
    #[error(transparent)]
    Fuse(#[from] crate::fuse::FuseError),
    #[error(transparent)]
    Rap(#[from] crate::rap::RapError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Train/val/test split ratios plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, HarnessError> {
        let sum = train + val + test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(HarnessError::BadRatios(sum));
        }
        Ok(SplitSpec { train, val, test, seed })
    }

    pub fn with_seed(seed: u64) -> Self {
        SplitSpec { train: 0.70, val: 0.10, test: 0.20, seed }
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::with_seed(0)
    }
}

/// Disjoint, exhaustive id split: seeded shuffle then contiguous cut with
/// floored train/val sizes, remainder to test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

pub fn split(ids: &[u64], spec: &SplitSpec) -> Result<Split, HarnessError> {
    use rand::{Rng, SeedableRng};
    if ids.is_empty() {
        return Err(HarnessError::EmptyIds);
    }
    let mut shuffled = ids.to_vec();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    for i in 0..shuffled.len() {
        let j = rng.gen_range(i..shuffled.len());
        shuffled.swap(i, j);
    }
    let n = shuffled.len();
    let n_train = (spec.train * n as f64).floor() as usize;
    let n_val = (spec.val * n as f64).floor() as usize;
    Ok(Split {
        train: shuffled[..n_train].to_vec(),
        val: shuffled[n_train..n_train + n_val].to_vec(),
        test: shuffled[n_train + n_val..].to_vec(),
    })
}

/// City-level configuration persisted next to the data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityConfig {
    pub name: String,
    pub hex: HexConfig,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        CityConfig {
            name: "synth".into(),
            hex: HexConfig {
                origin: GeoPoint { lat: 41.15, lon: -8.62 },
                edge_m: 174.0,
            },
            seed: 0,
        }
    }
}

/// Paths of one city's data files plus its config.
#[derive(Debug, Clone)]
pub struct CityBundle {
    pub dir: PathBuf,
    pub config: CityConfig,
}

impl CityBundle {
    pub fn roadnet_path(&self) -> PathBuf {
        self.dir.join("roadnet.jsonl")
    }

    pub fn cells_path(&self) -> PathBuf {
        self.dir.join("cells.jsonl")
    }

    pub fn trajectories_path(&self) -> PathBuf {
        self.dir.join("trajectories.jsonl")
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.dir.join("annotations.jsonl")
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.join("config.json")
    }

    /// Open an existing bundle directory.
    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        let config_path = dir.join("config.json");
        if !config_path.exists() {
            return Err(HarnessError::MissingFile(config_path));
        }
        let config: CityConfig = serde_json::from_str(&std::fs::read_to_string(&config_path)?)?;
        Ok(CityBundle { dir: dir.to_path_buf(), config })
    }

    pub fn save_config(&self) -> Result<(), HarnessError> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(
            self.config_path(),
            serde_json::to_string_pretty(&self.config)?,
        )?;
        Ok(())
    }

    pub fn load_graph(&self) -> Result<RoadGraph, HarnessError> {
        let path = self.roadnet_path();
        if !path.exists() {
            return Err(HarnessError::MissingFile(path));
        }
        Ok(load_roadnet(&path)?)
    }

    pub fn load_cells(&self) -> Result<CellIndex, HarnessError> {
        let path = self.cells_path();
        if !path.exists() {
            return Err(HarnessError::MissingFile(path));
        }
        Ok(CellIndex::load(&path)?)
    }

    pub fn load_trajectories(&self) -> Result<Vec<Trajectory>, HarnessError> {
        let path = self.trajectories_path();
        if !path.exists() {
            return Err(HarnessError::MissingFile(path));
        }
        Ok(load_trajectories(&path)?)
    }

    pub fn load_annotations(&self) -> Result<Vec<AnnotationRecord>, HarnessError> {
        read_jsonl(&self.annotations_path())
    }

    /// Full-bundle validation: every trajectory rid resolves in the graph.
    pub fn validate(&self) -> Result<BundleStats, HarnessError> {
        let graph = self.load_graph()?;
        let cells = self.load_cells()?;
        let trajectories = self.load_trajectories()?;
        for t in &trajectories {
            for &rid in &t.rid_list {
                if !graph.contains(rid) {
                    return Err(HarnessError::UnresolvedRid { rid, traj: t.mm_id });
                }
            }
        }
        Ok(BundleStats {
            n_segments: graph.len(),
            n_cells: cells.len(),
            n_trajectories: trajectories.len(),
            n_annotations: if self.annotations_path().exists() {
                self.load_annotations()?.len()
            } else {
                0
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleStats {
    pub n_segments: usize,
    pub n_cells: usize,
    pub n_trajectories: usize,
    pub n_annotations: usize,
}

/// Write any serializable records as headered JSONL.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    schema: &str,
    records: impl IntoIterator<Item = T>,
) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(crate::jsonl::header_line(schema).as_bytes())?;
    file.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut file, &rec)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Read headered (or plain) JSONL records.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && crate::jsonl::parse_header(&line).is_some() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            file: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Index trajectories by id.
pub fn traj_map(trajs: &[Trajectory]) -> BTreeMap<u64, Trajectory> {
    trajs.iter().map(|t| (t.mm_id, t.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<u64> = (0..100).collect();
        let spec = SplitSpec::with_seed(7);
        let s = split(&ids, &spec).unwrap();
        assert_eq!(s.train.len(), 70);
        assert_eq!(s.val.len(), 10);
        assert_eq!(s.test.len(), 20);
        assert_eq!(s, split(&ids, &spec).unwrap());

        let ids: Vec<u64> = (0..10).collect();
        let s = split(&ids, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));

        // Disjoint and exhaustive.
        let mut all: Vec<u64> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(SplitSpec::new(0.5, 0.2, 0.2, 0).is_err());
        assert!(split(&[], &SplitSpec::default()).is_err());
    }

    #[test]
    fn jsonl_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vals.jsonl");
        write_jsonl(&path, "trajprism.test", [1u32, 2, 3]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("trajprism.test"));
        let back: Vec<u32> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![1, 2, 3]);
    }
}
