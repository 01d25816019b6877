//! On-disk inputs: the step database (JSONL), the segment corpus (JSONL
//! manifest plus binary feature files) and segment pooling.
//!
//! Feature files are a 16-byte header followed by row-major little-endian
//! `f32` values:
//!
//! ```text
//! b"PKGF" | u32 version = 1 | u32 rows | u32 dim | rows * dim * f32
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PKGF";
pub const FEATURE_VERSION: u32 = 1;
const FEATURE_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepHeadline {
    pub headline: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub task_name: String,
    pub steps: Vec<StepHeadline>,
}

/// Location of one headline inside the database.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadlineRef {
    pub task: usize,
    pub step_index: usize,
}

/// Ordered tasks, each an ordered list of step headlines with embeddings.
///
/// Headlines get a global index in (task order, step order); every other
/// module refers to headlines by that index.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDatabase {
    tasks: Vec<Task>,
    dim: usize,
    // offsets[t] = global index of the first headline of task t; last entry = total
    offsets: Vec<usize>,
}

impl StepDatabase {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let mut dim = None;
        let mut offsets = Vec::with_capacity(tasks.len() + 1);
        let mut seen = std::collections::HashSet::new();
        let mut total = 0;
        for task in &tasks {
            if !seen.insert(task.task_id.as_str()) {
                return Err(Error::Invalid(format!(
                    "duplicate task_id {:?}",
                    task.task_id
                )));
            }
            if task.steps.is_empty() {
                return Err(Error::Invalid(format!(
                    "task {:?} has no steps",
                    task.task_id
                )));
            }
            offsets.push(total);
            for (i, step) in task.steps.iter().enumerate() {
                let d = step.embedding.len();
                match dim {
                    None if d == 0 => {
                        return Err(Error::Invalid(format!(
                            "task {:?} step {i}: empty embedding",
                            task.task_id
                        )))
                    }
                    None => dim = Some(d),
                    Some(expected) if expected != d => {
                        return Err(Error::DimensionMismatch { expected, got: d })
                    }
                    _ => {}
                }
                if step.embedding.iter().all(|&x| x == 0.0) {
                    return Err(Error::Invalid(format!(
                        "task {:?} step {i}: zero embedding",
                        task.task_id
                    )));
                }
                if step.embedding.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Invalid(format!(
                        "task {:?} step {i}: non-finite embedding",
                        task.task_id
                    )));
                }
            }
            total += task.steps.len();
        }
        offsets.push(total);
        Ok(Self {
            tasks,
            dim: dim.unwrap_or(0),
            offsets,
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Embedding dimension; 0 for an empty database.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_headlines(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn headline_index(&self, task: usize, step_index: usize) -> usize {
        self.offsets[task] + step_index
    }

    /// Global headline index range covered by `task`.
    pub fn task_range(&self, task: usize) -> std::ops::Range<usize> {
        self.offsets[task]..self.offsets[task + 1]
    }

    pub fn locate(&self, headline: usize) -> HeadlineRef {
        let task = self.offsets.partition_point(|&o| o <= headline) - 1;
        HeadlineRef {
            task,
            step_index: headline - self.offsets[task],
        }
    }

    pub fn headline(&self, headline: usize) -> &StepHeadline {
        let r = self.locate(headline);
        &self.tasks[r.task].steps[r.step_index]
    }

    pub fn task_index(&self, task_id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.task_id == task_id)
    }

    /// All headline embeddings, widened to `f64`, in global index order.
    pub fn embeddings_f64(&self) -> Vec<Vec<f64>> {
        self.tasks
            .iter()
            .flat_map(|t| t.steps.iter())
            .map(|s| s.embedding.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), path)
    }

    pub fn from_reader(reader: impl BufRead, path: &Path) -> Result<Self> {
        let mut tasks = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let task: Task = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            tasks.push(task);
        }
        Self::new(tasks)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for task in &self.tasks {
            out.push_str(&serde_json::to_string(task).expect("task serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Row-major `rows x dim` matrix of `f32` features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Invalid(format!(
                "feature matrix {rows}x{dim} needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>], dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row_f64(i)).collect()
    }

    /// Mean-pools consecutive groups of `factor` rows; see [`pool_segments`].
    pub fn pooled(&self, factor: usize) -> Result<Self> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let pooled = pool_segments(&self.to_rows_f64(), factor)?;
        let data = pooled.iter().flatten().map(|&x| x as f32).collect();
        Self::new(pooled.len(), self.dim, data)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < FEATURE_HEADER_LEN {
            return Err(Error::format(path, "truncated feature header"));
        }
        if &bytes[0..4] != FEATURE_MAGIC {
            return Err(Error::format(path, "bad magic, expected PKGF"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != FEATURE_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported feature file version {version}"),
            ));
        }
        let rows = word(8) as usize;
        let dim = word(12) as usize;
        let expected = FEATURE_HEADER_LEN + rows * dim * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!(
                    "truncated or oversized payload: header says {rows}x{dim} ({expected} bytes), file has {} bytes",
                    bytes.len()
                ),
            ));
        }
        let data = bytes[FEATURE_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, dim, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub video_id: String,
    pub task_name: Option<String>,
    pub features: FeatureMatrix,
}

impl Video {
    pub fn num_segments(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub task_name: Option<String>,
    pub num_segments: usize,
    pub feature_file: String,
}

/// Videos as ordered sequences of segment feature vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentCorpus {
    pub videos: Vec<Video>,
}

impl SegmentCorpus {
    pub fn new(videos: Vec<Video>) -> Result<Self> {
        let mut dim = None;
        for v in &videos {
            if v.features.rows() == 0 {
                continue;
            }
            match dim {
                None => dim = Some(v.features.dim()),
                Some(d) if d != v.features.dim() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: v.features.dim(),
                    })
                }
                _ => {}
            }
        }
        Ok(Self { videos })
    }

    /// Segment dimension, `None` when the corpus holds no segments.
    pub fn dim(&self) -> Option<usize> {
        self.videos
            .iter()
            .find(|v| v.features.rows() > 0)
            .map(|v| v.features.dim())
    }

    pub fn total_segments(&self) -> usize {
        self.videos.iter().map(Video::num_segments).sum()
    }

    pub fn pooled(&self, factor: usize) -> Result<Self> {
        let videos = self
            .videos
            .iter()
            .map(|v| {
                Ok(Video {
                    video_id: v.video_id.clone(),
                    task_name: v.task_name.clone(),
                    features: v.features.pooled(factor)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { videos })
    }

    /// Loads the manifest and every referenced feature file (paths relative
    /// to the manifest's directory). Feature files are read in parallel.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        use rayon::prelude::*;

        let manifest_path = manifest_path.as_ref();
        let entries = read_manifest(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let videos = entries
            .into_par_iter()
            .map(|entry| {
                let path = base.join(&entry.feature_file);
                let features = FeatureMatrix::load(&path)?;
                if features.rows() != entry.num_segments {
                    return Err(Error::format(
                        &path,
                        format!(
                            "manifest says {} segments for {:?}, feature header says {}",
                            entry.num_segments,
                            entry.video_id,
                            features.rows()
                        ),
                    ));
                }
                Ok(Video {
                    video_id: entry.video_id,
                    task_name: entry.task_name,
                    features,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(videos)
    }

    /// Writes `manifest_path` plus one feature file per video under
    /// `features/` next to it.
    pub fn save(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let manifest_path = manifest_path.as_ref();
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let feature_dir = base.join("features");
        fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
        let mut manifest = String::new();
        for (i, video) in self.videos.iter().enumerate() {
            let rel = format!("features/{i:06}.pkgf");
            video.features.save(base.join(&rel))?;
            let entry = ManifestEntry {
                video_id: video.video_id.clone(),
                task_name: video.task_name.clone(),
                num_segments: video.num_segments(),
                feature_file: rel,
            };
            manifest.push_str(&serde_json::to_string(&entry)?);
            manifest.push('\n');
        }
        fs::write(manifest_path, manifest).map_err(|e| Error::io(manifest_path, e))
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(entries)
}

/// Mean-pools consecutive groups of `factor` vectors. A trailing partial
/// group is averaged over its actual size.
pub fn pool_segments(fine: &[Vec<f64>], factor: usize) -> Result<Vec<Vec<f64>>> {
    if factor == 0 {
        return Err(Error::Domain("pool factor must be >= 1".into()));
    }
    Ok(fine
        .chunks(factor)
        .map(|group| {
            let mut acc = vec![0.0; group[0].len()];
            for v in group {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
            let n = group.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect())
}

/// Path helper used by CLI stages that accept a world directory.
pub fn world_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("steps.jsonl"), dir.join("manifest.jsonl"))
}
