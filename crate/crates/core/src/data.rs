//! Datasets, federated sharding and the IDX image format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{check_dim, invalid, Result};
use crate::rng::{self, purpose};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { path: String, expected: u32, found: u32 },

    #[error("truncated idx file {path}")]
    Truncated { path: String },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("idx i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Row-major `n × dim`.
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        check_dim(labels.len() * dim, features.len())?;
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(invalid(format!("label {y} out of range for {classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        Ok(Self {
            features,
            dim,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self, indices: &[usize]) -> Vec<&[f64]> {
        indices.iter().map(|&i| self.row(i)).collect()
    }

    pub fn all_rows(&self) -> Vec<&[f64]> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &i in indices {
            h[self.labels[i]] += 1;
        }
        h
    }

    /// Writes `label,f0,f1,...` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.row(i).iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Means of a regular simplex with the given pairwise distance, expressed in
/// `classes - 1` coordinates and zero-padded to `dim`.
fn simplex_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / std::f64::consts::SQRT_2;
    let c = classes as f64;
    // Centered scaled basis vectors span a (classes - 1)-dimensional subspace.
    let centered: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            (0..classes)
                .map(|j| scale * (if j == k { 1.0 } else { 0.0 } - 1.0 / c))
                .collect()
        })
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in &centered {
        let mut u = v.clone();
        for b in &basis {
            let proj: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui -= proj * bi;
            }
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 * scale.max(1.0) && basis.len() + 1 < classes {
            basis.push(u.into_iter().map(|x| x / norm).collect());
        }
    }
    centered
        .iter()
        .map(|v| {
            let mut m = vec![0.0; dim];
            for (mj, b) in m.iter_mut().zip(&basis) {
                *mj = v.iter().zip(b).map(|(x, y)| x * y).sum();
            }
            m
        })
        .collect()
}

/// Unit-variance Gaussian blobs whose class means sit on a regular simplex
/// with pairwise distance `separation`. Labels cycle through the classes.
pub fn gen_synthetic(n: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes || dim == 0 {
        return Err(invalid(format!(
            "cannot build {n} samples of {classes} classes in {dim} dims"
        )));
    }
    if dim + 1 < classes {
        return Err(invalid(format!(
            "{classes} equidistant means need at least {} dims",
            classes - 1
        )));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(invalid("separation must be non-negative"));
    }
    let means = simplex_means(classes, dim, separation);
    let mut rng = rng::stream(seed, &[purpose::SYNTHETIC]);
    let mut features = Vec::with_capacity(n * dim);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &y in &labels {
        for &m in &means[y] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(m + z);
        }
    }
    Dataset::new(features, dim, labels, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub shards: Vec<Vec<usize>>,
    /// `None` for label-shard partitions.
    pub dirichlet_alpha: Option<f64>,
}

impl ShardPlan {
    /// Disjoint, non-empty shards covering exactly `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for s in &self.shards {
            if s.is_empty() {
                return Err(invalid("empty shard"));
            }
            for &i in s {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(invalid(format!("sample {i} duplicated or out of range")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("shards do not cover the dataset"));
        }
        Ok(())
    }
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // Every draw underflowed; put the mass on one client.
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        p
    }
}

/// Moves one sample from the largest shard into each empty shard.
fn repair_empty(shards: &mut [Vec<usize>]) {
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..shards.len())
            .max_by_key(|&c| (shards[c].len(), std::cmp::Reverse(c)))
            .expect("at least one shard");
        let moved = shards[largest].pop().expect("largest shard is non-empty");
        shards[empty].push(moved);
    }
}

/// Per-class Dirichlet(`alpha`) split across clients.
pub fn partition_noniid(dataset: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<ShardPlan> {
    if n_clients == 0 || n_clients > dataset.len() {
        return Err(invalid(format!(
            "cannot split {} samples over {n_clients} clients",
            dataset.len()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("dirichlet alpha must be positive"));
    }
    let mut rng = rng::stream(seed, &[purpose::PARTITION]);
    let mut shards = vec![Vec::new(); n_clients];
    for class in 0..dataset.classes {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let p = dirichlet(&mut rng, alpha, n_clients);
        let n_c = idx.len() as f64;
        let mut start = 0;
        let mut cum = 0.0;
        for (c, pc) in p.iter().enumerate() {
            cum += pc;
            let end = if c + 1 == n_clients {
                idx.len()
            } else {
                ((cum * n_c).round() as usize).clamp(start, idx.len())
            };
            shards[c].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    repair_empty(&mut shards);
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(ShardPlan {
        shards,
        dirichlet_alpha: Some(alpha),
    })
}

/// Sort-and-deal: samples sorted by label are cut into
/// `n_clients · shards_per_client` contiguous shards, dealt out at random.
pub fn partition_label_shards(
    dataset: &Dataset,
    n_clients: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<ShardPlan> {
    let pieces = n_clients * shards_per_client;
    if n_clients == 0 || shards_per_client == 0 || pieces > dataset.len() {
        return Err(invalid(format!(
            "cannot cut {} samples into {pieces} shards",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| dataset.labels[i]);
    let mut piece_ids: Vec<usize> = (0..pieces).collect();
    piece_ids.shuffle(&mut rng::stream(seed, &[purpose::PARTITION]));
    let n = dataset.len();
    let mut shards = vec![Vec::new(); n_clients];
    for (slot, &piece) in piece_ids.iter().enumerate() {
        let (a, b) = (piece * n / pieces, (piece + 1) * n / pieces);
        shards[slot / shards_per_client].extend_from_slice(&order[a..b]);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(ShardPlan {
        shards,
        dirichlet_alpha: None,
    })
}

/// Stratified-free random split into `(train, test)` index lists.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(invalid("test fraction must lie in [0, 1)"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[purpose::TEST_SPLIT]));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

fn read_magic<R: Read>(r: &mut R, path: &str, expected: u32) -> std::result::Result<(), IdxError> {
    let found = read_u32(r, path)?;
    if found != expected {
        return Err(IdxError::BadMagic {
            path: path.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, path: &str) -> std::result::Result<u32, IdxError> {
    r.read_u32::<BigEndian>().map_err(|e| truncated_or_io(e, path))
}

fn truncated_or_io(e: std::io::Error, path: &str) -> IdxError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        IdxError::Truncated { path: path.to_string() }
    } else {
        IdxError::Io(e)
    }
}

/// Reads an IDX image/label pair, scaling pixels to `[0, 1]`. At most `limit`
/// samples are kept.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> std::result::Result<Dataset, IdxError> {
    let ip = images_path.display().to_string();
    let lp = labels_path.display().to_string();
    let mut images = BufReader::new(File::open(images_path)?);
    let mut labels = BufReader::new(File::open(labels_path)?);

    read_magic(&mut images, &ip, IDX_IMAGES_MAGIC)?;
    let n_images = read_u32(&mut images, &ip)? as usize;
    let rows = read_u32(&mut images, &ip)? as usize;
    let cols = read_u32(&mut images, &ip)? as usize;
    read_magic(&mut labels, &lp, IDX_LABELS_MAGIC)?;
    let n_labels = read_u32(&mut labels, &lp)? as usize;
    if n_images != n_labels {
        return Err(IdxError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let n = limit.map_or(n_images, |l| l.min(n_images));
    let dim = rows * cols;
    let mut pixels = vec![0u8; n * dim];
    images.read_exact(&mut pixels).map_err(|e| truncated_or_io(e, &ip))?;
    let mut ys = vec![0u8; n];
    labels.read_exact(&mut ys).map_err(|e| truncated_or_io(e, &lp))?;

    let labels: Vec<usize> = ys.iter().map(|&y| y as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        features: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        dim,
        labels,
        classes,
    })
}

/// Writes a dataset as an IDX pair with `rows × cols` images. Features are
/// mapped back to bytes by `round(v · 255)`.
pub fn write_idx(dataset: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    check_dim(dataset.dim, rows * cols)?;
    if dataset.labels.iter().any(|&y| y > 255) || dataset.features.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("dataset does not fit the unsigned byte IDX encoding"));
    }
    let mut im = BufWriter::new(File::create(images_path)?);
    im.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    im.write_u32::<BigEndian>(dataset.len() as u32)?;
    im.write_u32::<BigEndian>(rows as u32)?;
    im.write_u32::<BigEndian>(cols as u32)?;
    let bytes: Vec<u8> = dataset.features.iter().map(|v| (v * 255.0).round() as u8).collect();
    im.write_all(&bytes)?;
    im.flush()?;
    let mut lb = BufWriter::new(File::create(labels_path)?);
    lb.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    lb.write_u32::<BigEndian>(dataset.len() as u32)?;
    lb.write_all(&dataset.labels.iter().map(|&y| y as u8).collect::<Vec<_>>())?;
    lb.flush()?;
    Ok(())
}
