//! Datasets in the `[0, 1]` input domain: IDX ingestion, a synthetic
//! two-Gaussian problem and seeded batch iteration.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{permutation, Domain, StreamKey};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled examples; `images` has shape `[N, ...example_shape]` with every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if images.rank() < 2 || images.shape()[0] != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "images {:?} do not match {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {y} outside [0, {num_classes})")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of a single example.
    pub fn example_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// First `n` examples of a seeded shuffle (the whole set when `n` is 0 or ≥ len).
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let mut order = permutation(&mut StreamKey::new(seed, Domain::Subsample).rng(), self.len());
        order.truncate(n);
        let mut out = self.select(&order);
        out.name = format!("{}[{n}]", self.name);
        out
    }
}

fn read_be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Idx {
            path: path.to_path_buf(),
            reason: format!("truncated header at byte {at}"),
        })
}

fn parse_idx(bytes: &[u8], path: &Path, magic: u32, rank: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let found = read_be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            reason: format!("magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    let dims = (0..rank)
        .map(|i| read_be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            reason: format!(
                "payload is {} bytes, dims {dims:?} need {expected}{}",
                payload.len(),
                if payload.len() < expected { " (truncated)" } else { "" }
            ),
        });
    }
    Ok((dims, payload.to_vec()))
}

/// Parses an IDX image/label file pair (u8 payloads, big-endian header).
///
/// Pixels are divided by 255 and a channel axis is inserted: `[N, 1, H, W]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images_path).map_err(|e| Error::Idx {
        path: images_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let lbl_bytes = std::fs::read(labels_path).map_err(|e| Error::Idx {
        path: labels_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (idims, pixels) = parse_idx(&img_bytes, images_path, IDX_IMAGES_MAGIC, 3)?;
    let (ldims, labels) = parse_idx(&lbl_bytes, labels_path, IDX_LABELS_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            reason: format!("{} labels for {} images", ldims[0], idims[0]),
        });
    }
    if idims.contains(&0) {
        return Err(Error::Idx {
            path: images_path.to_path_buf(),
            reason: format!("empty dimension in {idims:?}"),
        });
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let images = Tensor::new(
        vec![idims[0], 1, idims[1], idims[2]],
        pixels.into_iter().map(|p| p as f64 / 255.0).collect(),
    )?;
    let name = images_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(images, labels, num_classes, name)
}

/// Two isotropic unit-variance Gaussians centred at `±(separation/2)·e₁`,
/// mapped affinely into `[0, 1]` (±(separation/2 + 4) maps to the ends) and
/// clipped. Class 0 occupies the first `n_per_class` rows.
pub fn synth_gaussians(n_per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if dim < 2 || !(separation >= 0.0) || n_per_class == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs dim >= 2, separation >= 0 and n > 0 (got {dim}, {separation}, {n_per_class})"
        )));
    }
    let half_range = separation / 2.0 + 4.0;
    let mut data = Vec::with_capacity(2 * n_per_class * dim);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        let centre = if class == 0 { -separation / 2.0 } else { separation / 2.0 };
        let mut rng = StreamKey::new(seed, Domain::Synthetic).batch(class as u64).rng();
        for _ in 0..n_per_class {
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = if d == 0 { centre + z } else { z };
                data.push(((v + half_range) / (2.0 * half_range)).clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    let images = Tensor::new(vec![2 * n_per_class, dim], data)?;
    Dataset::new(images, labels, 2, format!("gauss2(d={dim},sep={separation})"))
}

/// How one epoch is cut into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
    pub epoch_index: u64,
}

impl BatchPlan {
    /// Index groups for `n` examples: a permutation fixed by `(seed, epoch_index)`, chunked.
    pub fn index_batches(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::InvalidArgument(format!(
                "batch size {} must be in 1..={n}",
                self.batch_size
            )));
        }
        let order = permutation(
            &mut StreamKey::new(self.seed, Domain::Shuffle).epoch(self.epoch_index).rng(),
            n,
        );
        Ok(order
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(|c| c.to_vec())
            .collect())
    }
}

/// One mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub index: usize,
    pub x: Tensor,
    pub y: Vec<usize>,
}

/// Seeded mini-batches over `ds` for one epoch.
pub fn batches<'a>(ds: &'a Dataset, plan: BatchPlan) -> Result<impl Iterator<Item = Batch> + 'a> {
    let groups = plan.index_batches(ds.len())?;
    Ok(groups.into_iter().enumerate().map(move |(index, idx)| Batch {
        index,
        x: ds.images.select_rows(&idx),
        y: idx.iter().map(|&i| ds.labels[i]).collect(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(payload);
        out
    }

    fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let (ip, lp) = (dir.join("img"), dir.join("lbl"));
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn two_image_fixture_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 255, 255, 0, 255, 255, 0, 0];
        let (ip, lp) = write_pair(
            dir.path(),
            &idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 2], &pixels),
            &idx_bytes(IDX_LABELS_MAGIC, &[2], &[3, 7]),
        );
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images().shape(), &[2, 1, 2, 2]);
        assert_eq!(ds.images().data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(ds.labels(), &[3, 7]);
    }

    #[test]
    fn idx_errors_are_specific() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = idx_bytes(IDX_IMAGES_MAGIC, &[2, 1, 1], &[0, 1]);
        // labels file carrying the image magic
        let (ip, lp) = write_pair(dir.path(), &imgs, &idx_bytes(IDX_IMAGES_MAGIC, &[2], &[0, 1]));
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let (ip, lp) = write_pair(dir.path(), &imgs, &idx_bytes(IDX_LABELS_MAGIC, &[3], &[0, 1, 2]));
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("3 labels for 2 images"), "{err}");

        let short = idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 2], &[0, 1, 2]);
        let (ip, lp) = write_pair(dir.path(), &short, &idx_bytes(IDX_LABELS_MAGIC, &[2], &[0, 1]));
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let (ip, lp) = write_pair(dir.path(), &[0, 0], &idx_bytes(IDX_LABELS_MAGIC, &[2], &[0, 1]));
        assert!(load_idx(&ip, &lp).unwrap_err().to_string().contains("truncated header"));
    }

    #[test]
    fn synthetic_is_deterministic_and_in_domain() {
        let a = synth_gaussians(50, 3, 6.0, 9).unwrap();
        let b = synth_gaussians(50, 3, 6.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_gaussians(50, 3, 6.0, 10).unwrap());
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.images().shape(), &[100, 3]);
        assert!(synth_gaussians(10, 1, 6.0, 0).is_err());
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let ds = synth_gaussians(20, 2, 4.0, 1).unwrap();
        let plan = BatchPlan { batch_size: 40, seed: 3, drop_last: false, epoch_index: 0 };
        let all: Vec<Batch> = batches(&ds, plan).unwrap().collect();
        assert_eq!(all.len(), 1);
        let mut ys = all[0].y.clone();
        ys.sort_unstable();
        assert_eq!(ys.iter().filter(|&&y| y == 0).count(), 20);
    }

    #[test]
    fn epochs_reshuffle_and_plans_repeat() {
        let plan = BatchPlan { batch_size: 7, seed: 5, drop_last: false, epoch_index: 0 };
        let a = plan.index_batches(100).unwrap();
        assert_eq!(a, plan.index_batches(100).unwrap());
        let b = BatchPlan { epoch_index: 1, ..plan }.index_batches(100).unwrap();
        assert_ne!(a, b);
        let mut seen: Vec<usize> = a.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        let dropped = BatchPlan { drop_last: true, ..plan }.index_batches(100).unwrap();
        assert_eq!(dropped.len(), 14);
        assert!(BatchPlan { batch_size: 101, ..plan }.index_batches(100).is_err());
    }

    #[test]
    fn subset_is_seeded() {
        let ds = synth_gaussians(30, 2, 4.0, 1).unwrap();
        let s = ds.subset(10, 4);
        assert_eq!(s.len(), 10);
        assert_eq!(s, ds.subset(10, 4));
        assert_eq!(ds.subset(0, 4).len(), 60);
    }
}
