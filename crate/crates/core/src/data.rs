//! Datasets, IDX ingestion, a synthetic generator, Non-IID partitioning and
//! seeded batching.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::seed::{rng_for, tag};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Fraction of every client's samples used for training; the rest is its test shard.
pub const TRAIN_FRACTION: f64 = 0.75;

/// Labeled samples with inputs scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(dim_err("dataset inputs", "rank 2", inputs.shape().len()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Data(format!(
                "label {y} at sample {i} is outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn label_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in indices {
            h[self.labels[i]] += 1;
        }
        h
    }

    /// Public view of the whole dataset.
    pub fn to_public(&self, labeled: bool) -> PublicSet {
        PublicSet {
            inputs: self.inputs.clone(),
            labels: labeled.then(|| self.labels.clone()),
        }
    }
}

/// Data shared by every client for knowledge exchange; labels are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicSet {
    pub inputs: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl PublicSet {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, indices: &[usize]) -> PublicSet {
        PublicSet {
            inputs: self.inputs.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

// ---------------------------------------------------------------------------
// IDX

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            needed: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX payload with the given magic; returns the dimension sizes and
/// the unsigned-byte body.
fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Format {
            found,
            expected: magic,
        });
    }
    // the low byte of the magic is the number of dimensions
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|k| read_u32(bytes, 4 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let body_len: usize = dims.iter().product();
    let body = bytes.get(header..header + body_len).ok_or(Error::Length {
        needed: header + body_len,
        found: bytes.len(),
    })?;
    Ok((dims, body))
}

/// Parses IDX image and label payloads into a dataset. Pixels are divided by 255.
pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (img_dims, pixels) = parse_idx(images, IDX_IMAGES_MAGIC)?;
    let (lbl_dims, raw_labels) = parse_idx(labels, IDX_LABELS_MAGIC)?;
    if img_dims[0] != lbl_dims[0] {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            img_dims[0], lbl_dims[0]
        )));
    }
    let count = img_dims[0];
    let d_in = img_dims[1] * img_dims[2];
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let inputs = Tensor::new(vec![count, d_in], data)?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, labels, num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx_pair(&images, &labels)
}

/// Encodes a dataset as IDX bytes. Inputs are quantized to `round(v·255)`;
/// `rows × cols` must equal the input width.
pub fn encode_idx(ds: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != ds.input_dim() {
        return Err(dim_err("IDX image size", ds.input_dim(), rows * cols));
    }
    let mut images = Vec::with_capacity(16 + ds.inputs.len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), rows, cols] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    images.extend(
        ds.inputs
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &y in &ds.labels {
        let b = u8::try_from(y).map_err(|_| Error::Data(format!("label {y} does not fit a byte")))?;
        labels.push(b);
    }
    Ok((images, labels))
}

pub fn write_idx(
    ds: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images, labels) = encode_idx(ds, rows, cols)?;
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Standard deviation of each class cluster around its mean.
    pub spread: f64,
    pub seed: u64,
}

/// Gaussian class clusters around seeded means in `[0, 1]^d`, clamped to the
/// unit cube. Samples are stored class by class.
pub fn synth_gen(params: &SynthParams) -> Result<Dataset> {
    let SynthParams {
        num_classes,
        samples_per_class,
        input_dim,
        spread,
        seed,
    } = *params;
    if num_classes == 0 || samples_per_class == 0 || input_dim == 0 {
        return Err(Error::Parameter(
            "synthetic classes, samples and input width must be positive".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Parameter(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = rng_for(seed, &[0]);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..input_dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let noise = Normal::new(0.0, spread).expect("spread validated");
    let m = num_classes * samples_per_class;
    let mut data = Vec::with_capacity(m * input_dim);
    let mut labels = Vec::with_capacity(m);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            data.extend(
                mean.iter()
                    .map(|&mu| (mu + noise.sample(&mut rng)).clamp(0.0, 1.0)),
            );
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(vec![m, input_dim], data)?, labels, num_classes)
}

// ---------------------------------------------------------------------------
// Partitioning

/// How private data is skewed across clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Every client holds exactly `labels_per_client` distinct labels.
    LabelSkew { labels_per_client: usize },
    /// Every client holds all labels in Dirichlet(alpha) proportions.
    Dirichlet { alpha: f64 },
}

/// Index sets into one [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub private_shards: Vec<Vec<usize>>,
    pub test_shards: Vec<Vec<usize>>,
    pub public_indices: Vec<usize>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.private_shards.len()
    }

    /// D_n for every client.
    pub fn sizes(&self) -> Vec<usize> {
        self.private_shards.iter().map(Vec::len).collect()
    }

    /// D = Σ D_n.
    pub fn total_private(&self) -> usize {
        self.private_shards.iter().map(Vec::len).sum()
    }

    /// Every index appears at most once across all shards.
    pub fn is_disjoint(&self, universe: usize) -> bool {
        let mut seen = vec![false; universe];
        self.private_shards
            .iter()
            .chain(&self.test_shards)
            .chain(std::iter::once(&self.public_indices))
            .flatten()
            .all(|&i| i < universe && !std::mem::replace(&mut seen[i], true))
    }
}

/// Label-skew partition over the whole dataset (no public hold-out).
pub fn partition_label_skew(ds: &Dataset, n: usize, k: usize, seed: u64) -> Result<Partition> {
    partition(ds, n, PartitionScheme::LabelSkew { labels_per_client: k }, 0, seed)
}

/// Dirichlet quantity-skew partition over the whole dataset (no public hold-out).
pub fn partition_dirichlet(ds: &Dataset, n: usize, alpha: f64, seed: u64) -> Result<Partition> {
    partition(ds, n, PartitionScheme::Dirichlet { alpha }, 0, seed)
}

/// Holds out `public_holdout` random samples as public data, then splits the
/// rest across `n` clients according to `scheme`. Each client's share of
/// every label is split 75/25 into train and test so both shards follow the
/// same label distribution.
pub fn partition(
    ds: &Dataset,
    n: usize,
    scheme: PartitionScheme,
    public_holdout: usize,
    seed: u64,
) -> Result<Partition> {
    if n == 0 {
        return Err(Error::Configuration("at least one client is required".into()));
    }
    if public_holdout > ds.len() {
        return Err(Error::Configuration(format!(
            "public hold-out {public_holdout} exceeds dataset size {}",
            ds.len()
        )));
    }
    let mut rng = rng_for(seed, &[tag::PARTITION]);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let public_indices = order[..public_holdout].to_vec();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for &i in &order[public_holdout..] {
        by_label[ds.labels[i]].push(i);
    }

    // chunks[client] = one index list per label held
    let chunks: Vec<Vec<Vec<usize>>> = match scheme {
        PartitionScheme::LabelSkew { labels_per_client } => {
            label_skew_chunks(&by_label, n, labels_per_client, &mut rng)?
        }
        PartitionScheme::Dirichlet { alpha } => dirichlet_chunks(&by_label, n, alpha, &mut rng)?,
    };

    let mut private_shards = Vec::with_capacity(n);
    let mut test_shards = Vec::with_capacity(n);
    for (client, client_chunks) in chunks.into_iter().enumerate() {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for chunk in client_chunks {
            let n_test = ((chunk.len() as f64) * (1.0 - TRAIN_FRACTION)).floor() as usize;
            let split = chunk.len() - n_test;
            train.extend_from_slice(&chunk[..split]);
            test.extend_from_slice(&chunk[split..]);
        }
        if train.is_empty() {
            return Err(Error::Configuration(format!(
                "client {client} received no private samples"
            )));
        }
        private_shards.push(train);
        test_shards.push(test);
    }
    Ok(Partition {
        private_shards,
        test_shards,
        public_indices,
    })
}

fn label_skew_chunks(
    by_label: &[Vec<usize>],
    n: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let c = by_label.len();
    if k == 0 || k > c {
        return Err(Error::Configuration(format!(
            "labels_per_client must be in [1, {c}], got {k}"
        )));
    }
    if n * k < c {
        return Err(Error::Configuration(format!(
            "{n} clients × {k} labels cannot cover {c} labels"
        )));
    }
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(rng);
    let assigned: Vec<Vec<usize>> = (0..n)
        .map(|client| (0..k).map(|j| perm[(client * k + j) % c]).collect())
        .collect();
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (client, labels) in assigned.iter().enumerate() {
        for &l in labels {
            holders[l].push(client);
        }
    }
    let mut chunks: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n];
    for (label, owners) in holders.iter().enumerate() {
        let pool = &by_label[label];
        if pool.len() < owners.len() {
            return Err(Error::Configuration(format!(
                "label {label} has {} samples for {} clients",
                pool.len(),
                owners.len()
            )));
        }
        let base = pool.len() / owners.len();
        let extra = pool.len() % owners.len();
        let mut start = 0;
        for (j, &client) in owners.iter().enumerate() {
            let len = base + usize::from(j < extra);
            chunks[client].push(pool[start..start + len].to_vec());
            start += len;
        }
    }
    Ok(chunks)
}

fn dirichlet_chunks(
    by_label: &[Vec<usize>],
    n: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Vec<usize>>>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("dirichlet alpha must be > 0, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut chunks: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n];
    for pool in by_label {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = if total > 0.0 && total.is_finite() {
            draws.iter().map(|d| d / total).collect()
        } else {
            vec![1.0 / n as f64; n]
        };
        // one guaranteed sample per client when the class is large enough
        let floor = usize::from(pool.len() >= n);
        let counts = largest_remainder(pool.len() - floor * n, &props);
        let mut start = 0;
        for (client, count) in counts.into_iter().enumerate() {
            let len = count + floor;
            chunks[client].push(pool[start..start + len].to_vec());
            start += len;
        }
    }
    Ok(chunks)
}

/// Splits `total` into integer parts proportional to `props` (which sum to 1).
fn largest_remainder(total: usize, props: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Seeded subsample of `size` public samples; drops labels when `labeled` is false.
pub fn carve_public(source: &PublicSet, size: usize, labeled: bool, seed: u64) -> Result<PublicSet> {
    if size > source.len() {
        return Err(Error::Configuration(format!(
            "public size {size} exceeds source size {}",
            source.len()
        )));
    }
    if size == 0 {
        log::warn!("public set is empty; distillation and coefficient updates become no-ops");
    }
    let mut idx: Vec<usize> = (0..source.len()).collect();
    idx.shuffle(&mut rng_for(seed, &[tag::PUBLIC_CARVE]));
    idx.truncate(size);
    let mut out = source.subset(&idx);
    if !labeled {
        out.labels = None;
    }
    Ok(out)
}

/// Shuffles `indices` with a stream keyed by `(seed, epoch)` and slices it
/// into batches of `batch_size`, keeping the last partial batch.
pub fn batches(indices: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order = indices.to_vec();
    order.shuffle(&mut rng_for(seed, &[epoch]));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(c: usize, per: usize, seed: u64) -> Dataset {
        synth_gen(&SynthParams {
            num_classes: c,
            samples_per_class: per,
            input_dim: 6,
            spread: 0.1,
            seed,
        })
        .unwrap()
    }

    fn idx_bytes(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(body);
        out
    }

    #[test]
    fn parses_hand_built_idx() {
        let pixels: Vec<u8> = (0..18).map(|i| (i * 15) as u8).collect();
        let images = idx_bytes(IDX_IMAGES_MAGIC, &[2, 3, 3], &pixels);
        let labels = idx_bytes(IDX_LABELS_MAGIC, &[2], &[7, 1]);
        let ds = parse_idx_pair(&images, &labels).unwrap();
        assert_eq!(ds.inputs.shape(), &[2, 9]);
        assert_eq!(ds.labels, vec![7, 1]);
        assert_eq!(ds.num_classes, 8);
        for (i, v) in ds.inputs.data().iter().enumerate() {
            assert_eq!(*v, (i * 15) as f64 / 255.0);
        }
    }

    #[test]
    fn idx_error_paths() {
        let images = idx_bytes(IDX_IMAGES_MAGIC, &[1, 1, 1], &[0]);
        let wrong = idx_bytes(IDX_IMAGES_MAGIC, &[1, 1, 1], &[0]);
        match parse_idx_pair(&images, &wrong) {
            Err(Error::Format { found, .. }) => assert_eq!(found, IDX_IMAGES_MAGIC),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(parse_idx_pair(&[], &[]), Err(Error::Length { .. })));
        let truncated = idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 2], &[1, 2, 3]);
        let labels = idx_bytes(IDX_LABELS_MAGIC, &[2], &[0, 1]);
        assert!(matches!(parse_idx_pair(&truncated, &labels), Err(Error::Length { .. })));
        let three = idx_bytes(IDX_LABELS_MAGIC, &[3], &[0, 1, 1]);
        let two_images = idx_bytes(IDX_IMAGES_MAGIC, &[2, 1, 1], &[0, 0]);
        assert!(matches!(parse_idx_pair(&two_images, &three), Err(Error::Consistency(_))));
    }

    #[test]
    fn idx_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth(3, 5, 1);
        let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx(&ds, 2, 3, &img, &lbl).unwrap();
        let once = load_idx(&img, &lbl).unwrap();
        write_idx(&once, 2, 3, &img, &lbl).unwrap();
        let twice = load_idx(&img, &lbl).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.labels, ds.labels);
        for (a, b) in once.inputs.data().iter().zip(ds.inputs.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn synthetic_generator_examples() {
        let ds = synth(3, 100, 4);
        assert_eq!(ds.label_histogram(&(0..ds.len()).collect::<Vec<_>>()), vec![100, 100, 100]);
        assert_eq!(ds, synth(3, 100, 4));
        assert!(ds.inputs.data().iter().all(|v| (0.0..=1.0).contains(v)));

        let tight = synth_gen(&SynthParams {
            num_classes: 3,
            samples_per_class: 4,
            input_dim: 5,
            spread: 0.0,
            seed: 2,
        })
        .unwrap();
        for c in 0..3 {
            for s in 1..4 {
                assert_eq!(tight.inputs.row(c * 4), tight.inputs.row(c * 4 + s));
            }
        }
    }

    #[test]
    fn label_skew_examples() {
        let ds = synth(10, 40, 3);
        let p = partition_label_skew(&ds, 5, 2, 9).unwrap();
        let mut union = std::collections::BTreeSet::new();
        for (train, test) in p.private_shards.iter().zip(&p.test_shards) {
            let labels: std::collections::BTreeSet<_> = train.iter().map(|&i| ds.labels[i]).collect();
            assert_eq!(labels.len(), 2);
            let test_labels: std::collections::BTreeSet<_> = test.iter().map(|&i| ds.labels[i]).collect();
            assert_eq!(labels, test_labels);
            union.extend(labels);
        }
        assert_eq!(union.len(), 10);
        assert!(p.is_disjoint(ds.len()));
        assert_eq!(p, partition_label_skew(&ds, 5, 2, 9).unwrap());

        let all = partition_label_skew(&ds, 4, 10, 9).unwrap();
        for train in &all.private_shards {
            assert!(ds.label_histogram(train).iter().all(|&h| h > 0));
        }
        assert!(matches!(partition_label_skew(&ds, 2, 2, 0), Err(Error::Configuration(_))));
        assert!(matches!(partition_label_skew(&ds, 5, 11, 0), Err(Error::Configuration(_))));
    }

    #[test]
    fn dirichlet_near_uniform_for_huge_alpha() {
        let ds = synth(4, 400, 5);
        let p = partition_dirichlet(&ds, 4, 1e6, 3).unwrap();
        for train in &p.private_shards {
            let h = ds.label_histogram(train);
            let total: usize = h.iter().sum();
            for &count in &h {
                assert!((count as f64 / total as f64 - 0.25).abs() < 0.05);
            }
        }
    }

    #[test]
    fn dirichlet_small_alpha_is_skewed() {
        let ds = synth(5, 200, 6);
        for seed in 0..5 {
            let p = partition_dirichlet(&ds, 4, 0.5, seed).unwrap();
            let max_ratio = (0..5)
                .map(|c| {
                    let counts: Vec<usize> = p
                        .private_shards
                        .iter()
                        .zip(&p.test_shards)
                        .map(|(a, b)| ds.label_histogram(a)[c] + ds.label_histogram(b)[c])
                        .collect();
                    *counts.iter().max().unwrap() as f64 / *counts.iter().min().unwrap() as f64
                })
                .fold(0.0, f64::max);
            assert!(max_ratio > 2.0, "seed {seed}: ratio {max_ratio}");
            let allocated: usize = p.total_private() + p.test_shards.iter().map(Vec::len).sum::<usize>();
            assert_eq!(allocated, ds.len());
            assert!(p.private_shards.iter().all(|s| !s.is_empty()));
        }
    }

    #[test]
    fn public_holdout_is_disjoint() {
        let ds = synth(4, 50, 7);
        let p = partition(&ds, 4, PartitionScheme::LabelSkew { labels_per_client: 2 }, 40, 1).unwrap();
        assert_eq!(p.public_indices.len(), 40);
        assert!(p.is_disjoint(ds.len()));
    }

    #[test]
    fn carve_public_examples() {
        let ds = synth(3, 1200, 8);
        let src = ds.to_public(true);
        assert_eq!(carve_public(&src, 3000, true, 1).unwrap().len(), 3000);
        assert!(carve_public(&src, 0, true, 1).unwrap().is_empty());
        assert!(carve_public(&src, 3601, true, 1).is_err());
        assert!(carve_public(&src, 10, false, 1).unwrap().labels.is_none());
    }

    #[test]
    fn batching_examples() {
        let idx: Vec<usize> = (0..10).collect();
        let b = batches(&idx, 3, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        assert_eq!(b, batches(&idx, 3, 1, 0));
        let big: Vec<usize> = (0..100).collect();
        assert_ne!(batches(&big, 100, 1, 0), batches(&big, 100, 1, 1));
    }
}
