//! Dataset ingestion: IDX files, a raw tensor container, grayscale
//! conversion, splits, subsampling and synthetic blob images.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const EVT1_MAGIC: &[u8; 4] = b"EVT1";

/// Byte images as loaded from disk, shape `[M, H, W, C]`, values 0-255.
#[derive(Debug, Clone)]
pub struct RawImageSet {
    pub pixels: Vec<u8>,
    pub dims: [usize; 4],
    pub labels: Vec<u8>,
}

impl RawImageSet {
    pub fn len(&self) -> usize {
        self.dims[0]
    }

    pub fn is_empty(&self) -> bool {
        self.dims[0] == 0
    }
}

/// Normalized examples ready for the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Inputs with shape `[M, H, W, C]`, values in `[0, 1]` for image data.
    pub inputs: Tensor,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 4 {
            return Err(Error::shape(format!(
                "dataset inputs must be [M, H, W, C], got {:?}",
                inputs.shape()
            )));
        }
        let m = inputs.shape()[0];
        if m == 0 || m != labels.len() {
            return Err(Error::CountMismatch(format!(
                "{m} inputs vs {} labels",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::config(format!(
                "label {l} out of range for {num_classes} classes"
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

    /// `[H, W, C]` of one example.
    pub fn example_shape(&self) -> [usize; 3] {
        let s = self.inputs.shape();
        [s[1], s[2], s[3]]
    }

    /// Flat features per example.
    pub fn example_len(&self) -> usize {
        let [h, w, c] = self.example_shape();
        h * w * c
    }

    /// New dataset holding the given examples, in index order.
    pub fn take(&self, indices: &[usize]) -> Result<Dataset> {
        let feat = self.example_len();
        let src = self.inputs.data();
        let mut data = Vec::with_capacity(indices.len() * feat);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Size(format!("index {i} out of range {}", self.len())));
            }
            data.extend_from_slice(&src[i * feat..(i + 1) * feat]);
            labels.push(self.labels[i]);
        }
        let [h, w, c] = self.example_shape();
        Dataset::new(
            Tensor::new(vec![indices.len(), h, w, c], data)?,
            labels,
            self.num_classes,
        )
    }
}

fn read_be_u32(buf: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    if *pos + 4 > buf.len() {
        return Err(Error::Truncation(format!("{what}: file ends inside header")));
    }
    let v = u32::from_be_bytes([buf[*pos], buf[*pos + 1], buf[*pos + 2], buf[*pos + 3]]);
    *pos += 4;
    Ok(v)
}

/// Loads a big-endian IDX image/label pair.
///
/// Image files carry magic `0x00000803` followed by three u32 dims
/// `(count, rows, cols)`; label files carry `0x00000801` and one dim. The
/// byte payloads are row-major. Image and label counts must match.
pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<RawImageSet> {
    let images = std::fs::read(image_path)?;
    let labels = std::fs::read(label_path)?;

    let mut pos = 0;
    let magic = read_be_u32(&images, &mut pos, "image file")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let m = read_be_u32(&images, &mut pos, "image file")? as usize;
    let h = read_be_u32(&images, &mut pos, "image file")? as usize;
    let w = read_be_u32(&images, &mut pos, "image file")? as usize;
    let payload = m * h * w;
    if images.len() - pos < payload {
        return Err(Error::Truncation(format!(
            "image payload holds {} bytes, header promises {payload}",
            images.len() - pos
        )));
    }
    let pixels = images[pos..pos + payload].to_vec();

    let mut lpos = 0;
    let lmagic = read_be_u32(&labels, &mut lpos, "label file")?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(Error::format(format!(
            "label file magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let lm = read_be_u32(&labels, &mut lpos, "label file")? as usize;
    if labels.len() - lpos < lm {
        return Err(Error::Truncation(format!(
            "label payload holds {} bytes, header promises {lm}",
            labels.len() - lpos
        )));
    }
    if lm != m {
        return Err(Error::CountMismatch(format!(
            "{m} images vs {lm} labels"
        )));
    }
    let labels = labels[lpos..lpos + lm].to_vec();

    Ok(RawImageSet {
        pixels,
        dims: [m, h, w, 1],
        labels,
    })
}

/// Writes an IDX image/label pair; inverse of [`load_idx`] for C == 1.
pub fn write_idx(set: &RawImageSet, image_path: &Path, label_path: &Path) -> Result<()> {
    let [m, h, w, c] = set.dims;
    if c != 1 {
        return Err(Error::Channel(format!("IDX stores single-channel images, got C={c}")));
    }
    let mut img = Vec::with_capacity(16 + set.pixels.len());
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(m as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    img.extend_from_slice(&set.pixels);
    std::fs::write(image_path, img)?;

    let mut lab = Vec::with_capacity(8 + set.labels.len());
    lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(m as u32).to_be_bytes());
    lab.extend_from_slice(&set.labels);
    std::fs::write(label_path, lab)?;
    Ok(())
}

/// Raw tensor container for externally preprocessed data (e.g. RGB corpora):
/// magic `EVT1`, dtype code (0 = u8, 1 = f64 big-endian), ndim byte, ndim
/// big-endian u32 dims, then the row-major payload.
pub fn write_evt1_images(set: &RawImageSet, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(EVT1_MAGIC)?;
    f.write_all(&[0u8, 4u8])?;
    for d in set.dims {
        f.write_all(&(d as u32).to_be_bytes())?;
    }
    f.write_all(&set.pixels)?;
    Ok(())
}

/// Reads the `EVT1` container written by [`write_evt1_images`] plus a label
/// IDX file.
pub fn load_evt1_images(image_path: &Path, label_path: &Path) -> Result<RawImageSet> {
    let mut f = std::fs::File::open(image_path)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    if buf.len() < 6 || &buf[0..4] != EVT1_MAGIC {
        return Err(Error::format("missing EVT1 magic".to_string()));
    }
    let dtype = buf[4];
    let ndim = buf[5] as usize;
    if dtype != 0 {
        return Err(Error::format(format!(
            "dtype code {dtype} not supported for image sets (expected 0 = u8)"
        )));
    }
    if ndim != 4 {
        return Err(Error::format(format!("image container needs 4 dims, got {ndim}")));
    }
    let mut pos = 6;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = read_be_u32(&buf, &mut pos, "EVT1")? as usize;
    }
    let payload: usize = dims.iter().product();
    if buf.len() - pos < payload {
        return Err(Error::Truncation(format!(
            "EVT1 payload holds {} bytes, header promises {payload}",
            buf.len() - pos
        )));
    }
    let pixels = buf[pos..pos + payload].to_vec();

    let labels = std::fs::read(label_path)?;
    let mut lpos = 0;
    let lmagic = read_be_u32(&labels, &mut lpos, "label file")?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(Error::format(format!(
            "label file magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let lm = read_be_u32(&labels, &mut lpos, "label file")? as usize;
    if lm != dims[0] {
        return Err(Error::CountMismatch(format!("{} images vs {lm} labels", dims[0])));
    }
    Ok(RawImageSet {
        pixels,
        dims,
        labels: labels[lpos..lpos + lm].to_vec(),
    })
}

/// BT.601 luma conversion: `gray = round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(rgb: &RawImageSet) -> Result<RawImageSet> {
    let [m, h, w, c] = rgb.dims;
    if c != 3 {
        return Err(Error::Channel(format!("grayscale conversion needs C=3, got C={c}")));
    }
    let mut pixels = Vec::with_capacity(m * h * w);
    for px in rgb.pixels.chunks_exact(3) {
        let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        pixels.push(y.round().clamp(0.0, 255.0) as u8);
    }
    Ok(RawImageSet {
        pixels,
        dims: [m, h, w, 1],
        labels: rgb.labels.clone(),
    })
}

/// Scales bytes to `[0, 1]` floats. `num_classes` defaults to
/// `max(label) + 1` when not given.
pub fn normalize(raw: &RawImageSet, num_classes: Option<usize>) -> Result<Dataset> {
    let data: Vec<f64> = raw.pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<u32> = raw.labels.iter().map(|&b| b as u32).collect();
    let classes = num_classes
        .unwrap_or_else(|| raw.labels.iter().copied().max().unwrap_or(0) as usize + 1);
    Dataset::new(Tensor::new(raw.dims.to_vec(), data)?, labels, classes)
}

/// Seeded permutation split: the first `floor(fraction * M)` permuted
/// examples form the first part; the remainder the second. Disjoint and
/// exhaustive.
pub fn split_train_val(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let m = data.len();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng::rng_for(seed, crate::params::roles::SPLIT));
    let cut = (fraction * m as f64).floor() as usize;
    let train = data.take(&perm[..cut])?;
    let val = data.take(&perm[cut..])?;
    Ok((train, val))
}

/// Seeded subsample of `n` examples. In stratified mode class proportions are
/// preserved within one example per class (largest-remainder allocation).
pub fn subsample(data: &Dataset, n: usize, seed: u64, stratified: bool) -> Result<Dataset> {
    let m = data.len();
    if n == 0 || n > m {
        return Err(Error::Size(format!("cannot draw {n} of {m} examples")));
    }
    let mut gen = rng::rng_for(seed, crate::params::roles::SUBSAMPLE);
    let indices: Vec<usize> = if !stratified {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut gen);
        perm.truncate(n);
        perm
    } else {
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
        for (i, &l) in data.labels.iter().enumerate() {
            per_class[l as usize].push(i);
        }
        // Largest-remainder quota per class.
        let mut quota: Vec<usize> = Vec::with_capacity(data.num_classes);
        let mut rema: Vec<(f64, usize)> = Vec::with_capacity(data.num_classes);
        let mut assigned = 0usize;
        for (k, members) in per_class.iter().enumerate() {
            let exact = n as f64 * members.len() as f64 / m as f64;
            let base = (exact.floor() as usize).min(members.len());
            quota.push(base);
            assigned += base;
            rema.push((exact - exact.floor(), k));
        }
        rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut left = n - assigned;
        for &(_, k) in rema.iter().cycle() {
            if left == 0 {
                break;
            }
            if quota[k] < per_class[k].len() {
                quota[k] += 1;
                left -= 1;
            }
        }
        let mut indices = Vec::with_capacity(n);
        for (k, members) in per_class.iter().enumerate() {
            let mut pool = members.clone();
            pool.shuffle(&mut gen);
            indices.extend_from_slice(&pool[..quota[k]]);
        }
        indices.sort_unstable();
        indices
    };
    data.take(&indices)
}

/// Renders class-dependent Gaussian blob images: class `k` places a blob at a
/// fixed grid position, with additive noise of sigma 0.1. Deterministic for a
/// given seed; labels are balanced exactly.
pub fn synthetic_blobs(
    num_classes: usize,
    per_class: usize,
    image_hw: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || image_hw == 0 {
        return Err(Error::config("synthetic_blobs parameters must be positive".to_string()));
    }
    let grid = (num_classes as f64).sqrt().ceil() as usize;
    let sigma = image_hw as f64 / (2.0 * grid as f64 + 2.0);
    let mut gen = rng::rng_for(seed, crate::params::roles::SYNTH);
    let m = num_classes * per_class;
    let mut data = Vec::with_capacity(m * image_hw * image_hw);
    let mut labels = Vec::with_capacity(m);
    for k in 0..num_classes {
        let (gr, gc) = (k / grid, k % grid);
        let cy = (gr as f64 + 0.5) / grid as f64 * image_hw as f64;
        let cx = (gc as f64 + 0.5) / grid as f64 * image_hw as f64;
        for _ in 0..per_class {
            for y in 0..image_hw {
                for x in 0..image_hw {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let v = (-d2 / (2.0 * sigma * sigma)).exp()
                        + 0.1 * gen.sample::<f64, _>(rand_distr::StandardNormal);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
            labels.push(k as u32);
        }
    }
    Dataset::new(
        Tensor::new(vec![m, image_hw, image_hw, 1], data)?,
        labels,
        num_classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_raw() -> RawImageSet {
        RawImageSet {
            pixels: (0u8..=255).cycle().take(4 * 28 * 28).collect(),
            dims: [4, 28, 28, 1],
            labels: vec![0, 1, 2, 3],
        }
    }

    #[test]
    fn idx_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        let set = tiny_raw();
        write_idx(&set, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(set.pixels, back.pixels);
        assert_eq!(set.dims, back.dims);
        assert_eq!(set.labels, back.labels);
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&tiny_raw(), &ip, &lp).unwrap();
        // corrupt the label magic 0x801 -> 0x802
        let mut bytes = std::fs::read(&lp).unwrap();
        bytes[3] = 0x02;
        std::fs::write(&lp, bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));
    }

    #[test]
    fn idx_rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&tiny_raw(), &ip, &lp).unwrap();
        let mut small = tiny_raw();
        small.dims[0] = 3;
        small.pixels.truncate(3 * 28 * 28);
        small.labels.truncate(3);
        let lp2 = dir.path().join("lab2");
        write_idx(&small, &dir.path().join("img2"), &lp2).unwrap();
        assert!(matches!(load_idx(&ip, &lp2), Err(Error::CountMismatch(_))));
    }

    #[test]
    fn idx_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&tiny_raw(), &ip, &lp).unwrap();
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Truncation(_))));
    }

    #[test]
    fn grayscale_reference_values() {
        let rgb = RawImageSet {
            pixels: vec![255, 255, 255, 0, 0, 0, 255, 0, 0],
            dims: [1, 1, 3, 3],
            labels: vec![0],
        };
        let gray = to_grayscale(&rgb).unwrap();
        assert_eq!(gray.pixels, vec![255, 0, 76]);
        assert_eq!(gray.dims, [1, 1, 3, 1]);
    }

    #[test]
    fn grayscale_rejects_single_channel() {
        assert!(matches!(to_grayscale(&tiny_raw()), Err(Error::Channel(_))));
    }

    #[test]
    fn normalize_values() {
        let raw = RawImageSet {
            pixels: vec![255, 0, 128, 64],
            dims: [1, 2, 2, 1],
            labels: vec![0],
        };
        let d = normalize(&raw, Some(1)).unwrap();
        let v = d.inputs.data();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 0.5019607843137255).abs() < 1e-15);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let d = synthetic_blobs(2, 10, 6, 1).unwrap();
        let (a, b) = split_train_val(&d, 0.8, 9).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(b.len(), 4);
        // multiset of labels preserved
        let mut all: Vec<u32> = a.labels.iter().chain(b.labels.iter()).copied().collect();
        all.sort_unstable();
        let mut orig = d.labels.clone();
        orig.sort_unstable();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_floor_example() {
        let d = synthetic_blobs(1, 5, 4, 2).unwrap();
        let (a, b) = split_train_val(&d, 0.8, 0).unwrap();
        assert_eq!((a.len(), b.len()), (4, 1));
    }

    #[test]
    fn stratified_subsample_balances_classes() {
        let d = synthetic_blobs(10, 20, 5, 3).unwrap();
        let s = subsample(&d, 100, 4, true).unwrap();
        let mut counts = vec![0usize; 10];
        for &l in &s.labels {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10), "{counts:?}");
    }

    #[test]
    fn subsample_full_size_is_identity_content() {
        let d = synthetic_blobs(2, 5, 4, 7).unwrap();
        let s = subsample(&d, 10, 11, false).unwrap();
        let mut a = s.labels.clone();
        a.sort_unstable();
        let mut b = d.labels.clone();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn subsample_is_seed_repeatable() {
        let d = synthetic_blobs(3, 30, 5, 5).unwrap();
        let a = subsample(&d, 30, 17, true).unwrap();
        let b = subsample(&d, 30, 17, true).unwrap();
        assert_eq!(a, b);
        assert!(matches!(subsample(&d, 91, 0, false), Err(Error::Size(_))));
    }

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = synthetic_blobs(4, 3, 8, 9).unwrap();
        let b = synthetic_blobs(4, 3, 8, 9).unwrap();
        assert_eq!(a, b);
        let mut counts = vec![0; 4];
        for &l in &a.labels {
            counts[l as usize] += 1;
        }
        assert_eq!(counts, vec![3, 3, 3, 3]);
    }

    #[test]
    fn blobs_nearest_centroid_oracle() {
        // Independent check that the classes are separable: a centroid
        // classifier fit on one draw must score >= 0.95 on a fresh draw.
        let train = synthetic_blobs(2, 200, 10, 21).unwrap();
        let test = synthetic_blobs(2, 200, 10, 22).unwrap();
        let feat = train.example_len();
        let mut centroids = vec![vec![0.0f64; feat]; 2];
        let mut counts = [0usize; 2];
        for (i, &l) in train.labels.iter().enumerate() {
            counts[l as usize] += 1;
            let row = &train.inputs.data()[i * feat..(i + 1) * feat];
            for (c, v) in centroids[l as usize].iter_mut().zip(row) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            for v in c.iter_mut() {
                *v /= n as f64;
            }
        }
        let mut hits = 0usize;
        for (i, &l) in test.labels.iter().enumerate() {
            let row = &test.inputs.data()[i * feat..(i + 1) * feat];
            let d: Vec<f64> = centroids
                .iter()
                .map(|c| row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let pred = if d[0] <= d[1] { 0 } else { 1 };
            if pred == l as usize {
                hits += 1;
            }
        }
        let acc = hits as f64 / test.len() as f64;
        assert!(acc >= 0.95, "centroid accuracy {acc}");
    }

    #[test]
    fn evt1_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = RawImageSet {
            pixels: (0u8..120).collect(),
            dims: [2, 4, 5, 3],
            labels: vec![1, 0],
        };
        let ip = dir.path().join("img.evt1");
        let lp = dir.path().join("lab");
        write_evt1_images(&rgb, &ip).unwrap();
        // label file reuses the IDX label layout
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&rgb.labels);
        std::fs::write(&lp, lab).unwrap();
        let back = load_evt1_images(&ip, &lp).unwrap();
        assert_eq!(back.pixels, rgb.pixels);
        assert_eq!(back.dims, rgb.dims);
        assert_eq!(back.labels, rgb.labels);
    }
}
