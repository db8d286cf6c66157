//! Dataset ingestion and synthetic generators.
//!
//! IDX is the big-endian binary container used by MNIST-style datasets:
//! image files carry magic 0x00000803 and dims (count, rows, cols), label
//! files carry magic 0x00000801 and a count. Gzip-compressed files are
//! accepted transparently (sniffed by the 1f 8b magic).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::bufread::GzDecoder;

use crate::dist::NoiseSource;
use crate::error::{Error, Result};
use crate::mi_eval::DiscreteJoint;
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images as N×D floats in [0,1] plus optional integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<f64>,
    rows: usize,
    cols: usize,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        images: Vec<f64>,
        rows: usize,
        cols: usize,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let dim = rows * cols;
        if dim == 0 || images.len() % dim != 0 {
            return Err(Error::Dim {
                context: "Dataset::new images",
                expected: dim,
                got: images.len(),
            });
        }
        let n = images.len() / dim;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Dim {
                    context: "Dataset::new labels",
                    expected: n,
                    got: l.len(),
                });
            }
        }
        Ok(Dataset {
            images,
            rows,
            cols,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Rows `idx` gathered into a [B × D] tensor.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        Tensor::from_vec(&[idx.len(), d], data).expect("batch shape")
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.dim();
        let mut images = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        Dataset {
            images,
            rows: self.rows,
            cols: self.cols,
            labels,
        }
    }

    /// First `n` samples and the rest, in order.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let head: Vec<usize> = (0..n.min(self.len())).collect();
        let tail: Vec<usize> = (n.min(self.len())..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinarizeMode {
    None,
    Threshold(f64),
    Stochastic(u64),
}

/// Pixel binarization: thresholding, per-pixel Bernoulli draws, or identity.
pub fn binarize(ds: &Dataset, mode: BinarizeMode) -> Dataset {
    let mut out = ds.clone();
    match mode {
        BinarizeMode::None => {}
        BinarizeMode::Threshold(t) => {
            out.images
                .iter_mut()
                .for_each(|p| *p = if *p >= t { 1.0 } else { 0.0 });
        }
        BinarizeMode::Stochastic(seed) => {
            let mut noise = NoiseSource::new(seed);
            let u = noise.uniform(out.images.len());
            for (p, ui) in out.images.iter_mut().zip(u) {
                *p = if ui < *p { 1.0 } else { 0.0 };
            }
        }
    }
    out
}

fn read_u32_be(r: &mut impl Read, path: &Path, offset: &mut u64) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        offset: *offset,
        message: "truncated header".into(),
    })?;
    *offset += 4;
    Ok(u32::from_be_bytes(buf))
}

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut magic = [0u8; 2];
    let peeked = reader.fill_buf_peek(&mut magic)?;
    if peeked && magic == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

trait PeekExt {
    fn fill_buf_peek(&mut self, out: &mut [u8; 2]) -> Result<bool>;
}

impl PeekExt for BufReader<File> {
    fn fill_buf_peek(&mut self, out: &mut [u8; 2]) -> Result<bool> {
        use std::io::BufRead;
        let buf = self
            .fill_buf()
            .map_err(|e| Error::io("<reader>", e))?;
        if buf.len() >= 2 {
            out.copy_from_slice(&buf[..2]);
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

/// Parses IDX image (and optionally label) files; pixels are scaled by
/// 1/255.
pub fn idx_load(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let mut r = open_maybe_gzip(images_path)?;
    let mut off = 0u64;
    let magic = read_u32_be(&mut r, images_path, &mut off)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&mut r, images_path, &mut off)? as usize;
    let rows = read_u32_be(&mut r, images_path, &mut off)? as usize;
    let cols = read_u32_be(&mut r, images_path, &mut off)? as usize;
    let mut raw = vec![0u8; n * rows * cols];
    r.read_exact(&mut raw).map_err(|_| Error::Format {
        path: images_path.to_path_buf(),
        offset: off,
        message: format!("truncated pixel data, expected {} bytes", n * rows * cols),
    })?;
    let images: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();

    let labels = match labels_path {
        None => None,
        Some(lp) => {
            let mut r = open_maybe_gzip(lp)?;
            let mut off = 0u64;
            let magic = read_u32_be(&mut r, lp, &mut off)?;
            if magic != LABEL_MAGIC {
                return Err(Error::Format {
                    path: lp.to_path_buf(),
                    offset: 0,
                    message: format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
                });
            }
            let ln = read_u32_be(&mut r, lp, &mut off)? as usize;
            if ln != n {
                return Err(Error::Format {
                    path: lp.to_path_buf(),
                    offset: 4,
                    message: format!("label count {ln} does not match image count {n}"),
                });
            }
            let mut raw = vec![0u8; ln];
            r.read_exact(&mut raw).map_err(|_| Error::Format {
                path: lp.to_path_buf(),
                offset: off,
                message: format!("truncated label data, expected {ln} bytes"),
            })?;
            Some(raw.iter().map(|&b| b as usize).collect())
        }
    };

    Dataset::new(images, rows, cols, labels)
}

/// Writes the dataset back out as uncompressed IDX files. Pixels are stored
/// as round(255 p), so `idx_load(idx_save(ds))` is bit-exact for any dataset
/// that itself came from IDX bytes.
pub fn idx_save(ds: &Dataset, images_path: &Path, labels_path: Option<&Path>) -> Result<()> {
    let f = File::create(images_path).map_err(|e| Error::io(images_path, e))?;
    let mut w = BufWriter::new(f);
    let write = |w: &mut BufWriter<File>, v: u32| -> Result<()> {
        w.write_all(&v.to_be_bytes())
            .map_err(|e| Error::io(images_path, e))
    };
    write(&mut w, IMAGE_MAGIC)?;
    write(&mut w, ds.len() as u32)?;
    write(&mut w, ds.rows as u32)?;
    write(&mut w, ds.cols as u32)?;
    let bytes: Vec<u8> = ds
        .images
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes).map_err(|e| Error::io(images_path, e))?;

    if let Some(lp) = labels_path {
        let labels = ds
            .labels
            .as_ref()
            .ok_or_else(|| Error::contract("idx_save: dataset has no labels"))?;
        let f = File::create(lp).map_err(|e| Error::io(lp, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&LABEL_MAGIC.to_be_bytes())
            .map_err(|e| Error::io(lp, e))?;
        w.write_all(&(labels.len() as u32).to_be_bytes())
            .map_err(|e| Error::io(lp, e))?;
        let bytes: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
        w.write_all(&bytes).map_err(|e| Error::io(lp, e))?;
    }
    Ok(())
}

// ── synthetic toy joints ────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyJointKind {
    /// Product of non-uniform marginals; MI = 0.
    Independent,
    /// Uniform identity coupling over k states; MI = ln k.
    Identity { k: usize },
    /// Uniform z, x = z with probability 1−eps, otherwise uniform over the
    /// remaining states.
    NoisyChannel { k: usize, eps: f64 },
}

/// Builds an enumerable joint table for oracle tests.
pub fn make_toy_joint(kind: ToyJointKind, seed: u64) -> Result<DiscreteJoint> {
    match kind {
        ToyJointKind::Independent => {
            let mut noise = NoiseSource::new(seed);
            let mut px = noise.uniform(3);
            let mut pz = noise.uniform(3);
            let (sx, sz): (f64, f64) = (px.iter().sum(), pz.iter().sum());
            px.iter_mut().for_each(|p| *p /= sx);
            pz.iter_mut().for_each(|p| *p /= sz);
            let mut table: Vec<Vec<f64>> = px
                .iter()
                .map(|&a| pz.iter().map(|&b| a * b).collect())
                .collect();
            let total: f64 = table.iter().flatten().sum();
            table.iter_mut().flatten().for_each(|p| *p /= total);
            DiscreteJoint::new(table)
        }
        ToyJointKind::Identity { k } => {
            if k < 2 {
                return Err(Error::contract("identity joint needs k >= 2"));
            }
            let mut table = vec![vec![0.0; k]; k];
            for (i, row) in table.iter_mut().enumerate() {
                row[i] = 1.0 / k as f64;
            }
            DiscreteJoint::new(table)
        }
        ToyJointKind::NoisyChannel { k, eps } => {
            if k < 2 || !(0.0..1.0).contains(&eps) {
                return Err(Error::contract("noisy channel needs k >= 2, eps in [0,1)"));
            }
            let kf = k as f64;
            let mut table = vec![vec![0.0; k]; k];
            for (x, row) in table.iter_mut().enumerate() {
                for (z, cell) in row.iter_mut().enumerate() {
                    let px_given_z = if x == z {
                        1.0 - eps
                    } else {
                        eps / (kf - 1.0)
                    };
                    *cell = px_given_z / kf;
                }
            }
            DiscreteJoint::new(table)
        }
    }
}

// ── synthetic image data ────────────────────────────────────────────

/// 5×7 digit glyphs, one row per scanline, bit 4 = leftmost column.
const DIGIT_FONT: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E], // 0
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E], // 1
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F], // 2
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E], // 3
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02], // 4
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E], // 5
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E], // 6
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08], // 7
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E], // 8
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C], // 9
];

/// Bilinear lookup into a 5×7 glyph bitmap at continuous coordinates.
fn glyph_sample(bits: &[u8; 7], u: f64, v: f64) -> f64 {
    let at = |gx: i64, gy: i64| -> f64 {
        if !(0..5).contains(&gx) || !(0..7).contains(&gy) {
            return 0.0;
        }
        ((bits[gy as usize] >> (4 - gx)) & 1) as f64
    };
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1) * (1.0 - fx) * fy
        + at(x0 + 1, y0 + 1) * fx * fy
}

/// Seeded 16×16 ten-class digit-glyph dataset. Each sample renders a 5×7
/// glyph at 2× scale under continuous style factors — sub-pixel placement,
/// rotation, scale, shear, speckle — so class is the only discrete
/// generative factor and the continuous latent has real work to do.
pub fn synthetic_digits(n: usize, seed: u64) -> Dataset {
    let (rows, cols) = (16usize, 16usize);
    let mut noise = NoiseSource::new(seed);
    let mut images = Vec::with_capacity(n * rows * cols);
    let mut labels = Vec::with_capacity(n);

    for _ in 0..n {
        let digit = noise.gen_index(10);
        labels.push(digit);
        let bits = &DIGIT_FONT[digit];
        let style = noise.uniform(5);
        let dx = -0.5 + 1.0 * style[0];
        let dy = -0.5 + 1.0 * style[1];
        let rot = -0.12 + 0.24 * style[2];
        let scale = 0.95 + 0.15 * style[3];
        let shear = -0.10 + 0.20 * style[4];
        let intensity = 0.9;
        let (cx, cy) = (cols as f64 / 2.0 + dx, rows as f64 / 2.0 + dy);
        let (sin, cos) = rot.sin_cos();

        let speckle = noise.uniform(rows * cols);
        let floor = noise.uniform(rows * cols);
        for y in 0..rows {
            for x in 0..cols {
                // inverse affine map from canvas to 5x7 glyph coordinates
                let rx = x as f64 - cx;
                let ry = y as f64 - cy;
                let gx = (cos * rx + sin * ry) / (2.0 * scale);
                let gy = (-sin * rx + cos * ry) / (2.0 * scale);
                let u = (gx - shear * gy) + 2.0;
                let v = gy + 3.0;
                let mut p = intensity * glyph_sample(bits, u, v);
                // multiplicative ink speckle and an additive background floor
                p *= 1.0 - 0.08 * speckle[y * cols + x];
                p += 0.10 * floor[y * cols + x];
                images.push(p.clamp(0.0, 1.0));
            }
        }
    }
    Dataset::new(images, rows, cols, Some(labels)).expect("synthetic shape")
}

/// `n_distinct` random binary 16×16 images, repeated in order; used for
/// memorization checks.
pub fn toy_blob_images(n_distinct: usize, seed: u64) -> Dataset {
    let (rows, cols) = (16usize, 16usize);
    let mut noise = NoiseSource::new(seed);
    let mut images = Vec::with_capacity(n_distinct * rows * cols);
    for _ in 0..n_distinct {
        // blocky blobs: fill random 4x4 cells so images are compressible
        let mut img = vec![0.0f64; rows * cols];
        for cy in 0..4 {
            for cx in 0..4 {
                if noise.uniform(1)[0] < 0.5 {
                    for y in 0..4 {
                        for x in 0..4 {
                            img[(cy * 4 + y) * cols + cx * 4 + x] = 1.0;
                        }
                    }
                }
            }
        }
        images.extend_from_slice(&img);
    }
    Dataset::new(images, rows, cols, None).expect("blob shape")
}

/// 2-D Gaussian cluster sample for the EM demo: `n_per` points around each
/// center with isotropic spread `sigma`.
pub fn gaussian_blobs_2d(
    centers: &[(f64, f64)],
    n_per: usize,
    sigma: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut noise = NoiseSource::new(seed);
    let mut points = Vec::with_capacity(centers.len() * n_per);
    for &(cx, cy) in centers {
        for _ in 0..n_per {
            let e = noise.standard_normal(2);
            points.push(vec![cx + sigma * e[0], cy + sigma * e[1]]);
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mi_eval::brute_force_mi;
    use approx::assert_abs_diff_eq;

    /// Independent byte-emitter for IDX fixtures (no shared code with
    /// idx_save).
    fn emit_idx_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let img_path = dir.join("fixture-images-idx3-ubyte");
        let lbl_path = dir.join("fixture-labels-idx1-ubyte");
        let mut img: Vec<u8> = Vec::new();
        img.extend_from_slice(&[0, 0, 8, 3]); // magic 2051
        img.extend_from_slice(&[0, 0, 0, 2]); // 2 images
        img.extend_from_slice(&[0, 0, 0, 2]); // 2 rows
        img.extend_from_slice(&[0, 0, 0, 2]); // 2 cols
        img.extend_from_slice(&[0, 255, 128, 64, 255, 0, 1, 2]);
        std::fs::write(&img_path, &img).unwrap();
        let mut lbl: Vec<u8> = Vec::new();
        lbl.extend_from_slice(&[0, 0, 8, 1]); // magic 2049
        lbl.extend_from_slice(&[0, 0, 0, 2]);
        lbl.extend_from_slice(&[7, 3]);
        std::fs::write(&lbl_path, &lbl).unwrap();
        (img_path, lbl_path)
    }

    #[test]
    fn idx_fixture_round_trips_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (img_path, lbl_path) = emit_idx_fixture(dir.path());
        let ds = idx_load(&img_path, Some(&lbl_path)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels().unwrap(), &[7, 3]);
        assert_abs_diff_eq!(ds.image(0)[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ds.image(0)[2], 128.0 / 255.0, epsilon = 1e-15);

        // save + reload is bit-exact
        let img2 = dir.path().join("resaved-images");
        let lbl2 = dir.path().join("resaved-labels");
        idx_save(&ds, &img2, Some(&lbl2)).unwrap();
        let ds2 = idx_load(&img2, Some(&lbl2)).unwrap();
        assert_eq!(ds.images, ds2.images);
        assert_eq!(ds.labels, ds2.labels);
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        std::fs::write(&path, [0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        let err = idx_load(&path, None).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "got {err:?}");
    }

    #[test]
    fn idx_rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 5, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[1, 2, 3]); // far fewer than 20 pixels
        std::fs::write(&path, bytes).unwrap();
        assert!(idx_load(&path, None).is_err());
    }

    #[test]
    fn idx_accepts_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let (img_path, _) = emit_idx_fixture(dir.path());
        let gz_path = dir.path().join("images.gz");
        let raw = std::fs::read(&img_path).unwrap();
        let f = File::create(&gz_path).unwrap();
        let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        enc.finish().unwrap();
        let ds = idx_load(&gz_path, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_abs_diff_eq!(ds.image(0)[2], 128.0 / 255.0, epsilon = 1e-15);
    }

    #[test]
    fn binarize_modes() {
        let ds = Dataset::new(vec![0.6, 0.4, 0.6, 0.6], 2, 2, None).unwrap();
        let t = binarize(&ds, BinarizeMode::Threshold(0.5));
        assert_eq!(t.image(0), &[1.0, 0.0, 1.0, 1.0]);

        let n = binarize(&ds, BinarizeMode::None);
        assert_eq!(n.image(0), ds.image(0));

        let s1 = binarize(&ds, BinarizeMode::Stochastic(9));
        let s2 = binarize(&ds, BinarizeMode::Stochastic(9));
        assert_eq!(s1.image(0), s2.image(0));
        assert!(s1.image(0).iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn toy_joint_mi_values() {
        let ind = make_toy_joint(ToyJointKind::Independent, 11).unwrap();
        assert_abs_diff_eq!(brute_force_mi(&ind), 0.0, epsilon = 1e-12);

        let id = make_toy_joint(ToyJointKind::Identity { k: 4 }, 0).unwrap();
        assert_abs_diff_eq!(brute_force_mi(&id), 4.0f64.ln(), epsilon = 1e-12);

        // binary channel: MI = ln 2 − H_b(eps)
        let nc = make_toy_joint(ToyJointKind::NoisyChannel { k: 2, eps: 0.1 }, 0).unwrap();
        let hb = -(0.1f64 * 0.1f64.ln() + 0.9 * 0.9f64.ln());
        assert_abs_diff_eq!(brute_force_mi(&nc), 2.0f64.ln() - hb, epsilon = 1e-12);
        assert_abs_diff_eq!(brute_force_mi(&nc), 0.368_064_2, epsilon = 1e-6);
    }

    #[test]
    fn synthetic_digits_shapes_and_determinism() {
        let a = synthetic_digits(64, 3);
        let b = synthetic_digits(64, 3);
        assert_eq!(a.len(), 64);
        assert_eq!(a.dim(), 256);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        assert!(a.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
        // all ten classes appear in a decent-sized draw
        let classes: std::collections::HashSet<_> =
            a.labels().unwrap().iter().copied().collect();
        assert_eq!(classes.len(), 10);
    }

    #[test]
    fn batch_gathers_rows() {
        let ds = synthetic_digits(10, 1);
        let b = ds.batch(&[3, 7]);
        assert_eq!(b.shape(), &[2, 256]);
        assert_eq!(&b.data()[..256], ds.image(3));
        assert_eq!(&b.data()[256..], ds.image(7));
    }
}
