//! Deterministic synthetic dataset: ten geometric shape classes drawn on
//! noisy backgrounds, plus the on-disk image and label formats.
//!
//! Every image is produced from its own RNG stream keyed by (seed, index),
//! so `generate_range(seed, a, n)` slices the exact same virtual dataset no
//! matter how it is chunked; train and test splits are disjoint index
//! ranges of one seed.
//!
//! Foreground color is drawn independently of the class so shape geometry
//! is the only label signal.
//!
//! Classes: 0 disc, 1 ring, 2 square, 3 frame, 4 triangle, 5 horizontal
//! stripes, 6 vertical stripes, 7 diagonal cross, 8 plus, 9 checkerboard.

use rand::Rng;
use std::path::Path;

use crate::rng::{purpose, stream};
use crate::tensor::{Element, Tensor};

pub const IMG_C: usize = 3;
pub const IMG_H: usize = 32;
pub const IMG_W: usize = 32;
pub const NUM_CLASSES: usize = 10;

const IMAGES_MAGIC: &[u8; 4] = b"SVDD";
const LABELS_MAGIC: &[u8; 4] = b"SVDL";
const FORMAT_VERSION: u32 = 1;

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    BadMagic { got: [u8; 4], expected: [u8; 4] },
    BadVersion { got: u32 },
    Truncated { while_reading: &'static str },
    CountMismatch { images: usize, labels: usize },
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "io error: {e}"),
            DataError::BadMagic { got, expected } => write!(
                f,
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            ),
            DataError::BadVersion { got } => write!(f, "unsupported format version {got}"),
            DataError::Truncated { while_reading } => {
                write!(f, "file truncated while reading {while_reading}")
            }
            DataError::CountMismatch { images, labels } => {
                write!(f, "{images} images but {labels} labels")
            }
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

// ── Dataset ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dataset {
    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.c * self.h * self.w;
        &self.images[i * per..(i + 1) * per]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Pixel tensor in [0, 255] plus usize labels.
    pub fn to_batch<T: Element>(&self) -> (Tensor<T>, Vec<usize>) {
        let data: Vec<T> = self.images.iter().map(|&b| T::of(b as f64)).collect();
        let t = Tensor::new(vec![self.n, self.c, self.h, self.w], data).expect("dataset shape");
        let labels = self.labels.iter().map(|&b| b as usize).collect();
        (t, labels)
    }

    /// A copy of images `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let per = self.c * self.h * self.w;
        Dataset {
            images: self.images[start * per..end * per].to_vec(),
            labels: self.labels[start..end].to_vec(),
            n: end - start,
            c: self.c,
            h: self.h,
            w: self.w,
        }
    }

    // ── Files ───────────────────────────────────────────────────────

    /// Image file: magic "SVDD", u32 version, u32 n/c/h/w, raw pixels.
    pub fn save_images(&self, path: &Path) -> Result<(), DataError> {
        let mut buf = Vec::with_capacity(24 + self.images.len());
        buf.extend_from_slice(IMAGES_MAGIC);
        for v in [FORMAT_VERSION, self.n as u32, self.c as u32, self.h as u32, self.w as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.images);
        write_atomic(path, &buf)
    }

    /// Label file: magic "SVDL", u32 version, u32 n, one byte per label.
    pub fn save_labels(&self, path: &Path) -> Result<(), DataError> {
        let mut buf = Vec::with_capacity(12 + self.labels.len());
        buf.extend_from_slice(LABELS_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&self.labels);
        write_atomic(path, &buf)
    }

    pub fn save(&self, images_path: &Path, labels_path: &Path) -> Result<(), DataError> {
        self.save_images(images_path)?;
        self.save_labels(labels_path)
    }

    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
        let (images, n, c, h, w) = load_images(images_path)?;
        let labels = load_labels(labels_path)?;
        if labels.len() != n {
            return Err(DataError::CountMismatch { images: n, labels: labels.len() });
        }
        Ok(Dataset { images, labels, n, c, h, w })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn load_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize, usize), DataError> {
    let buf = std::fs::read(path)?;
    if buf.len() < 4 {
        return Err(DataError::Truncated { while_reading: "image magic" });
    }
    if &buf[0..4] != IMAGES_MAGIC {
        let mut got = [0u8; 4];
        got.copy_from_slice(&buf[0..4]);
        return Err(DataError::BadMagic { got, expected: *IMAGES_MAGIC });
    }
    if buf.len() < 24 {
        return Err(DataError::Truncated { while_reading: "image header" });
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(DataError::BadVersion { got: version });
    }
    let (n, c, h, w) = (word(8) as usize, word(12) as usize, word(16) as usize, word(20) as usize);
    let want = n * c * h * w;
    if buf.len() != 24 + want {
        return Err(DataError::Truncated { while_reading: "pixel data" });
    }
    Ok((buf[24..].to_vec(), n, c, h, w))
}

fn load_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let buf = std::fs::read(path)?;
    if buf.len() < 4 {
        return Err(DataError::Truncated { while_reading: "label magic" });
    }
    if &buf[0..4] != LABELS_MAGIC {
        let mut got = [0u8; 4];
        got.copy_from_slice(&buf[0..4]);
        return Err(DataError::BadMagic { got, expected: *LABELS_MAGIC });
    }
    if buf.len() < 12 {
        return Err(DataError::Truncated { while_reading: "label header" });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(DataError::BadVersion { got: version });
    }
    let n = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() != 12 + n {
        return Err(DataError::Truncated { while_reading: "label data" });
    }
    Ok(buf[12..].to_vec())
}

// ── Generation ──────────────────────────────────────────────────────────

/// Generates images `[start, start + n)` of the virtual dataset `seed`.
pub fn generate_range(seed: u64, start: usize, n: usize) -> Dataset {
    let per = IMG_C * IMG_H * IMG_W;
    let mut images = vec![0u8; n * per];
    let mut labels = vec![0u8; n];
    for i in 0..n {
        let index = start + i;
        let label = (index % NUM_CLASSES) as u8;
        labels[i] = label;
        let mut rng = stream(seed, purpose::DATA_GEN, index as u64);
        render(label as usize, &mut rng, &mut images[i * per..(i + 1) * per]);
    }
    Dataset { images, labels, n, c: IMG_C, h: IMG_H, w: IMG_W }
}

pub fn generate(seed: u64, n: usize) -> Dataset {
    generate_range(seed, 0, n)
}

/// Paints one image: noisy mid-gray background, then the class shape at a
/// modest, sign-random contrast with per-pixel jitter. Contrast is kept
/// low on purpose: pixel-budget attacks should be able to reach the
/// decision boundary, so the shape must be found by aggregating evidence
/// rather than glowing against the background.
fn render(class: usize, rng: &mut impl Rng, out: &mut [u8]) {
    let h = IMG_H as i32;
    let w = IMG_W as i32;

    // Background: per-image gray base with per-pixel noise.
    let bg_base: i32 = rng.random_range(70..=110);
    for v in out.iter_mut() {
        let noise: i32 = rng.random_range(-12..=12);
        *v = (bg_base + noise).clamp(0, 255) as u8;
    }

    // Shape placement and color: a moderate per-channel lift above the
    // background level. Both levels sit well inside [0, 255], so the full
    // perturbation ball stays available around every pixel, and the
    // contrast is kept small enough that pixel-budget attacks can push
    // images across the decision boundary. Full-field texture classes
    // (stripes, checkerboard) aggregate evidence over the whole plane, so
    // they get a weaker lift than the compact blob classes; otherwise they
    // are simultaneously the easiest to classify and the most attack-proof.
    let cy: i32 = h / 2 + rng.random_range(-5..=5);
    let cx: i32 = w / 2 + rng.random_range(-5..=5);
    let rad: i32 = rng.random_range(7..=12);
    let full_field = matches!(class, 5 | 6 | 9);
    let (d_lo, d_hi) = if full_field { (28, 48) } else { (50, 85) };
    let mut channel = || {
        let delta: i32 = rng.random_range(d_lo..=d_hi);
        (bg_base + delta).clamp(0, 255)
    };
    let color: [i32; 3] = [channel(), channel(), channel()];
    let phase: i32 = rng.random_range(0..4);
    let plane = (IMG_H * IMG_W) as i32;

    for r in 0..h {
        for c in 0..w {
            let dy = r - cy;
            let dx = c - cx;
            let inside = match class {
                0 => dy * dy + dx * dx <= rad * rad,
                1 => {
                    let d2 = dy * dy + dx * dx;
                    let inner = rad - 3;
                    d2 <= rad * rad && d2 >= inner * inner
                }
                2 => dy.abs() <= rad && dx.abs() <= rad,
                3 => {
                    let che = dy.abs().max(dx.abs());
                    che <= rad && che >= rad - 2
                }
                4 => dy.abs() <= rad && dx.abs() * 2 <= dy + rad,
                5 => (r + phase).rem_euclid(4) < 2,
                6 => (c + phase).rem_euclid(4) < 2,
                7 => dy.abs().max(dx.abs()) <= rad && ((dy - dx).abs() <= 1 || (dy + dx).abs() <= 1),
                8 => dy.abs().max(dx.abs()) <= rad && (dy.abs() <= 1 || dx.abs() <= 1),
                _ => ((r + phase) / 4 + (c + phase) / 4) % 2 == 0,
            };
            if inside {
                let jitter: i32 = rng.random_range(-8..=8);
                for ch in 0..3i32 {
                    let v = (color[ch as usize] + jitter).clamp(0, 255);
                    out[(ch * plane + r * w + c) as usize] = v as u8;
                }
            } else {
                // Keep the RNG schedule independent of shape coverage.
                let _: i32 = rng.random_range(-8..=8);
            }
        }
    }
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes_are_frozen() {
        let d = generate(3, 1);
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("x.images");
        let lp = dir.path().join("x.labels");
        d.save(&ip, &lp).unwrap();

        let img = std::fs::read(&ip).unwrap();
        assert_eq!(&img[0..4], b"SVDD");
        assert_eq!(u32::from_le_bytes(img[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(img[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(img[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(img[16..20].try_into().unwrap()), 32);
        assert_eq!(u32::from_le_bytes(img[20..24].try_into().unwrap()), 32);
        assert_eq!(img.len(), 24 + 3 * 32 * 32);

        let lab = std::fs::read(&lp).unwrap();
        assert_eq!(&lab[0..4], b"SVDL");
        assert_eq!(u32::from_le_bytes(lab[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(lab[8..12].try_into().unwrap()), 1);
        assert_eq!(lab.len(), 13);
        assert_eq!(lab[12], 0);
    }

    #[test]
    fn round_trip_is_identical() {
        let d = generate(7, 23);
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("d.images");
        let lp = dir.path().join("d.labels");
        d.save(&ip, &lp).unwrap();
        let back = Dataset::load(&ip, &lp).unwrap();
        assert_eq!(back, d);

        // Saving twice produces byte-identical files.
        let first = std::fs::read(&ip).unwrap();
        d.save_images(&ip).unwrap();
        assert_eq!(std::fs::read(&ip).unwrap(), first);
    }

    #[test]
    fn generation_is_deterministic_and_chunk_stable() {
        let a = generate(11, 30);
        let b = generate(11, 30);
        assert_eq!(a, b);
        let tail = generate_range(11, 10, 20);
        assert_eq!(&a.images[10 * 3072..], &tail.images[..]);
        assert_eq!(&a.labels[10..], &tail.labels[..]);
        let other = generate(12, 30);
        assert_ne!(a.images, other.images);
    }

    #[test]
    fn labels_are_balanced_round_robin() {
        let d = generate(5, 25);
        let mut counts = [0usize; NUM_CLASSES];
        for &l in &d.labels {
            assert!((l as usize) < NUM_CLASSES);
            counts[l as usize] += 1;
        }
        let max = counts.iter().max().unwrap();
        let min = counts.iter().min().unwrap();
        assert!(max - min <= 1, "counts {counts:?}");
        assert_eq!(d.labels[0], 0);
        assert_eq!(d.labels[13], 3);
    }

    #[test]
    fn shapes_put_paint_where_expected() {
        // Disc center is bright, frame center is background-dark.
        let d = generate(2, 40);
        let mid = |img: &[u8]| {
            let mut s = 0u32;
            for ch in 0..3 {
                for r in 15..17 {
                    for c in 15..17 {
                        s += img[ch * 1024 + r * 32 + c] as u32;
                    }
                }
            }
            s as f64 / 12.0
        };
        let mut disc_mids = Vec::new();
        let mut frame_mids = Vec::new();
        for i in 0..d.n {
            match d.label(i) {
                0 => disc_mids.push(mid(d.image(i))),
                3 => frame_mids.push(mid(d.image(i))),
                _ => {}
            }
        }
        let disc = disc_mids.iter().sum::<f64>() / disc_mids.len() as f64;
        let frame = frame_mids.iter().sum::<f64>() / frame_mids.len() as f64;
        assert!(disc > 90.0, "disc centers should be painted, mean {disc}");
        assert!(frame < 81.0, "frame centers should stay background, mean {frame}");
    }

    #[test]
    fn to_batch_shape_and_range() {
        let d = generate(9, 6);
        let (t, y) = d.to_batch::<f32>();
        assert_eq!(t.shape(), &[6, 3, 32, 32]);
        assert_eq!(y.len(), 6);
        assert!(t.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        assert_eq!(t.data()[0], d.images[0] as f32);
    }

    #[test]
    fn load_rejects_corrupt_files() {
        let d = generate(1, 4);
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("d.images");
        let lp = dir.path().join("d.labels");
        d.save(&ip, &lp).unwrap();

        let good = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, b"NOPE").unwrap();
        assert!(matches!(Dataset::load(&ip, &lp), Err(DataError::BadMagic { .. })));

        std::fs::write(&ip, &good[..good.len() - 5]).unwrap();
        assert!(matches!(Dataset::load(&ip, &lp), Err(DataError::Truncated { .. })));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        std::fs::write(&ip, &bad_version).unwrap();
        assert!(matches!(Dataset::load(&ip, &lp), Err(DataError::BadVersion { got: 9 })));

        std::fs::write(&ip, &good).unwrap();
        let mut lab = std::fs::read(&lp).unwrap();
        lab[8] = 7; // claims 7 labels, file has 1
        std::fs::write(&lp, &lab).unwrap();
        assert!(matches!(Dataset::load(&ip, &lp), Err(DataError::Truncated { .. })));
    }

    #[test]
    fn count_mismatch_is_detected() {
        let d4 = generate(1, 4);
        let d6 = generate(1, 6);
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("d.images");
        let lp = dir.path().join("d.labels");
        d4.save_images(&ip).unwrap();
        d6.save_labels(&lp).unwrap();
        assert!(matches!(
            Dataset::load(&ip, &lp),
            Err(DataError::CountMismatch { images: 4, labels: 6 })
        ));
    }
}
