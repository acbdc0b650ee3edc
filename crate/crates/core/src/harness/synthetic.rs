//! Desk-scale stand-ins for image classification tasks.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Targets, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    /// Gaussian clusters on a circle; linearly separable.
    Blobs,
    /// Grid whose class is an XOR-style function of row and column parity;
    /// not linearly separable.
    XorGrid,
    /// Concentric noisy rings, one per class.
    Rings,
    /// Handwritten digits from IDX files, box-downsampled to 8×8.
    DigitsSubset { images: PathBuf, labels: PathBuf },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Blobs => "blobs",
            TaskKind::XorGrid => "xor_grid",
            TaskKind::Rings => "rings",
            TaskKind::DigitsSubset { .. } => "digits_subset",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(TaskKind::Blobs),
            "xor_grid" => Ok(TaskKind::XorGrid),
            "rings" => Ok(TaskKind::Rings),
            "digits_subset" => Err(Error::InvalidArgument(
                "digits_subset needs IDX image and label paths".into(),
            )),
            other => Err(Error::InvalidArgument(format!("unknown task kind {other:?}"))),
        }
    }
}

const BLOB_RADIUS: f64 = 3.0;
const BLOB_STD: f64 = 0.7;
const GRID_HALF_WIDTH: f64 = 2.0;
const GRID_FILL: f64 = 0.8;
const RING_NOISE: f64 = 0.12;

/// Two classes form a checkerboard. Otherwise rows cycle through `a` values
/// and columns through `b` (`a * b >= C`) and a cell's class is
/// `(row mod a) * b + (col mod b)`; cells with an index of `C` or more stay
/// empty. Each class is spread over the whole plane.
struct GridLayout {
    a: usize,
    b: usize,
    side: usize,
    checkerboard: bool,
}

impl GridLayout {
    fn new(classes: usize) -> Self {
        let a = (classes as f64).sqrt().ceil() as usize;
        let b = classes.div_ceil(a);
        Self {
            a,
            b,
            side: 2 * a.max(b).max(2),
            checkerboard: classes == 2,
        }
    }

    fn class_of(&self, i: usize, j: usize) -> usize {
        if self.checkerboard {
            (i + j) % 2
        } else {
            ((i % self.a) * self.b + j % self.b) % (self.a * self.b)
        }
    }
}

fn balanced_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

/// `n` examples over `classes` classes, balanced to within one example.
pub fn gen_synthetic_task(kind: &TaskKind, n: usize, classes: usize, seed: u64) -> Result<Dataset<f32>> {
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if n < classes * 10 {
        return Err(Error::InvalidArgument(format!(
            "{n} examples is fewer than 10 per class for {classes} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = kind.name();
    if let TaskKind::DigitsSubset { images, labels } = kind {
        return digits_subset(images, labels, n, classes);
    }
    let labels = balanced_labels(n, classes, &mut rng);
    let mut xs = Vec::with_capacity(2 * n);
    match kind {
        TaskKind::Blobs => {
            let noise = Normal::new(0.0, BLOB_STD).expect("valid std");
            for &c in &labels {
                let angle = 2.0 * PI * c as f64 / classes as f64 + PI / 4.0;
                xs.push((BLOB_RADIUS * angle.cos() + noise.sample(&mut rng)) as f32);
                xs.push((BLOB_RADIUS * angle.sin() + noise.sample(&mut rng)) as f32);
            }
        }
        TaskKind::XorGrid => {
            let layout = GridLayout::new(classes);
            let cell = 2.0 * GRID_HALF_WIDTH / layout.side as f64;
            let cells: Vec<Vec<(usize, usize)>> = (0..classes)
                .map(|c| {
                    (0..layout.side * layout.side)
                        .map(|k| (k / layout.side, k % layout.side))
                        .filter(|&(i, j)| layout.class_of(i, j) == c)
                        .collect()
                })
                .collect();
            for &c in &labels {
                let (i, j) = cells[c][rng.random_range(0..cells[c].len())];
                for idx in [i, j] {
                    let offset = (rng.random::<f64>() - 0.5) * GRID_FILL + 0.5;
                    xs.push((-GRID_HALF_WIDTH + (idx as f64 + offset) * cell) as f32);
                }
            }
        }
        TaskKind::Rings => {
            let noise = Normal::new(0.0, RING_NOISE).expect("valid std");
            for &c in &labels {
                let radius = 0.5 + c as f64 + noise.sample(&mut rng);
                let angle = rng.random::<f64>() * 2.0 * PI;
                xs.push((radius * angle.cos()) as f32);
                xs.push((radius * angle.sin()) as f32);
            }
        }
        TaskKind::DigitsSubset { .. } => unreachable!(),
    }
    Dataset::new(name, Tensor::matrix(n, 2, xs)?, Targets::Classes(labels), classes)
}

fn read_idx(path: &Path, expected_magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::Parse(format!("{}: not an IDX file", path.display())));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(Error::Parse(format!(
            "{}: IDX magic {magic:#010x}, expected {expected_magic:#010x}",
            path.display()
        )));
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Parse(format!("{}: truncated IDX header", path.display())));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(Error::Parse(format!("{}: IDX payload length mismatch", path.display())));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Area-weighted average of a `rows × cols` image onto an 8×8 grid, scaled to [0, 1].
pub fn downsample_8x8(pixels: &[u8], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; 64];
    let sy = rows as f64 / 8.0;
    let sx = cols as f64 / 8.0;
    for oy in 0..8 {
        for ox in 0..8 {
            let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
            let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
            let mut acc = 0.0;
            for py in y0.floor() as usize..(y1.ceil() as usize).min(rows) {
                let wy = (y1.min(py as f64 + 1.0) - y0.max(py as f64)).max(0.0);
                for px in x0.floor() as usize..(x1.ceil() as usize).min(cols) {
                    let wx = (x1.min(px as f64 + 1.0) - x0.max(px as f64)).max(0.0);
                    acc += wy * wx * pixels[py * cols + px] as f64;
                }
            }
            out[oy * 8 + ox] = (acc / (sy * sx) / 255.0) as f32;
        }
    }
    out
}

fn digits_subset(images: &Path, labels: &Path, n: usize, classes: usize) -> Result<Dataset<f32>> {
    let (idims, pixels) = read_idx(images, 0x0000_0803)?;
    let (ldims, label_bytes) = read_idx(labels, 0x0000_0801)?;
    if idims[0] != ldims[0] {
        return Err(Error::Parse("image and label counts differ".into()));
    }
    let (rows, cols) = (idims[1], idims[2]);
    let per_class: Vec<usize> = (0..classes).map(|c| n / classes + usize::from(c < n % classes)).collect();
    let mut taken = vec![0usize; classes];
    let mut xs = Vec::with_capacity(n * 64);
    let mut ys = Vec::with_capacity(n);
    for (i, &l) in label_bytes.iter().enumerate() {
        let c = l as usize;
        if c < classes && taken[c] < per_class[c] {
            taken[c] += 1;
            xs.extend(downsample_8x8(&pixels[i * rows * cols..(i + 1) * rows * cols], rows, cols));
            ys.push(c);
            if ys.len() == n {
                break;
            }
        }
    }
    if ys.len() < n {
        return Err(Error::InvalidArgument(format!(
            "IDX files hold only {} usable examples of the first {classes} classes",
            ys.len()
        )));
    }
    Dataset::new("digits_subset", Tensor::matrix(n, 64, xs)?, Targets::Classes(ys), classes)
}
