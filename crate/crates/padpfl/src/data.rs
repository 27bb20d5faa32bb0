//! Dataset ingestion, partitioning, and corruption.
//!
//! Images are kept as one flat row per sample with intensities in [0, 1].
//! The IDX readers accept the standard big-endian layout (magic 2051 for
//! images, 2049 for labels) and transparently inflate gzipped files. A
//! built-in synthetic digit generator produces the same shape of data for
//! fully self-contained runs when no IDX files are on disk.

use crate::error::{Error, Result};
use crate::model::Batch;
use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

/// A full corpus of flattened images with labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Materialize the samples at `indices` as a training batch.
    pub fn batch_for(&self, indices: &[usize]) -> Batch {
        Batch {
            images: self.images.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut head = [0u8; 2];
    let n = reader.read(&mut head)?;
    let rest = head[..n].to_vec();
    let chained = std::io::Cursor::new(rest).chain(reader);
    if n == 2 && head == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(chained)))
    } else {
        Ok(Box::new(chained))
    }
}

fn read_u32_be(reader: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|_| Error::Format {
        path: path.display().to_string(),
        message: format!("truncated while reading {what}"),
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Read an IDX image file into rows of `[0, 1]` intensities.
pub fn load_idx_images(path: &Path) -> Result<Array2<f64>> {
    let mut reader = open_maybe_gz(path)?;
    let magic = read_u32_be(&mut reader, path, "magic number")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("magic number {magic}, expected {IMAGES_MAGIC}"),
        });
    }
    let count = read_u32_be(&mut reader, path, "image count")? as usize;
    let rows = read_u32_be(&mut reader, path, "row count")? as usize;
    let cols = read_u32_be(&mut reader, path, "column count")? as usize;
    let mut bytes = vec![0u8; count * rows * cols];
    reader.read_exact(&mut bytes).map_err(|_| Error::Format {
        path: path.display().to_string(),
        message: format!("truncated: expected {} pixel bytes", bytes.len()),
    })?;
    let data: Vec<f64> = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
    Array2::from_shape_vec((count, rows * cols), data).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Read an IDX label file; every label must be a digit class in `[0, 9]`.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = open_maybe_gz(path)?;
    let magic = read_u32_be(&mut reader, path, "magic number")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("magic number {magic}, expected {LABELS_MAGIC}"),
        });
    }
    let count = read_u32_be(&mut reader, path, "label count")? as usize;
    let mut labels = vec![0u8; count];
    reader.read_exact(&mut labels).map_err(|_| Error::Format {
        path: path.display().to_string(),
        message: format!("truncated: expected {count} label bytes"),
    })?;
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("label {bad} outside [0, 9]"),
        });
    }
    Ok(labels)
}

/// Load a paired image/label IDX file set.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.nrows() != labels.len() {
        return Err(Error::Format {
            path: images_path.display().to_string(),
            message: format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            ),
        });
    }
    Ok(Dataset { images, labels })
}

/// Write images back out in IDX layout (28x28 rows assumed square when
/// `side * side` matches the feature width).
pub fn write_idx_images(path: &Path, images: &Array2<f64>) -> Result<()> {
    let side = (images.ncols() as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == images.ncols() {
        (side, side)
    } else {
        (1, images.ncols())
    };
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.nrows() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend(
        images
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Disjoint per-client sample assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }
}

/// Uniform-random assignment without replacement: client `i` receives
/// `sizes[i]` samples. Deterministic under `seed`.
pub fn partition(num_samples: usize, sizes: &[usize], seed: u64) -> Result<Partition> {
    let requested: usize = sizes.iter().sum();
    if requested > num_samples {
        return Err(Error::InsufficientSamples {
            requested,
            available: num_samples,
        });
    }
    let mut order: Vec<usize> = (0..num_samples).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..num_samples).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut client_indices = Vec::with_capacity(sizes.len());
    let mut cursor = 0;
    for &m in sizes {
        client_indices.push(order[cursor..cursor + m].to_vec());
        cursor += m;
    }
    Ok(Partition { client_indices })
}

/// Label-skewed assignment: samples are ordered by class and dealt out as
/// contiguous blocks, so each client sees only a narrow label range. The
/// block-to-client mapping is shuffled under `seed`.
pub fn partition_label_skew(labels: &[u8], sizes: &[usize], seed: u64) -> Result<Partition> {
    let requested: usize = sizes.iter().sum();
    if requested > labels.len() {
        return Err(Error::InsufficientSamples {
            requested,
            available: labels.len(),
        });
    }
    let mut by_label: Vec<usize> = (0..labels.len()).collect();
    by_label.sort_by_key(|&i| (labels[i], i));
    let mut client_order: Vec<usize> = (0..sizes.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..client_order.len()).rev() {
        client_order.swap(i, rng.gen_range(0..=i));
    }
    let mut client_indices = vec![Vec::new(); sizes.len()];
    let mut cursor = 0;
    for &client in &client_order {
        let m = sizes[client];
        client_indices[client] = by_label[cursor..cursor + m].to_vec();
        cursor += m;
    }
    Ok(Partition { client_indices })
}

/// Named corruption strengths with their default pixel densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    None,
    Slight,
    Moderate,
    Severe,
}

impl Severity {
    pub fn default_density(self) -> f64 {
        match self {
            Severity::None => 0.0,
            Severity::Slight => 0.05,
            Severity::Moderate => 0.2,
            Severity::Severe => 0.4,
        }
    }
}

/// Replace `round(density * width)` randomly chosen pixels of every image
/// with 0 or 1 (equal probability). Remaining pixels are untouched.
pub fn salt_and_pepper(images: &mut Array2<f64>, density: f64, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidParameter {
            name: "density",
            message: format!("must lie in [0, 1], got {density}"),
        });
    }
    let width = images.ncols();
    let k = (density * width as f64).round() as usize;
    if k == 0 {
        return Ok(());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (0..width).collect();
    for mut row in images.outer_iter_mut() {
        // partial Fisher-Yates: the first k entries become the hit set
        for i in 0..k {
            let j = rng.gen_range(i..width);
            positions.swap(i, j);
        }
        for &p in &positions[..k] {
            row[p] = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        }
    }
    Ok(())
}

/// Procedurally generated digit images in the same shape as MNIST.
///
/// Each sample renders its class as a seven-segment glyph on a 28x28
/// canvas with a random offset, random stroke intensity, and a low
/// background noise floor, so the ten classes are learnable by a small
/// MLP while pixel corruption still visibly damages them.
pub mod synthetic {
    use super::*;

    const SIDE: usize = 28;
    const GLYPH_W: usize = 12;
    const GLYPH_H: usize = 18;

    // segment order: top, top-right, bottom-right, bottom, bottom-left,
    // top-left, middle
    const SEGMENTS: [[bool; 7]; 10] = [
        [true, true, true, true, true, true, false],   // 0
        [false, true, true, false, false, false, false], // 1
        [true, true, false, true, true, false, true],  // 2
        [true, true, true, true, false, false, true],  // 3
        [false, true, true, false, false, true, true], // 4
        [true, false, true, true, false, true, true],  // 5
        [true, false, true, true, true, true, true],   // 6
        [true, true, true, false, false, false, false], // 7
        [true, true, true, true, true, true, true],    // 8
        [true, true, true, true, false, true, true],   // 9
    ];

    fn draw_segment(canvas: &mut [f64], seg: usize, ox: usize, oy: usize, rng: &mut impl Rng) {
        let (x0, y0, w, h) = match seg {
            0 => (0, 0, GLYPH_W, 2),                   // top
            1 => (GLYPH_W - 2, 0, 2, GLYPH_H / 2),     // top-right
            2 => (GLYPH_W - 2, GLYPH_H / 2, 2, GLYPH_H / 2), // bottom-right
            3 => (0, GLYPH_H - 2, GLYPH_W, 2),         // bottom
            4 => (0, GLYPH_H / 2, 2, GLYPH_H / 2),     // bottom-left
            5 => (0, 0, 2, GLYPH_H / 2),               // top-left
            _ => (0, GLYPH_H / 2 - 1, GLYPH_W, 2),     // middle
        };
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                canvas[(oy + y) * SIDE + (ox + x)] = 0.55 + 0.45 * rng.gen::<f64>();
            }
        }
    }

    /// Generate `n` samples. Deterministic under `seed`.
    pub fn generate(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut images = Array2::zeros((n, SIDE * SIDE));
        let mut labels = Vec::with_capacity(n);
        for mut row in images.outer_iter_mut() {
            let label = rng.gen_range(0..10u8);
            let ox = 8 + rng.gen_range(-4i32..=4) as i64;
            let oy = 5 + rng.gen_range(-3i32..=3) as i64;
            let canvas = row.as_slice_mut().expect("contiguous row");
            for v in canvas.iter_mut() {
                *v = 0.08 * rng.gen::<f64>();
            }
            for (seg, &on) in SEGMENTS[label as usize].iter().enumerate() {
                if on {
                    draw_segment(canvas, seg, ox as usize, oy as usize, &mut rng);
                }
            }
            labels.push(label);
        }
        Dataset { images, labels }
    }
}
