//! Dataset generation and ingestion: synthetic Gaussian blobs, digit-like
//! image sets, and the IDX (ubyte) file format.

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Vector;

/// Labeled samples with inputs scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<Vector>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map(|x| x.len()).unwrap_or(0)
    }

    pub fn truncate(&mut self, n: usize) {
        self.inputs.truncate(n);
        self.labels.truncate(n);
    }
}

/// Deterministic Gaussian blobs in `[0, 1]^d`.
///
/// Class means are placed on a sphere around the box center; the per-class
/// standard deviation is the minimum pairwise mean distance divided by
/// `separation`, so `separation = 4` gives means 4 sigma apart.
pub fn gen_blobs(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 || classes < 2 {
        return Err(Error::Structural(
            "gen_blobs: need n > 0, d > 0 and at least two classes".into(),
        ));
    }
    if separation <= 0.0 {
        return Err(Error::Domain("gen_blobs: separation must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<Vector> = Vec::with_capacity(classes);
    for c in 0..classes {
        // Two classes get antipodal means; more classes get random directions.
        let dir: Vector = if classes == 2 && c == 1 {
            unit_opposite(&means[0])
        } else {
            random_unit(&mut rng, d)
        };
        means.push(0.5 + 0.22 * &dir);
    }
    let mut min_dist = f64::INFINITY;
    for i in 0..classes {
        for j in (i + 1)..classes {
            min_dist = min_dist.min(crate::numkit::l2(&(&means[i] - &means[j])));
        }
    }
    let sigma = min_dist / separation;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let x = Array1::from_iter((0..d).map(|k| {
            let noise: f64 = rng.sample(StandardNormal);
            (means[c][k] + sigma * noise).clamp(0.0, 1.0)
        }));
        inputs.push(x);
        labels.push(c);
    }
    Ok(Dataset {
        inputs,
        labels,
        num_classes: classes,
    })
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    loop {
        let v: Vector = Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = crate::numkit::l2(&v);
        if norm > 1e-9 {
            return v.mapv(|x| x / norm);
        }
    }
}

fn unit_opposite(mean0: &Vector) -> Vector {
    mean0.mapv(|v| -(v - 0.5) / 0.22)
}

/// Digit-like synthetic images: each class has a fixed smooth random template
/// on a `side x side` grid; samples are the template plus pixel noise.
pub fn gen_digit_like(n: usize, side: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || side < 4 || classes < 2 {
        return Err(Error::Structural(
            "gen_digit_like: need n > 0, side >= 4 and at least two classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = 7usize;
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let grid: Vec<f64> = (0..coarse * coarse).map(|_| rng.gen_range(0.0..1.0)).collect();
            bilinear_upsample(&grid, coarse, side)
        })
        .collect();
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let x = Array1::from_iter(templates[c].iter().map(|&t| {
            let noise: f64 = rng.sample(StandardNormal);
            (t + 0.12 * noise).clamp(0.0, 1.0)
        }));
        inputs.push(x);
        labels.push(c);
    }
    Ok(Dataset {
        inputs,
        labels,
        num_classes: classes,
    })
}

fn bilinear_upsample(grid: &[f64], coarse: usize, side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let fr = r as f64 / (side - 1) as f64 * (coarse - 1) as f64;
            let fc = c as f64 / (side - 1) as f64 * (coarse - 1) as f64;
            let (r0, c0) = (fr.floor() as usize, fc.floor() as usize);
            let (r1, c1) = ((r0 + 1).min(coarse - 1), (c0 + 1).min(coarse - 1));
            let (tr, tc) = (fr - r0 as f64, fc - c0 as f64);
            let g = |rr: usize, cc: usize| grid[rr * coarse + cc];
            out[r * side + c] = g(r0, c0) * (1.0 - tr) * (1.0 - tc)
                + g(r1, c0) * tr * (1.0 - tc)
                + g(r0, c1) * (1.0 - tr) * tc
                + g(r1, c1) * tr * tc;
        }
    }
    out
}

// --- IDX (ubyte) format ----------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Read an IDX image file; pixels are scaled to `[0, 1]` by `/255`.
/// Returns the flattened images and the image side lengths.
pub fn read_idx_images(path: &Path) -> Result<(Vec<Vector>, usize, usize)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = file.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Structural(format!(
            "{}: bad IDX image magic {magic:#010x}",
            path.display()
        )));
    }
    let n = file.read_u32::<BigEndian>()? as usize;
    let rows = file.read_u32::<BigEndian>()? as usize;
    let cols = file.read_u32::<BigEndian>()? as usize;
    let mut buf = vec![0u8; n * rows * cols];
    file.read_exact(&mut buf)?;
    let images = buf
        .chunks(rows * cols)
        .map(|px| Array1::from_iter(px.iter().map(|&b| b as f64 / 255.0)))
        .collect();
    Ok((images, rows, cols))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = file.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Structural(format!(
            "{}: bad IDX label magic {magic:#010x}",
            path.display()
        )));
    }
    let n = file.read_u32::<BigEndian>()? as usize;
    let mut buf = vec![0u8; n];
    file.read_exact(&mut buf)?;
    Ok(buf.iter().map(|&b| b as usize).collect())
}

/// Write images (values in `[0, 1]`, quantized to u8) in IDX format.
pub fn write_idx_images(path: &Path, images: &[Vector], rows: usize, cols: usize) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    file.write_u32::<BigEndian>(images.len() as u32)?;
    file.write_u32::<BigEndian>(rows as u32)?;
    file.write_u32::<BigEndian>(cols as u32)?;
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Structural("write_idx_images: bad image size".into()));
        }
        let bytes: Vec<u8> = img
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        file.write_all(&bytes)?;
    }
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    file.write_u32::<BigEndian>(labels.len() as u32)?;
    let bytes: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    file.write_all(&bytes)?;
    Ok(())
}

/// Average-pool an image by `factor` in each direction.
pub fn downscale(img: &Vector, rows: usize, cols: usize, factor: usize) -> Result<Vector> {
    if factor == 0 || rows % factor != 0 || cols % factor != 0 {
        return Err(Error::Structural(format!(
            "downscale: factor {factor} does not divide {rows}x{cols}"
        )));
    }
    let (nr, nc) = (rows / factor, cols / factor);
    let mut out = Array1::zeros(nr * nc);
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..nr {
        for c in 0..nc {
            let mut acc = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += img[(r * factor + dr) * cols + (c * factor + dc)];
                }
            }
            out[r * nc + c] = acc * inv;
        }
    }
    Ok(out)
}

/// Load an IDX image/label pair, optionally truncating to a subset and
/// average-pool downscaling.
pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    subset: Option<usize>,
    downscale_factor: usize,
) -> Result<Dataset> {
    let (mut images, rows, cols) = read_idx_images(images_path)?;
    let mut labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Structural(format!(
            "IDX pair mismatch: {} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    if let Some(n) = subset {
        images.truncate(n);
        labels.truncate(n);
    }
    if images.is_empty() {
        return Err(Error::Structural("IDX dataset is empty".into()));
    }
    if downscale_factor > 1 {
        images = images
            .iter()
            .map(|img| downscale(img, rows, cols, downscale_factor))
            .collect::<Result<Vec<_>>>()?;
    }
    let num_classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0).max(2);
    Ok(Dataset {
        inputs: images,
        labels,
        num_classes,
    })
}

// --- JSON dataset files ----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    num_classes: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let file = DatasetFile {
        num_classes: data.num_classes,
        inputs: data.inputs.iter().map(|x| x.to_vec()).collect(),
        labels: data.labels.clone(),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &file)?;
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_reader(std::io::BufReader::new(
        std::fs::File::open(path)?,
    ))?;
    if file.inputs.len() != file.labels.len() || file.inputs.is_empty() {
        return Err(Error::Structural(format!(
            "{}: malformed dataset file",
            path.display()
        )));
    }
    Ok(Dataset {
        inputs: file.inputs.into_iter().map(Array1::from_vec).collect(),
        labels: file.labels,
        num_classes: file.num_classes,
    })
}
