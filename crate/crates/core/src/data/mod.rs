//! Desk-scale datasets: DVS-style event streams with frame binning, synthetic
//! labeled sets with genuine spatio-temporal structure, and file formats for
//! dropping in real data (plain-text events, binary tensors, JSON manifest).

pub mod augment;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::container::Container;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

/// One sensor event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// Polarity, 0 or 1.
    pub polarity: u8,
}

/// Event stream with sensor geometry. Events are kept sorted by timestamp
/// (loading sorts; generators emit in order).
#[derive(Debug, Clone)]
pub struct EventStream {
    pub height: usize,
    pub width: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(height: usize, width: usize) -> Self {
        EventStream { height, width, events: Vec::new() }
    }

    pub fn push(&mut self, t: u64, x: u16, y: u16, polarity: u8) {
        self.events.push(Event { t, x, y, polarity });
    }

    fn validate(&self) -> Result<()> {
        for e in &self.events {
            if (e.x as usize) >= self.width || (e.y as usize) >= self.height {
                return Err(Error::Data(format!(
                    "event at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, self.height, self.width
                )));
            }
            if e.polarity > 1 {
                return Err(Error::Data(format!("polarity {} is not 0/1", e.polarity)));
            }
        }
        Ok(())
    }

    /// Text format: one-line header `H W`, then one `t x y p` per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{} {}", self.height, self.width)?;
        for e in &self.events {
            writeln!(f, "{} {} {} {}", e.t, e.x, e.y, e.polarity)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty event file".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Data(format!("bad header `{}`", header))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::Data(format!("header `{}` is not `H W`", header)));
        }
        let mut stream = EventStream::new(dims[0], dims[1]);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Data(format!("bad event line `{}`", line)));
            }
            stream.push(
                fields[0].parse().map_err(|_| Error::Data(format!("bad timestamp in `{}`", line)))?,
                fields[1].parse().map_err(|_| Error::Data(format!("bad x in `{}`", line)))?,
                fields[2].parse().map_err(|_| Error::Data(format!("bad y in `{}`", line)))?,
                fields[3].parse().map_err(|_| Error::Data(format!("bad polarity in `{}`", line)))?,
            );
        }
        stream.events.sort_by_key(|e| e.t);
        stream.validate()?;
        Ok(stream)
    }
}

/// Split the stream's time span into `t_steps` equal windows and count
/// events per (window, polarity, pixel). Empty streams give all-zero frames.
pub fn bin_events<T: Scalar>(s: &EventStream, t_steps: usize) -> Result<Tensor<T>> {
    if t_steps == 0 {
        return Err(Error::Value("t_steps must be >= 1".into()));
    }
    let shape = [t_steps, 2, s.height, s.width];
    let mut frames = Tensor::<T>::zeros(&shape);
    if s.events.is_empty() {
        return Ok(frames);
    }
    let t0 = s.events.first().expect("non-empty").t;
    let t1 = s.events.last().expect("non-empty").t;
    debug_assert!(t1 >= t0, "events sorted by construction");
    let span = t1 - t0;
    let plane = s.height * s.width;
    let data = frames.data_mut();
    for e in &s.events {
        let bin = if span == 0 {
            0
        } else {
            let b = ((e.t - t0) as u128 * t_steps as u128 / span as u128) as usize;
            b.min(t_steps - 1)
        };
        let idx = ((bin * 2 + e.polarity as usize) * s.height + e.y as usize) * s.width + e.x as usize;
        data[idx] += T::one();
    }
    Ok(frames)
}

/// Sample label: hard class index, or a two-way mix produced by mixup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label<T: Scalar> {
    Hard(usize),
    Soft { a: usize, b: usize, weight_a: T },
}

impl<T: Scalar> Label<T> {
    /// Dominant class (mix collapses to the heavier side).
    pub fn hard(&self) -> usize {
        match *self {
            Label::Hard(c) => c,
            Label::Soft { a, b, weight_a } => {
                if weight_a.to_f64() >= 0.5 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// A `[T,C,H,W]` frame tensor with its label.
#[derive(Debug, Clone)]
pub struct FrameSequence<T: Scalar> {
    pub frames: Tensor<T>,
    pub label: Label<T>,
}

impl<T: Scalar> FrameSequence<T> {
    pub fn t_steps(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// In-memory labeled dataset.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    pub items: Vec<FrameSequence<T>>,
    pub classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Stack items (per the given order) into per-timestep batch tensors
/// `[N,C,H,W]`, plus the hard labels.
pub fn batch_steps<T: Scalar>(
    items: &[&FrameSequence<T>],
) -> Result<(Vec<Tensor<T>>, Vec<usize>)> {
    let first = items.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let shape = first.frames.shape().to_vec(); // [T,C,H,W]
    let (t_steps, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let n = items.len();
    let plane = c * h * w;
    let mut steps = vec![vec![T::zero(); n * plane]; t_steps];
    let mut labels = Vec::with_capacity(n);
    for (i, item) in items.iter().enumerate() {
        if item.frames.shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "inconsistent frame shapes in batch: {:?} vs {:?}",
                item.frames.shape(),
                shape
            )));
        }
        let data = item.frames.data();
        for t in 0..t_steps {
            steps[t][i * plane..(i + 1) * plane]
                .copy_from_slice(&data[t * plane..(t + 1) * plane]);
        }
        labels.push(item.label.hard());
    }
    let steps = steps
        .into_iter()
        .map(|data| Tensor::from_vec(vec![n, c, h, w], data))
        .collect::<Result<_>>()?;
    Ok((steps, labels))
}

/// Kinds of synthetic datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Event streams of a bar sweeping left or right; direction is invisible
    /// in any single frame.
    MovingBar,
    /// Static horizontal- vs vertical-stripe textures.
    Textures,
    /// Static images with 1..=4 blobs, labeled by blob-count parity.
    BlobParity,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving-bar" => Ok(SynthKind::MovingBar),
            "textures" => Ok(SynthKind::Textures),
            "blob-parity" => Ok(SynthKind::BlobParity),
            other => Err(Error::Value(format!(
                "unknown synthetic dataset kind `{}` (expected moving-bar, textures, blob-parity)",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthOpts {
    pub t_steps: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SynthOpts {
    fn default() -> Self {
        SynthOpts { t_steps: 4, height: 16, width: 16 }
    }
}

const BAR_STEP_US: u64 = 1_000;

/// Moving-bar event streams with balanced labels (0 = leftward, 1 = right).
/// Every frame of either class shows one lit column at a uniformly random
/// position, so single-frame pixel histograms are identical by construction;
/// only the cross-step drift direction separates the classes.
pub fn synth_moving_bar_streams(
    n: usize,
    seed: u64,
    opts: &SynthOpts,
) -> Vec<(EventStream, usize)> {
    let (h, w, t_steps) = (opts.height, opts.width, opts.t_steps);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let word = rng::mix(seed, &[0xBA5, i as u64]);
        let start = (word % w as u64) as usize;
        let mut stream = EventStream::new(h, w);
        for k in 0..t_steps {
            let col = if label == 1 {
                (start + k) % w
            } else {
                (start + w * t_steps - k) % w
            };
            for y in 0..h {
                stream.push(k as u64 * BAR_STEP_US + y as u64, col as u16, y as u16, (y % 2) as u8);
            }
        }
        out.push((stream, label));
    }
    out
}

fn stripe_texture<T: Scalar>(label: usize, seed_word: u64, opts: &SynthOpts) -> Tensor<T> {
    let (h, w) = (opts.height, opts.width);
    let mut img = Tensor::<T>::zeros(&[3, h, w]);
    let phase = (seed_word >> 8) % 4;
    let data = img.data_mut();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let stripe = if label == 0 { y } else { x };
                let base = if (stripe + phase as usize) % 4 < 2 { 0.9 } else { 0.1 };
                let noise = rng::unit_f64(rng::mix(seed_word, &[c as u64, y as u64, x as u64])) * 0.2 - 0.1;
                data[(c * h + y) * w + x] = T::from_f64((base + noise).clamp(0.0, 1.0));
            }
        }
    }
    img
}

fn blob_image<T: Scalar>(count: usize, seed_word: u64, opts: &SynthOpts) -> Tensor<T> {
    let (h, w) = (opts.height, opts.width);
    let mut img = Tensor::<T>::zeros(&[3, h, w]);
    let data = img.data_mut();
    // 3x3 blobs on a 2x2 grid of cells so they never merge.
    let cells = [(0usize, 0usize), (0, 1), (1, 0), (1, 1)];
    let mut order: Vec<usize> = (0..4).collect();
    {
        use rand::seq::SliceRandom;
        let mut r = rng::derived_rng(seed_word, &[0xB10B]);
        order.shuffle(&mut r);
    }
    for &cell in order.iter().take(count) {
        let (cy, cx) = cells[cell];
        let jitter = rng::mix(seed_word, &[cell as u64]);
        let oy = cy * h / 2 + 1 + (jitter % (h as u64 / 2 - 4)) as usize;
        let ox = cx * w / 2 + 1 + ((jitter >> 16) % (w as u64 / 2 - 4)) as usize;
        for dy in 0..3 {
            for dx in 0..3 {
                for c in 0..3 {
                    data[(c * h + oy + dy) * w + ox + dx] = T::one();
                }
            }
        }
    }
    img
}

fn repeat_static<T: Scalar>(img: &Tensor<T>, t_steps: usize) -> Tensor<T> {
    let mut shape = vec![t_steps];
    shape.extend_from_slice(img.shape());
    let mut data = Vec::with_capacity(img.numel() * t_steps);
    for _ in 0..t_steps {
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec(shape, data).expect("consistent shape")
}

/// Reproducible labeled dataset of the given kind.
pub fn synth_dataset<T: Scalar>(
    kind: SynthKind,
    n: usize,
    seed: u64,
    opts: &SynthOpts,
) -> Result<Dataset<T>> {
    let mut items = Vec::with_capacity(n);
    let classes = match kind {
        SynthKind::MovingBar => {
            for (stream, label) in synth_moving_bar_streams(n, seed, opts) {
                items.push(FrameSequence {
                    frames: bin_events(&stream, opts.t_steps)?,
                    label: Label::Hard(label),
                });
            }
            2
        }
        SynthKind::Textures => {
            for i in 0..n {
                let label = i % 2;
                let word = rng::mix(seed, &[0x7E7, i as u64]);
                let img = stripe_texture::<T>(label, word, opts);
                items.push(FrameSequence {
                    frames: repeat_static(&img, opts.t_steps),
                    label: Label::Hard(label),
                });
            }
            2
        }
        SynthKind::BlobParity => {
            for i in 0..n {
                let word = rng::mix(seed, &[0xB0B, i as u64]);
                let count = 1 + (word % 4) as usize;
                let img = blob_image::<T>(count, word, opts);
                items.push(FrameSequence {
                    frames: repeat_static(&img, opts.t_steps),
                    label: Label::Hard(count % 2),
                });
            }
            2
        }
    };
    Ok(Dataset { items, classes })
}

// ---------------------------------------------------------------------------
// On-disk datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub path: String,
    pub label: usize,
}

/// JSON manifest describing a directory dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// "events" (text streams) or "static" (binary image tensors).
    pub kind: String,
    pub classes: usize,
    pub t_steps: usize,
    pub items: Vec<ManifestItem>,
}

/// Write a generated dataset to `dir`: per-item files plus `manifest.json`.
/// Event kinds store raw streams; static kinds store `[C,H,W]` tensors.
pub fn save_synth_dataset(
    dir: impl AsRef<Path>,
    kind: SynthKind,
    n: usize,
    seed: u64,
    opts: &SynthOpts,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = DatasetManifest {
        kind: if kind == SynthKind::MovingBar { "events" } else { "static" }.to_string(),
        classes: 2,
        t_steps: opts.t_steps,
        items: Vec::with_capacity(n),
    };
    match kind {
        SynthKind::MovingBar => {
            for (i, (stream, label)) in synth_moving_bar_streams(n, seed, opts).iter().enumerate() {
                let rel = format!("events_{:05}.txt", i);
                stream.save(dir.join(&rel))?;
                manifest.items.push(ManifestItem { path: rel, label: *label });
            }
        }
        SynthKind::Textures | SynthKind::BlobParity => {
            let set = synth_dataset::<f64>(kind, n, seed, opts)?;
            for (i, item) in set.items.iter().enumerate() {
                let rel = format!("image_{:05}.snnt", i);
                // Store the static image, not the repeated sequence.
                let shape = item.frames.shape();
                let plane: usize = shape[1..].iter().product();
                let img = Tensor::from_vec(
                    shape[1..].to_vec(),
                    item.frames.data()[..plane].to_vec(),
                )?;
                let mut c = Container::new();
                c.push_tensor("image", &img);
                c.save(dir.join(&rel))?;
                manifest.items.push(ManifestItem { path: rel, label: item.label.hard() });
            }
        }
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Load a dataset directory written by [`save_synth_dataset`] (or hand-built
/// in the same formats). Events are binned to the manifest's `t_steps`.
pub fn load_dataset<T: Scalar>(manifest_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let base: PathBuf = manifest_path.parent().map(PathBuf::from).unwrap_or_default();
    let mut items = Vec::with_capacity(manifest.items.len());
    for entry in &manifest.items {
        let path = base.join(&entry.path);
        let frames = match manifest.kind.as_str() {
            "events" => bin_events::<T>(&EventStream::load(&path)?, manifest.t_steps)?,
            "static" => {
                let c = Container::load(&path)?;
                let img: Tensor<T> = c.tensor("image")?;
                repeat_static(&img, manifest.t_steps)
            }
            other => return Err(Error::Data(format!("unknown dataset kind `{}`", other))),
        };
        items.push(FrameSequence { frames, label: Label::Hard(entry.label) });
    }
    Ok(Dataset { items, classes: manifest.classes })
}
