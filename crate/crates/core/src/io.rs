//! Frame stacks on disk, training windows, patch sampling and data splits.
//!
//! Sequences are stored as one 16-bit binary PGM (P5, maxval 65535) per frame
//! next to a line-oriented `manifest.txt`:
//!
//! ```text
//! # fluoroden sequence manifest
//! dose 600 0.005          # or `dose clean`
//! seed 17
//! spec_hash 3fa1c2d4e5f60718  # or `none`
//! frame 0 frame_0000.pgm
//! frame 1 frame_0001.pgm
//! ```
//!
//! Frame paths are relative to the manifest's directory. Intensities are
//! stored as `round(v * 65535)` and loaded as `raw / 65535`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phantom::{Dose, DoseLevel, FrameSequence};
use crate::Frame;

pub const MANIFEST_NAME: &str = "manifest.txt";
const MAXVAL: f64 = 65535.0;

pub fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * MAXVAL).round() as u16
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let (h, w) = frame.dim();
    let mut buf = format!("P5\n{w} {h}\n65535\n").into_bytes();
    buf.reserve(2 * h * w);
    for &v in frame.iter() {
        buf.extend_from_slice(&quantize(v).to_be_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let bad = |reason: &str| Error::MalformedPgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("magic number is not P5"));
    }
    let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad {what}")));
    let w = parse(&fields[1], "width")?;
    let h = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval != 65535 {
        return Err(bad(&format!("maxval {maxval} (expected 65535)")));
    }
    if w == 0 || h == 0 {
        return Err(bad("empty raster"));
    }
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != 2 * w * h {
        return Err(bad(&format!("raster has {} bytes, expected {}", data.len(), 2 * w * h)));
    }
    let values: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / MAXVAL)
        .collect();
    Ok(Array2::from_shape_vec((h, w), values).expect("length checked"))
}

/// Writes every frame plus `manifest.txt` into `dir`; returns the manifest path.
pub fn save_sequence(seq: &FrameSequence, dir: &Path) -> Result<PathBuf> {
    seq.check_consistent()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("# fluoroden sequence manifest\n");
    match seq.dose {
        Dose::Clean => manifest.push_str("dose clean\n"),
        Dose::Noisy(d) => manifest.push_str(&format!(
            "dose {} {}\n",
            d.photons_per_unit_intensity, d.read_noise_sigma
        )),
    }
    manifest.push_str(&format!("seed {}\n", seq.seed));
    manifest.push_str(&format!(
        "spec_hash {}\n",
        seq.spec_hash.as_deref().unwrap_or("none")
    ));
    for (k, frame) in seq.frames.iter().enumerate() {
        let name = format!("frame_{k:04}.pgm");
        write_pgm(&dir.join(&name), frame)?;
        manifest.push_str(&format!("frame {k} {name}\n"));
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a sequence from a manifest file (or a directory containing `manifest.txt`).
pub fn load_sequence(manifest_path: &Path) -> Result<FrameSequence> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_NAME)
    } else {
        manifest_path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(manifest_path.clone())
        } else {
            Error::io(&manifest_path, e)
        }
    })?;
    let bad = |line: usize, reason: &str| Error::MalformedManifest {
        path: manifest_path.clone(),
        reason: format!("line {}: {reason}", line + 1),
    };
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut dose = Dose::Clean;
    let mut seed = 0u64;
    let mut spec_hash = None;
    let mut entries: Vec<(usize, PathBuf)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["dose", "clean"] => dose = Dose::Clean,
            ["dose", p, r] => {
                let level = DoseLevel {
                    photons_per_unit_intensity: p.parse().map_err(|_| bad(ln, "bad dose"))?,
                    read_noise_sigma: r.parse().map_err(|_| bad(ln, "bad dose"))?,
                };
                dose = Dose::Noisy(level);
            }
            ["seed", n] => seed = n.parse().map_err(|_| bad(ln, "bad seed"))?,
            ["spec_hash", "none"] => spec_hash = None,
            ["spec_hash", h] => spec_hash = Some(h.to_string()),
            ["frame", idx, rel] => {
                let idx: usize = idx.parse().map_err(|_| bad(ln, "bad frame index"))?;
                entries.push((idx, base.join(rel)));
            }
            _ => return Err(bad(ln, &format!("unrecognized entry `{line}`"))),
        }
    }
    if entries.is_empty() {
        return Err(bad(0, "no frames listed"));
    }
    entries.sort_by_key(|e| e.0);
    for (k, (idx, _)) in entries.iter().enumerate() {
        if *idx != k {
            return Err(Error::MalformedManifest {
                path: manifest_path.clone(),
                reason: format!("frame indices are not 0..{}", entries.len()),
            });
        }
    }
    let mut frames = Vec::with_capacity(entries.len());
    for (_, path) in &entries {
        if !path.exists() {
            return Err(Error::MissingFile(path.clone()));
        }
        frames.push(read_pgm(path)?);
    }
    let seq = FrameSequence {
        frames,
        dose,
        seed,
        spec_hash,
    };
    seq.check_consistent()?;
    Ok(seq)
}

/// A centre frame with its temporal neighbours.
///
/// `context` is ordered `[x_{i-r}, .., x_{i-1}, x_{i+1}, .., x_{i+r}]` and never
/// contains the centre frame. The default radius is 2 (four context frames).
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub context: Vec<Arc<Frame>>,
    pub center: Arc<Frame>,
    pub index: usize,
}

impl TrainingWindow {
    pub fn radius(&self) -> usize {
        self.context.len() / 2
    }

    pub fn shape(&self) -> (usize, usize) {
        self.center.dim()
    }

    /// All frames in temporal order, centre included.
    pub fn stack(&self) -> Vec<&Frame> {
        let r = self.radius();
        let mut out: Vec<&Frame> = self.context[..r].iter().map(|f| f.as_ref()).collect();
        out.push(&self.center);
        out.extend(self.context[r..].iter().map(|f| f.as_ref()));
        out
    }

    pub fn crop(&self, offset: (usize, usize), patch: usize) -> TrainingWindow {
        let (r0, c0) = offset;
        let cut = |f: &Arc<Frame>| Arc::new(f.slice(s![r0..r0 + patch, c0..c0 + patch]).to_owned());
        TrainingWindow {
            context: self.context.iter().map(cut).collect(),
            center: cut(&self.center),
            index: self.index,
        }
    }
}

/// Windows of radius 2, one per centre index in `[2, n - 3]`.
pub fn make_windows(seq: &FrameSequence) -> Result<Vec<TrainingWindow>> {
    make_windows_with_radius(seq, 2)
}

pub fn make_windows_with_radius(seq: &FrameSequence, radius: usize) -> Result<Vec<TrainingWindow>> {
    let n = seq.len();
    let required = (2 * radius + 1).max(5);
    if n < required {
        return Err(Error::TooShort { required, found: n });
    }
    seq.check_consistent()?;
    let shared: Vec<Arc<Frame>> = seq.frames.iter().map(|f| Arc::new(f.clone())).collect();
    Ok((radius..n - radius)
        .map(|i| TrainingWindow {
            context: (i - radius..i)
                .chain(i + 1..=i + radius)
                .map(|k| Arc::clone(&shared[k]))
                .collect(),
            center: Arc::clone(&shared[i]),
            index: i,
        })
        .collect())
}

/// A window cropped to a square patch at a shared spatial offset.
#[derive(Debug, Clone)]
pub struct PatchSample {
    pub window: TrainingWindow,
    pub offset: (usize, usize),
    /// Position of the source window in the list handed to [`sample_patches`].
    pub source: usize,
}

/// Draws `(window index, offset)` pairs with uniform window choice and uniform
/// valid offsets.
pub fn sample_patch_plan(
    shapes: &[(usize, usize)],
    count: usize,
    patch: usize,
    seed: u64,
) -> Result<Vec<(usize, (usize, usize))>> {
    if shapes.is_empty() {
        return Err(Error::EmptyInput);
    }
    for &(h, w) in shapes {
        if h < patch || w < patch || patch == 0 {
            return Err(Error::PatchTooLarge { frame: (h, w), patch });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let k = rng.random_range(0..shapes.len());
            let (h, w) = shapes[k];
            let r = rng.random_range(0..=h - patch);
            let c = rng.random_range(0..=w - patch);
            (k, (r, c))
        })
        .collect())
}

pub fn sample_patches(
    windows: &[TrainingWindow],
    count: usize,
    patch: usize,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    let shapes: Vec<_> = windows.iter().map(|w| w.shape()).collect();
    let plan = sample_patch_plan(&shapes, count, patch, seed)?;
    Ok(plan
        .into_iter()
        .map(|(k, offset)| PatchSample {
            window: windows[k].crop(offset, patch),
            offset,
            source: k,
        })
        .collect())
}

/// Random disjoint partition with `round(val_fraction * n)` validation items.
/// Both halves keep the input order.
pub fn split_train_val<T>(samples: Vec<T>, val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let n = samples.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &k in &order[..n_val] {
        is_val[k] = true;
    }
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (item, v) in samples.into_iter().zip(is_val) {
        if v {
            val.push(item);
        } else {
            train.push(item);
        }
    }
    Ok((train, val))
}
