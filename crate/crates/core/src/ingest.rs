//! Dataset readers and writers plus the synthetic desk-scale generator.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{extract_all_features, init_he_normal, Architecture, Tap, SUPPORTED_RESOLUTIONS};
use crate::rdm::{rdm_from_features, upper_triangle, Rdm};
use crate::rng;
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;

/// Images in `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    /// `[N, 3, H, W]`
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub provenance: String,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` items (or all of them if there are fewer).
    pub fn take(&self, n: usize) -> LabeledImageSet {
        let n = n.min(self.len());
        LabeledImageSet {
            images: self.images.slice_outer(0, n),
            labels: self.labels[..n].to_vec(),
            provenance: format!("{} [first {n}]", self.provenance),
        }
    }
}

/// Stimuli for feature extraction. Row `i` of every derived feature matrix
/// and RDM refers to `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusSet {
    /// `[N, 3, R, R]`
    pub images: Tensor,
    pub ids: Vec<String>,
}

impl StimulusSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.images.shape().get(2).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Roi {
    V1,
    V2,
    #[serde(rename = "LOC")]
    Loc,
    #[serde(rename = "IT")]
    It,
}

impl Roi {
    pub const ALL: [Roi; 4] = [Roi::V1, Roi::V2, Roi::Loc, Roi::It];

    pub fn name(self) -> &'static str {
        match self {
            Roi::V1 => "V1",
            Roi::V2 => "V2",
            Roi::Loc => "LOC",
            Roi::It => "IT",
        }
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Roi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Roi::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ROI '{s}' (expected V1, V2, LOC or IT)")))
    }
}

/// One subject's RDM for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainRdmFile {
    pub subject: String,
    pub roi: Roi,
    pub rdm: Rdm,
}

// ---------------------------------------------------------------- CIFAR-10

/// Parse CIFAR-10 binary batches in the given order, stopping after `limit`
/// records if set.
pub fn read_cifar10_binary(paths: &[PathBuf], limit: Option<usize>) -> Result<LabeledImageSet> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let want = limit.unwrap_or(usize::MAX);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut used = Vec::new();
    for path in paths {
        if labels.len() >= want {
            break;
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            let whole = bytes.len() / CIFAR_RECORD_BYTES;
            return Err(Error::format(
                path,
                format!(
                    "truncated record {whole} at byte offset {}: {} trailing bytes, records are {CIFAR_RECORD_BYTES}",
                    whole * CIFAR_RECORD_BYTES,
                    bytes.len() % CIFAR_RECORD_BYTES
                ),
            ));
        }
        used.push(path.display().to_string());
        for (k, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            if labels.len() >= want {
                break;
            }
            let label = rec[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(Error::format(
                    path,
                    format!("record {k} at byte offset {}: label {label} out of range", k * CIFAR_RECORD_BYTES),
                ));
            }
            labels.push(label);
            pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    debug_assert_eq!(pixels.len(), labels.len() * 3 * plane);
    Ok(LabeledImageSet {
        images: Tensor::from_vec(&[labels.len(), 3, CIFAR_SIDE, CIFAR_SIDE], pixels)?,
        labels,
        provenance: format!("cifar10-binary: {}", used.join(", ")),
    })
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write 32x32 RGB images as CIFAR-10 binary records, rounding to bytes.
pub fn write_cifar10_binary(set: &LabeledImageSet, path: &Path) -> Result<()> {
    let [n, c, h, w] = set.images.dims4("cifar images")?;
    if (c, h, w) != (3, CIFAR_SIDE, CIFAR_SIDE) {
        return Err(Error::Input(format!("CIFAR records hold 3x32x32 images, got {c}x{h}x{w}")));
    }
    let mut out = Vec::with_capacity(n * CIFAR_RECORD_BYTES);
    let stride = c * h * w;
    for (i, &label) in set.labels.iter().enumerate() {
        if label >= CIFAR_CLASSES {
            return Err(Error::Input(format!("label {label} of item {i} does not fit CIFAR-10")));
        }
        out.push(label as u8);
        out.extend(set.images.data()[i * stride..(i + 1) * stride].iter().map(|&v| to_byte(v)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- images

/// Bilinear resize of a `[C, H, W]` image, half-pixel centers
/// (`src = (dst + 0.5) * in / out - 0.5`), edges clamped.
pub fn resize_bilinear(image: &Tensor, target: usize) -> Result<Tensor> {
    if image.ndim() != 3 {
        return Err(Error::Input(format!("resize expects [C, H, W], got {:?}", image.shape())));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if h == 0 || w == 0 || target == 0 {
        return Err(Error::Input("cannot resize an empty image".into()));
    }
    if h == target && w == target {
        return Ok(image.clone());
    }
    let axis = |len: usize| -> Vec<(usize, usize, f64)> {
        (0..target)
            .map(|d| {
                let src = ((d as f64 + 0.5) * len as f64 / target as f64 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(len - 1);
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let (ys, xs) = (axis(h), axis(w));
    let src = image.data();
    let mut out = Vec::with_capacity(c * target * target);
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let top = p[y0 * w + x0] * (1.0 - wx) + p[y0 * w + x1] * wx;
                let bot = p[y1 * w + x0] * (1.0 - wx) + p[y1 * w + x1] * wx;
                out.push(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    Tensor::from_vec(&[c, target, target], out)
}

/// Largest centered square of a `[C, H, W]` image.
pub fn center_crop_square(image: &Tensor) -> Result<Tensor> {
    if image.ndim() != 3 {
        return Err(Error::Input(format!("crop expects [C, H, W], got {:?}", image.shape())));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let s = h.min(w);
    if s == h && s == w {
        return Ok(image.clone());
    }
    let (oy, ox) = ((h - s) / 2, (w - s) / 2);
    let mut out = Vec::with_capacity(c * s * s);
    for ch in 0..c {
        for y in 0..s {
            let row = (ch * h + oy + y) * w + ox;
            out.extend_from_slice(&image.data()[row..row + s]);
        }
    }
    Tensor::from_vec(&[c, s, s], out)
}

/// Decode a binary PPM (P6, maxval <= 255) into a `[3, H, W]` image in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "PPM header ended early"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::format(path, format!("expected P6 magic, found '{}'", fields[0])));
    }
    let num = |i: usize, what: &str| -> Result<usize> {
        fields[i]
            .parse()
            .map_err(|_| Error::format(path, format!("bad PPM {what} '{}'", fields[i])))
    };
    let (w, h, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
    if w == 0 || h == 0 {
        return Err(Error::format(path, "PPM has zero size"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, format!("PPM maxval {maxval} unsupported (1..=255)")));
    }
    let need = 3 * w * h;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(Error::format(
            path,
            format!("raster truncated at byte offset {}: need {need} bytes, have {}", pos + raster.len(), raster.len()),
        ));
    }
    let mut data = vec![0.0; need];
    let scale = maxval as f64;
    for (i, px) in raster[..need].chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * w * h + i] = px[ch] as f64 / scale;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Encode a `[3, H, W]` image in `[0, 1]` as P6 with maxval 255.
pub fn write_ppm(image: &Tensor, path: &Path) -> Result<()> {
    let s = image.shape();
    if image.ndim() != 3 || s[0] != 3 {
        return Err(Error::Input(format!("PPM needs a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..h * w {
        for ch in 0..3 {
            out.push(to_byte(image.data()[ch * h * w + i]));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn sorted_entries(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        match p.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case(ext) => paths.push(p),
            Some(e) if e.eq_ignore_ascii_case("png") => {
                log::warn!("skipping {}: only PPM (P6) stimuli are decoded", p.display())
            }
            _ => {}
        }
    }
    paths.sort();
    Ok(paths)
}

/// Load every `*.ppm` in `dir` sorted by file name; the id is the file stem.
/// Non-square images are center-cropped, then resized to `resolution`.
pub fn read_stimulus_dir(dir: &Path, resolution: usize) -> Result<StimulusSet> {
    let paths = sorted_entries(dir, "ppm")?;
    if paths.is_empty() {
        return Err(Error::Input(format!("no .ppm stimuli in {}", dir.display())));
    }
    let mut ids = Vec::with_capacity(paths.len());
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = resize_bilinear(&center_crop_square(&read_ppm(p)?)?, resolution)?;
        images.push(img.reshape(&[1, 3, resolution, resolution])?);
        ids.push(p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string());
    }
    Ok(StimulusSet {
        images: Tensor::concat_outer(&images)?,
        ids,
    })
}

pub fn write_stimulus_dir(stimuli: &StimulusSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, id) in stimuli.ids.iter().enumerate() {
        let img = stimuli.images.slice_outer(i, i + 1);
        let shape = img.shape()[1..].to_vec();
        write_ppm(&img.reshape(&shape)?, &dir.join(format!("{id}.ppm")))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- RDM CSV

fn check_csv_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
        return Err(Error::Input(format!("stimulus id {id:?} cannot be written to CSV")));
    }
    Ok(())
}

/// Header `,id_1,...,id_N`, then one row per stimulus. Values carry 17
/// significant digits so the file reads back bit-exactly.
pub fn write_rdm_csv(rdm: &Rdm, path: &Path) -> Result<()> {
    let mut out = String::new();
    for id in rdm.ids() {
        check_csv_id(id)?;
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    let n = rdm.size();
    for (i, id) in rdm.ids().iter().enumerate() {
        out.push_str(id);
        for j in 0..n {
            out.push_str(&format!(",{:.16e}", rdm.get(i, j)));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_rdm_csv(path: &Path) -> Result<Rdm> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    let mut cols = header.split(',');
    if !cols.next().unwrap_or("").trim().is_empty() {
        return Err(Error::format(path, "header must start with an empty corner cell"));
    }
    let ids: Vec<String> = cols.map(|s| s.trim().to_string()).collect();
    let n = ids.len();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (r, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let rid = cells.next().unwrap_or("").trim();
        if r >= n {
            return Err(Error::format(path, format!("non-square: more than {n} data rows")));
        }
        if rid != ids[r] {
            return Err(Error::format(
                path,
                format!("row {} is labelled '{rid}' but column {} is '{}'", r + 1, r + 1, ids[r]),
            ));
        }
        let mut count = 0;
        for (c, cell) in cells.enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("cell ({r}, {c}) is not a number: '{cell}'")))?;
            data.push(v);
            count += 1;
        }
        if count != n {
            return Err(Error::format(path, format!("non-square: row {r} has {count} values, expected {n}")));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::format(path, format!("non-square: {rows} data rows for {n} columns")));
    }
    Rdm::validated(ids, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Read `<subject>_<ROI>.csv`; subject and ROI come from the file name.
pub fn read_brain_rdm_csv(path: &Path) -> Result<BrainRdmFile> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let (subject, roi) = stem
        .rsplit_once('_')
        .ok_or_else(|| Error::format(path, "brain RDM files are named <subject>_<ROI>.csv"))?;
    let roi: Roi = roi.parse().map_err(|e: Error| Error::format(path, e.to_string()))?;
    Ok(BrainRdmFile {
        subject: subject.to_string(),
        roi,
        rdm: read_rdm_csv(path)?,
    })
}

/// All brain RDMs in a directory, ordered by ROI then subject.
pub fn read_brain_rdm_dir(dir: &Path) -> Result<Vec<BrainRdmFile>> {
    let mut files = sorted_entries(dir, "csv")?
        .iter()
        .map(|p| read_brain_rdm_csv(p))
        .collect::<Result<Vec<_>>>()?;
    if files.is_empty() {
        return Err(Error::Input(format!("no brain RDM CSVs in {}", dir.display())));
    }
    files.sort_by(|a, b| (a.roi, &a.subject).cmp(&(b.roi, &b.subject)));
    Ok(files)
}

pub fn write_brain_rdm(brain: &BrainRdmFile, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("{}_{}.csv", brain.subject, brain.roi));
    write_rdm_csv(&brain.rdm, &path)?;
    Ok(path)
}

/// Brain RDMs must index the same stimuli in the same order.
pub fn check_brain_ids(brain: &[BrainRdmFile], stimuli: &StimulusSet) -> Result<()> {
    for b in brain {
        if b.rdm.ids() != stimuli.ids.as_slice() {
            return Err(Error::Input(format!(
                "{} {} RDM ids do not match the stimulus order ({} vs {} ids)",
                b.subject,
                b.roi,
                b.rdm.size(),
                stimuli.len()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- synthetic

/// Parameters of the synthetic generator.
///
/// Brain RDMs are the RDMs of a He-initialized reference network (seed
/// `reference_seed`) at the tap mapped to each ROI, plus symmetric Gaussian
/// noise. The noise sd is `noise * (1 + noise_growth * subject)` in units of
/// the sd of the reference RDM's upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_train: usize,
    pub num_test: usize,
    pub num_classes: usize,
    pub num_stimuli: usize,
    pub resolution: usize,
    pub num_subjects: usize,
    pub noise: f64,
    pub noise_growth: f64,
    pub reference_seed: u64,
    pub arch: Architecture,
    pub roi_taps: [(Roi, Tap); 4],
}

pub const DEFAULT_ROI_TAPS: [(Roi, Tap); 4] = [
    (Roi::V1, Tap::Conv1),
    (Roi::V2, Tap::Conv1),
    (Roi::Loc, Tap::Conv3),
    (Roi::It, Tap::Fc1),
];

impl SynthSpec {
    /// Small enough for unit tests.
    pub fn tiny() -> Self {
        SynthSpec {
            num_train: 64,
            num_test: 32,
            num_classes: 10,
            num_stimuli: 12,
            resolution: 32,
            num_subjects: 3,
            noise: 0.5,
            noise_growth: 0.0,
            reference_seed: 0,
            arch: Architecture {
                in_channels: 3,
                conv_widths: [4, 8, 8],
                fc_width: 16,
                num_classes: 10,
            },
            roi_taps: DEFAULT_ROI_TAPS,
        }
    }

    fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !SUPPORTED_RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::Config(format!(
                "synthetic resolution {} not in {SUPPORTED_RESOLUTIONS:?}",
                self.resolution
            )));
        }
        if self.num_classes < 1 || self.num_classes > self.arch.num_classes {
            return Err(Error::Config(format!(
                "num_classes {} must be in 1..={}",
                self.num_classes, self.arch.num_classes
            )));
        }
        if self.num_stimuli < 3 || self.num_subjects < 1 {
            return Err(Error::Config("synthetic data needs >= 3 stimuli and >= 1 subject".into()));
        }
        if !(self.noise >= 0.0 && self.noise_growth >= 0.0) {
            return Err(Error::Config("noise amplitudes must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
    pub stimuli: StimulusSet,
    /// Ordered by ROI, then subject.
    pub brain: Vec<BrainRdmFile>,
}

fn class_color(c: usize, k: usize) -> [f64; 3] {
    let hue = c as f64 / k as f64 * std::f64::consts::TAU;
    [0, 1, 2].map(|i| 0.5 + 0.5 * (hue + i as f64 * std::f64::consts::TAU / 3.0).cos())
}

/// One blob image, quantized to multiples of 1/255 so it survives a
/// round trip through byte formats.
fn blob_image(class: usize, k: usize, res: usize, r: &mut rng::StreamRng) -> Vec<f64> {
    let rf = res as f64;
    let angle = class as f64 / k as f64 * std::f64::consts::TAU;
    let jitter = |r: &mut rng::StreamRng| -> f64 { StandardNormal.sample(r) };
    let cy = rf * (0.5 + 0.28 * angle.sin()) + rf / 20.0 * jitter(r);
    let cx = rf * (0.5 + 0.28 * angle.cos()) + rf / 20.0 * jitter(r);
    let sigma = rf / 8.0 * (1.0 + 0.1 * jitter(r)).max(0.5);
    let color = class_color(class, k);
    let plane = res * res;
    let mut img = vec![0.0; 3 * plane];
    for y in 0..res {
        for x in 0..res {
            let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
            let g = (-d2 / (2.0 * sigma * sigma)).exp();
            for ch in 0..3 {
                let bg = 0.15 + 0.1 * r.random::<f64>();
                let v = bg + 0.8 * color[ch] * g;
                img[ch * plane + y * res + x] = to_byte(v) as f64 / 255.0;
            }
        }
    }
    img
}

fn blob_set(n: usize, k: usize, res: usize, r: &mut rng::StreamRng) -> Result<(Tensor, Vec<usize>)> {
    let mut data = Vec::with_capacity(n * 3 * res * res);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.random_range(0..k);
        data.extend(blob_image(c, k, res, r));
        labels.push(c);
    }
    Ok((Tensor::from_vec(&[n, 3, res, res], data)?, labels))
}

/// Deterministic class-structured images, stimuli and brain RDMs.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthData> {
    spec.validate()?;
    let (k, res) = (spec.num_classes, spec.resolution);
    let (train_imgs, train_labels) = blob_set(spec.num_train, k, res, &mut rng::stream(seed, "synth-train"))?;
    let (test_imgs, test_labels) = blob_set(spec.num_test, k, res, &mut rng::stream(seed, "synth-test"))?;
    let (stim_imgs, _) = blob_set(spec.num_stimuli, k, res, &mut rng::stream(seed, "synth-stimuli"))?;
    let stimuli = StimulusSet {
        images: stim_imgs,
        ids: (0..spec.num_stimuli).map(|i| format!("stim{i:04}")).collect(),
    };

    let reference = init_he_normal(&spec.arch, spec.reference_seed)?;
    let feats = extract_all_features(&reference, &stimuli.images)?;
    let mut brain = Vec::with_capacity(4 * spec.num_subjects);
    for (roi_idx, (roi, tap)) in spec.roi_taps.iter().enumerate() {
        let f = feats.iter().find(|f| f.tap == *tap).expect("all taps extracted");
        let clean = rdm_from_features(f, &stimuli.ids)?;
        let upper = upper_triangle(&clean);
        let mean = upper.iter().sum::<f64>() / upper.len() as f64;
        let sd = (upper.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / upper.len() as f64).sqrt();
        for s in 0..spec.num_subjects {
            let amp = spec.noise * (1.0 + spec.noise_growth * s as f64) * sd;
            let mut r = rng::indexed_stream(seed, "synth-brain-noise", (roi_idx * spec.num_subjects + s) as u64);
            let noisy: Vec<f64> = upper
                .iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    v + amp * z
                })
                .collect();
            brain.push(BrainRdmFile {
                subject: format!("sub{:02}", s + 1),
                roi: *roi,
                rdm: crate::rdm::from_upper_triangle(stimuli.ids.clone(), &noisy)?,
            });
        }
    }
    brain.sort_by(|a, b| (a.roi, &a.subject).cmp(&(b.roi, &b.subject)));
    Ok(SynthData {
        train: LabeledImageSet {
            images: train_imgs,
            labels: train_labels,
            provenance: format!("synthetic blobs, seed {seed}, train"),
        },
        test: LabeledImageSet {
            images: test_imgs,
            labels: test_labels,
            provenance: format!("synthetic blobs, seed {seed}, test"),
        },
        stimuli,
        brain,
    })
}

/// Paths written by [`write_synth`].
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub stimuli: PathBuf,
    pub brain: PathBuf,
}

/// Lay the data out as the file formats the pipeline reads: CIFAR-10
/// binary batches, a PPM stimulus directory and brain RDM CSVs. Training
/// images are written as CIFAR records only at resolution 32.
pub fn write_synth(data: &SynthData, dir: &Path) -> Result<SynthPaths> {
    let paths = SynthPaths {
        train: dir.join("train.bin"),
        test: dir.join("test.bin"),
        stimuli: dir.join("stimuli"),
        brain: dir.join("brain"),
    };
    fs::create_dir_all(&paths.brain).map_err(|e| Error::io(&paths.brain, e))?;
    write_cifar10_binary(&data.train, &paths.train)?;
    write_cifar10_binary(&data.test, &paths.test)?;
    write_stimulus_dir(&data.stimuli, &paths.stimuli)?;
    for b in &data.brain {
        write_brain_rdm(b, &paths.brain)?;
    }
    Ok(paths)
}
