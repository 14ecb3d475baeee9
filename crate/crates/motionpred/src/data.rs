//! Motion-sequence storage, preprocessing, and windowing.
//!
//! A sequence is a `[frames, joints, 3]` tensor of joint positions plus
//! the metadata needed to interpret it: frame rate, units, and joint
//! names. On disk a sequence is a CSV of one row per frame with three
//! joint-major columns per joint (`hip_x,hip_y,hip_z,...`) and a JSON
//! manifest sidecar (`foo.csv` pairs with `foo.manifest.json`). Values
//! are written with enough digits to round-trip f64 exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::fmt_shape;
use crate::Tensor;

/// Length unit of the stored joint positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "mm")]
    Millimeters,
    #[serde(rename = "m")]
    Meters,
}

impl Units {
    /// Factor that converts stored values to meters.
    pub fn scale_to_meters(self) -> f64 {
        match self {
            Units::Millimeters => 0.001,
            Units::Meters => 1.0,
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Units::Millimeters => "mm",
            Units::Meters => "m",
        })
    }
}

/// Sidecar metadata stored next to each sequence CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub fps: f64,
    pub units: Units,
    pub joint_names: Vec<String>,
    pub n_frames: usize,
}

/// One recorded motion: joint positions `[frames, joints, 3]` with the
/// metadata needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    name: String,
    fps: f64,
    units: Units,
    joint_names: Vec<String>,
    frames: Tensor,
}

impl MotionSequence {
    pub fn new(
        name: impl Into<String>,
        fps: f64,
        units: Units,
        joint_names: Vec<String>,
        frames: Tensor,
    ) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Data(format!("frame rate must be positive, got {fps}")));
        }
        if frames.rank() != 3 || frames.shape()[2] != 3 {
            return Err(Error::Data(format!(
                "sequence frames must have shape [frames, joints, 3], got {}",
                fmt_shape(frames.shape())
            )));
        }
        if frames.shape()[0] == 0 || frames.shape()[1] == 0 {
            return Err(Error::Data("sequence needs at least one frame and one joint".into()));
        }
        if frames.shape()[1] != joint_names.len() {
            return Err(Error::Data(format!(
                "{} joint names for {} joints",
                joint_names.len(),
                frames.shape()[1]
            )));
        }
        let unique: BTreeSet<&str> = joint_names.iter().map(String::as_str).collect();
        if unique.len() != joint_names.len() || joint_names.iter().any(|n| n.is_empty()) {
            return Err(Error::Data("joint names must be unique and non-empty".into()));
        }
        Ok(Self {
            name: name.into(),
            fps,
            units,
            joint_names,
            frames,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n_joints(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    /// Writes the CSV and its manifest sidecar.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(fs::File::create(path)?);
        let header: Vec<String> = self
            .joint_names
            .iter()
            .flat_map(|j| ["x", "y", "z"].map(|c| format!("{j}_{c}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        let cols = self.n_joints() * 3;
        for row in self.frames.data().chunks(cols) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;

        let manifest = SequenceManifest {
            fps: self.fps,
            units: self.units,
            joint_names: self.joint_names.clone(),
            n_frames: self.n_frames(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Data(format!("cannot encode manifest: {e}")))?;
        fs::write(manifest_path(path), json)?;
        Ok(())
    }

    /// Loads a CSV written by [`save_csv`](Self::save_csv), checking it
    /// against its manifest. The sequence takes its name from the file
    /// stem.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest_file = manifest_path(path);
        let manifest: SequenceManifest = serde_json::from_str(
            &fs::read_to_string(&manifest_file)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", manifest_file.display())))?,
        )
        .map_err(|e| Error::Data(format!("bad manifest {}: {e}", manifest_file.display())))?;

        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
        let expect_header: Vec<String> = manifest
            .joint_names
            .iter()
            .flat_map(|j| ["x", "y", "z"].map(|c| format!("{j}_{c}")))
            .collect();
        if header.split(',').map(str::trim).ne(expect_header.iter().map(String::as_str)) {
            return Err(Error::Data(format!(
                "{}: header does not match the manifest's joint names",
                path.display()
            )));
        }

        let cols = manifest.joint_names.len() * 3;
        let mut data = Vec::with_capacity(manifest.n_frames * cols);
        let mut rows = 0usize;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<&str> = line.split(',').collect();
            if row.len() != cols {
                return Err(Error::Data(format!(
                    "{} line {}: {} columns, expected {cols}",
                    path.display(),
                    i + 2,
                    row.len()
                )));
            }
            for cell in row {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::Data(format!(
                        "{} line {}: cannot parse {cell:?} as a number",
                        path.display(),
                        i + 2
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "{} line {}: non-finite value",
                        path.display(),
                        i + 2
                    )));
                }
                data.push(v);
            }
            rows += 1;
        }
        if rows != manifest.n_frames {
            return Err(Error::Data(format!(
                "{}: {rows} frames, manifest says {}",
                path.display(),
                manifest.n_frames
            )));
        }

        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        let frames = Tensor::new(vec![rows, manifest.joint_names.len(), 3], data)?;
        Self::new(name, manifest.fps, manifest.units, manifest.joint_names, frames)
    }

    /// Expresses every joint relative to the given root joint, frame by
    /// frame, removing global translation.
    pub fn remove_global_translation(&self, root_joint: usize) -> Result<Self> {
        let (frames, joints) = (self.n_frames(), self.n_joints());
        if root_joint >= joints {
            return Err(Error::Data(format!(
                "root joint {root_joint} out of range for {joints} joints"
            )));
        }
        let src = self.frames.data();
        let mut data = Vec::with_capacity(src.len());
        for f in 0..frames {
            let root = &src[(f * joints + root_joint) * 3..][..3];
            let (rx, ry, rz) = (root[0], root[1], root[2]);
            for j in 0..joints {
                let p = &src[(f * joints + j) * 3..][..3];
                data.extend([p[0] - rx, p[1] - ry, p[2] - rz]);
            }
        }
        let mut out = self.clone();
        out.frames = Tensor::new(vec![frames, joints, 3], data)?;
        Ok(out)
    }

    /// Keeps every k-th frame so the result plays at `target_fps`, which
    /// must divide the current frame rate to within 1e-9.
    pub fn downsample(&self, target_fps: f64) -> Result<Self> {
        if !(target_fps.is_finite() && target_fps > 0.0) {
            return Err(Error::Data(format!(
                "target frame rate must be positive, got {target_fps}"
            )));
        }
        let ratio = self.fps / target_fps;
        let step = ratio.round();
        if (ratio - step).abs() > 1e-9 || step < 1.0 {
            return Err(Error::Data(format!(
                "cannot downsample {}fps to {target_fps}fps: the ratio {ratio} is not a whole number",
                self.fps
            )));
        }
        let step = step as usize;
        if step == 1 {
            return Ok(self.clone());
        }
        let (joints, cols) = (self.n_joints(), self.n_joints() * 3);
        let src = self.frames.data();
        let kept: Vec<usize> = (0..self.n_frames()).step_by(step).collect();
        let mut data = Vec::with_capacity(kept.len() * cols);
        for &f in &kept {
            data.extend_from_slice(&src[f * cols..(f + 1) * cols]);
        }
        let mut out = self.clone();
        out.fps = target_fps;
        out.frames = Tensor::new(vec![kept.len(), joints, 3], data)?;
        Ok(out)
    }
}

/// Path of the manifest sidecar for a sequence CSV.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

/// Loads every `*.csv` in a directory, sorted by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<MotionSequence>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no sequence CSVs found in {}",
            dir.display()
        )));
    }
    paths.iter().map(MotionSequence::load_csv).collect()
}

/// Checks that sequences agree on frame rate, units, and joint names,
/// returning the shared frame rate, units, and joint count.
pub fn check_compatible(seqs: &[MotionSequence]) -> Result<(f64, Units, usize)> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Data("no sequences to train on".into()))?;
    for s in &seqs[1..] {
        if s.fps() != first.fps() || s.units() != first.units() || s.joint_names() != first.joint_names() {
            return Err(Error::Data(format!(
                "sequence {:?} disagrees with {:?} on frame rate, units, or joints",
                s.name(),
                first.name()
            )));
        }
    }
    Ok((first.fps(), first.units(), first.n_joints()))
}

/// One training example: an observed window and the frames that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    /// Name of the source sequence.
    pub sequence: String,
    /// Frame index the observed window starts at.
    pub start: usize,
    /// Observed poses `[in_frames, joints, 3]`.
    pub obs: Tensor,
    /// Future poses `[out_frames, joints, 3]`.
    pub target: Tensor,
}

/// Windows of a sequence whose observed parts start at multiples of
/// `stride`: a sequence of `T` frames yields
/// `floor((T - (in_frames + out_frames)) / stride) + 1` pairs, or none
/// if it is too short.
pub fn window_split(
    seq: &MotionSequence,
    in_frames: usize,
    out_frames: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    if in_frames == 0 || out_frames == 0 {
        return Err(Error::Config("window lengths must be positive".into()));
    }
    if stride == 0 {
        return Err(Error::Config("window stride must be positive".into()));
    }
    let total = in_frames + out_frames;
    let frames = seq.n_frames();
    if frames < total {
        return Ok(Vec::new());
    }
    let (joints, cols) = (seq.n_joints(), seq.n_joints() * 3);
    let src = seq.frames().data();
    let mut out = Vec::with_capacity((frames - total) / stride + 1);
    for start in (0..=frames - total).step_by(stride) {
        let obs = src[start * cols..(start + in_frames) * cols].to_vec();
        let fut = src[(start + in_frames) * cols..(start + total) * cols].to_vec();
        out.push(WindowPair {
            sequence: seq.name().to_string(),
            start,
            obs: Tensor::new(vec![in_frames, joints, 3], obs)?,
            target: Tensor::new(vec![out_frames, joints, 3], fut)?,
        });
    }
    Ok(out)
}

/// Splits sequences into train and validation sets by shuffling whole
/// sequences, so overlapping windows never straddle the split. With a
/// fraction strictly between 0 and 1 and at least two sequences, both
/// sides are guaranteed non-empty.
pub fn split_train_val(
    seqs: Vec<MotionSequence>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<MotionSequence>, Vec<MotionSequence>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!(
            "train fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    if seqs.is_empty() {
        return Err(Error::Data("no sequences to split".into()));
    }
    let n = seqs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (n as f64 * train_fraction).round() as usize;
    if train_fraction < 1.0 && n_train == n && n > 1 {
        n_train = n - 1;
    }
    if train_fraction > 0.0 && n_train == 0 && n > 1 {
        n_train = 1;
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (rank, seq) in order.into_iter().zip(seqs) {
        if rank < n_train {
            train.push(seq);
        } else {
            val.push(seq);
        }
    }
    // Name order within each side, so downstream iteration does not
    // depend on the shuffle's internals.
    train.sort_by(|a, b| a.name().cmp(b.name()));
    val.sort_by(|a, b| a.name().cmp(b.name()));
    Ok((train, val))
}
