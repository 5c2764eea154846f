//! GOT-10k style directory layout:
//!
//! ```text
//! <root>/<sequence>/00000001.jpg ...
//! <root>/<sequence>/groundtruth.txt   one "x,y,w,h" line per frame
//! <root>/<sequence>/absence.label     optional, one 0/1 line per frame (1 = absent)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{Frame, SequenceRecord};
use crate::error::{Error, Result};
use crate::geometry::{clamp_box, ltwh_to_corners, BoundingBox, PatchSize};

const FRAME_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];
pub const GROUNDTRUTH: &str = "groundtruth.txt";
pub const ABSENCE: &str = "absence.label";

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn is_frame(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

pub fn parse_groundtruth(path: &Path) -> Result<Vec<[f64; 4]>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let parse_err = |message: String| Error::Parse {
                file: path.to_path_buf(),
                line,
                message,
            };
            let fields: Vec<&str> = text.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(parse_err(format!("expected 4 comma-separated values, got {}", fields.len())));
            }
            let mut v = [0.0; 4];
            for (slot, f) in v.iter_mut().zip(&fields) {
                *slot = f
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(format!("not a finite number: {f:?}")))?;
            }
            if v[2] < 0.0 || v[3] < 0.0 {
                return Err(parse_err("negative width or height".into()));
            }
            Ok(v)
        })
        .collect()
}

pub fn parse_absence(path: &Path) -> Result<Vec<bool>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| match text.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                message: format!("expected 0 or 1, got {other:?}"),
            }),
        })
        .collect()
}

/// Reads one sequence directory. Frames stay on disk; only their headers
/// are read to learn the frame sizes.
pub fn load_sequence(dir: &Path) -> Result<SequenceRecord> {
    let frames: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_frame(p)).collect();
    let gt = parse_groundtruth(&dir.join(GROUNDTRUTH))?;
    if gt.len() != frames.len() {
        return Err(Error::Structural(format!(
            "{}: {} frames but {} annotation lines",
            dir.display(),
            frames.len(),
            gt.len()
        )));
    }
    let absence_path = dir.join(ABSENCE);
    let visible = if absence_path.exists() {
        let absent = parse_absence(&absence_path)?;
        if absent.len() != frames.len() {
            return Err(Error::Structural(format!(
                "{}: {} frames but {} absence lines",
                dir.display(),
                frames.len(),
                absent.len()
            )));
        }
        absent.into_iter().map(|a| !a).collect()
    } else {
        vec![true; frames.len()]
    };
    let mut frame_sizes = Vec::with_capacity(frames.len());
    let mut annotations = Vec::with_capacity(frames.len());
    for (path, ltwh) in frames.iter().zip(&gt) {
        let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        let size = PatchSize::new(f64::from(w), f64::from(h));
        frame_sizes.push(size);
        annotations.push(clamp_box(&ltwh_to_corners(*ltwh)?, size));
    }
    let record = SequenceRecord {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        frames: frames.into_iter().map(Frame::File).collect(),
        annotations,
        visible,
        frame_sizes,
    };
    record.validate()?;
    Ok(record)
}

/// Sequence directories under `root`, loaded one at a time in name order.
pub struct GotSequences {
    dirs: std::vec::IntoIter<PathBuf>,
}

impl Iterator for GotSequences {
    type Item = Result<SequenceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.dirs.next().map(|d| load_sequence(&d))
    }
}

pub fn load_got_style(root: impl AsRef<Path>) -> Result<GotSequences> {
    let root = root.as_ref();
    let dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir() && p.join(GROUNDTRUTH).exists())
        .collect();
    Ok(GotSequences {
        dirs: dirs.into_iter(),
    })
}

fn format_ltwh(b: &BoundingBox<f64>) -> String {
    format!("{},{},{},{}", b.x1, b.y1, b.width(), b.height())
}

/// Writes `seq` into `dir` as lossless PNG frames plus annotation files.
pub fn export_got_style(seq: &SequenceRecord, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    seq.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        let path = dir.join(format!("{:08}.png", i + 1));
        frame
            .load()?
            .save(&path)
            .map_err(|source| Error::Image { path: path.clone(), source })?;
    }
    let gt: String = seq.annotations.iter().map(|b| format_ltwh(b) + "\n").collect();
    let gt_path = dir.join(GROUNDTRUTH);
    fs::write(&gt_path, gt).map_err(|e| Error::io(&gt_path, e))?;
    if seq.visible.iter().any(|v| !v) {
        let lines: String = seq
            .visible
            .iter()
            .map(|&v| if v { "0\n" } else { "1\n" })
            .collect();
        let p = dir.join(ABSENCE);
        fs::write(&p, lines).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
