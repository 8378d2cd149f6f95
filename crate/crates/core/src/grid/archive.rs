//! On-disk layout for composed samples.
//!
//! ```text
//! archive/
//!   manifest.txt          format, grid, channels, frame count
//!   frame_00000/
//!     manifest.txt        timestamp, grid, channels, stations, truth reference
//!     input.wft  label.wft  mask.wft
//!   truth_00000.wft       optional dense truth at the label time
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};

use super::sample::SampleFrame;
use super::spec::{GridSpec, LatLon};
use crate::config::parse_kv_lines;
use crate::error::{Error, Result};
use crate::tensor::{wft, MaskGrid, Tensor};

pub const ARCHIVE_FORMAT: &str = "smokegrid-archive-1";
const MANIFEST: &str = "manifest.txt";

/// A sequence of frames over one grid, optionally with dense truth planes
/// (μg/m³, `H×W`) aligned with the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub grid: GridSpec,
    pub channels: Vec<String>,
    pub frames: Vec<SampleFrame>,
    pub truths: Option<Vec<Tensor<f64>>>,
}

impl Archive {
    pub fn new(grid: GridSpec, channels: Vec<String>) -> Self {
        Archive {
            grid,
            channels,
            frames: Vec::new(),
            truths: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn has_dense_truth(&self) -> bool {
        self.truths.is_some()
    }

    /// Checks that frames and truths agree with the grid and channel list.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if let Some(truths) = &self.truths {
            if truths.len() != self.frames.len() {
                return Err(Error::Shape(format!(
                    "{} truth planes for {} frames",
                    truths.len(),
                    self.frames.len()
                )));
            }
            if truths.iter().any(|t| t.shape() != [self.grid.rows, self.grid.cols]) {
                return Err(Error::Shape("dense truth plane does not match the grid".into()));
            }
        }
        for frame in &self.frames {
            frame.validate()?;
            if frame.input.shape() != [self.grid.rows, self.grid.cols, self.channels.len()] {
                return Err(Error::Shape(format!(
                    "frame shape {:?} does not match grid {}×{} with {} channels",
                    frame.input.shape(),
                    self.grid.rows,
                    self.grid.cols,
                    self.channels.len()
                )));
            }
        }
        Ok(())
    }
}

/// Parsed root manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveManifest {
    pub grid: GridSpec,
    pub channels: Vec<String>,
    pub frames: usize,
    pub dense_truth: bool,
}

/// Parsed per-frame manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameManifest {
    pub timestamp: DateTime<Utc>,
    pub grid: GridSpec,
    pub channels: Vec<String>,
    pub stations: usize,
    pub truth: Option<String>,
}

fn frame_dir_name(index: usize) -> String {
    format!("frame_{index:05}")
}

fn truth_file_name(index: usize) -> String {
    format!("truth_{index:05}.wft")
}

fn grid_lines(grid: &GridSpec, out: &mut String) {
    for (key, c) in [("nw", grid.nw), ("sw", grid.sw), ("ne", grid.ne), ("se", grid.se)] {
        let _ = writeln!(out, "grid.{key} = {:?},{:?}", c.lat, c.lon);
    }
    let _ = writeln!(out, "rows = {}", grid.rows);
    let _ = writeln!(out, "cols = {}", grid.cols);
}

struct Fields(Vec<(String, String)>);

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for e in parse_kv_lines(text)? {
            if pairs.iter().any(|(k, _)| *k == e.key) {
                return Err(Error::Parse {
                    line: e.line,
                    message: format!("duplicate key `{}`", e.key),
                });
            }
            pairs.push((e.key, e.value));
        }
        Ok(Fields(pairs))
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn req(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Decode(format!("manifest is missing `{key}`")))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let v = self.req(key)?;
        v.parse()
            .map_err(|_| Error::Decode(format!("`{key}` = `{v}` is not a count")))
    }

    fn latlon(&self, key: &str) -> Result<LatLon> {
        let v = self.req(key)?;
        v.parse::<LatLon>()
            .map_err(|_| Error::Decode(format!("`{key}` = `{v}` is not `lat,lon`")))
    }

    fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.latlon("grid.nw")?,
            self.latlon("grid.sw")?,
            self.latlon("grid.ne")?,
            self.latlon("grid.se")?,
            self.usize("rows")?,
            self.usize("cols")?,
        )
    }

    fn channels(&self) -> Result<Vec<String>> {
        let v = self.req("channels")?;
        let names: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
        if names.iter().any(String::is_empty) {
            return Err(Error::Decode(format!("bad channel list `{v}`")));
        }
        Ok(names)
    }
}

/// Parses the archive's root `manifest.txt`.
pub fn parse_archive_manifest(text: &str) -> Result<ArchiveManifest> {
    let f = Fields::parse(text)?;
    let format = f.req("format")?;
    if format != ARCHIVE_FORMAT {
        return Err(Error::Decode(format!("unsupported archive format `{format}`")));
    }
    let dense_truth = match f.get("dense_truth").unwrap_or("false") {
        "true" => true,
        "false" => false,
        other => return Err(Error::Decode(format!("dense_truth must be true or false, got `{other}`"))),
    };
    Ok(ArchiveManifest {
        grid: f.grid()?,
        channels: f.channels()?,
        frames: f.usize("frames")?,
        dense_truth,
    })
}

/// Parses a frame directory's `manifest.txt`.
pub fn parse_frame_manifest(text: &str) -> Result<FrameManifest> {
    let f = Fields::parse(text)?;
    let ts = f.req("timestamp")?;
    let timestamp = DateTime::parse_from_rfc3339(ts)
        .map_err(|e| Error::Decode(format!("bad timestamp `{ts}`: {e}")))?
        .with_timezone(&Utc);
    let truth = f.get("truth").map(str::to_string);
    if let Some(t) = &truth {
        if t.contains(['/', '\\']) || t.starts_with('.') {
            return Err(Error::Decode(format!("truth reference `{t}` must be a plain file name")));
        }
    }
    Ok(FrameManifest {
        timestamp,
        grid: f.grid()?,
        channels: f.channels()?,
        stations: f.usize("stations")?,
        truth,
    })
}

/// Writes one frame directory. `truth` names a dense truth file in the
/// parent archive directory.
pub fn write_frame(
    dir: impl AsRef<Path>,
    frame: &SampleFrame,
    grid: &GridSpec,
    channels: &[String],
    truth: Option<&str>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!(
        "timestamp = {}\n",
        frame.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true)
    );
    grid_lines(grid, &mut manifest);
    let _ = writeln!(manifest, "channels = {}", channels.join(","));
    let _ = writeln!(manifest, "stations = {}", frame.station_count);
    if let Some(t) = truth {
        let _ = writeln!(manifest, "truth = {t}");
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;

    let mask = Tensor::<f32>::new(
        &[frame.mask.height(), frame.mask.width()],
        frame.mask.values().iter().map(|&v| v as f32).collect(),
    )?;
    wft::write_file(dir.join("input.wft"), &frame.input)?;
    wft::write_file(dir.join("label.wft"), &frame.label)?;
    wft::write_file(dir.join("mask.wft"), &mask)
}

/// Reads one frame directory.
pub fn read_frame(dir: impl AsRef<Path>) -> Result<SampleFrame> {
    read_frame_with_manifest(dir.as_ref()).map(|(frame, _)| frame)
}

fn read_frame_with_manifest(dir: &Path) -> Result<(SampleFrame, FrameManifest)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = parse_frame_manifest(&text)?;
    let (h, w) = (manifest.grid.rows, manifest.grid.cols);

    let input = wft::read_file(dir.join("input.wft"))?.into_real::<f32>();
    let label = wft::read_file(dir.join("label.wft"))?.into_real::<f32>();
    let mask = wft::read_file(dir.join("mask.wft"))?.into_real::<f64>();
    if input.shape() != [h, w, manifest.channels.len()] || label.shape() != [h, w] || mask.shape() != [h, w] {
        return Err(Error::Shape(format!(
            "tensors in {} do not match the manifest grid",
            dir.display()
        )));
    }
    let frame = SampleFrame {
        timestamp: manifest.timestamp,
        input,
        label,
        mask: MaskGrid::binary(h, w, mask.into_data())?,
        station_count: manifest.stations,
    };
    frame.validate()?;
    Ok((frame, manifest))
}

/// Writes an archive into `dir`, which must be empty or absent.
pub fn write_archive(dir: impl AsRef<Path>, archive: &Archive) -> Result<()> {
    let dir = dir.as_ref();
    archive.validate()?;
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::InvalidArgument(format!(
                "refusing to write an archive into non-empty directory {}",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    for (i, frame) in archive.frames.iter().enumerate() {
        let truth = archive.truths.as_ref().map(|t| (truth_file_name(i), &t[i]));
        if let Some((name, plane)) = &truth {
            wft::write_file(dir.join(name), *plane)?;
        }
        write_frame(
            dir.join(frame_dir_name(i)),
            frame,
            &archive.grid,
            &archive.channels,
            truth.as_ref().map(|(n, _)| n.as_str()),
        )?;
    }

    let mut manifest = format!("format = {ARCHIVE_FORMAT}\n");
    grid_lines(&archive.grid, &mut manifest);
    let _ = writeln!(manifest, "channels = {}", archive.channels.join(","));
    let _ = writeln!(manifest, "frames = {}", archive.frames.len());
    let _ = writeln!(manifest, "dense_truth = {}", archive.has_dense_truth());
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads an archive written by [`write_archive`].
pub fn read_archive(dir: impl AsRef<Path>) -> Result<Archive> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = parse_archive_manifest(&text)?;

    let mut frames = Vec::with_capacity(manifest.frames);
    let mut truths = manifest.dense_truth.then(Vec::new);
    for i in 0..manifest.frames {
        let frame_dir: PathBuf = dir.join(frame_dir_name(i));
        let (frame, fm) = read_frame_with_manifest(&frame_dir)?;
        if fm.grid != manifest.grid || fm.channels != manifest.channels {
            return Err(Error::Decode(format!(
                "{} disagrees with the archive manifest",
                frame_dir.display()
            )));
        }
        if let Some(truths) = truths.as_mut() {
            let name = fm.truth.ok_or_else(|| {
                Error::Decode(format!("{} has no dense truth reference", frame_dir.display()))
            })?;
            truths.push(wft::read_file(dir.join(name))?.into_real::<f64>());
        }
        frames.push(frame);
    }
    let archive = Archive {
        grid: manifest.grid,
        channels: manifest.channels,
        frames,
        truths,
    };
    archive.validate()?;
    Ok(archive)
}
