//! Station and dense error metrics, seasonal aggregation and heatmap export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Utc};

use crate::error::{Error, Result};
use crate::grid::{fill_nearest, inverse_log_transform, SampleFrame};
use crate::network::{predict, InputMask, NetworkSpec, ParamStore};
use crate::tensor::{MaskGrid, Real, Tensor};

/// Evaluation period by calendar month (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeasonBucket {
    /// April and May.
    Early,
    /// June through August.
    Mid,
    /// September and October.
    Late,
    /// Every other month.
    OffSeason,
}

impl SeasonBucket {
    pub const ALL: [SeasonBucket; 4] = [Self::Early, Self::Mid, Self::Late, Self::OffSeason];

    pub fn from_month(month: u32) -> Self {
        match month {
            4 | 5 => Self::Early,
            6..=8 => Self::Mid,
            9 | 10 => Self::Late,
            _ => Self::OffSeason,
        }
    }

    pub fn of(timestamp: DateTime<Utc>) -> Self {
        Self::from_month(timestamp.month())
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Early => "early",
            Self::Mid => "mid",
            Self::Late => "late",
            Self::OffSeason => "off_season",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Self::Early => "Early (Apr+May)",
            Self::Mid => "Mid (Jun+Jul+Aug)",
            Self::Late => "Late (Sep+Oct)",
            Self::OffSeason => "Off-season",
        }
    }
}

/// Absolute errors (μg/m³) at each station cell, in row-major cell order.
///
/// `pred` is in μg/m³; `label` holds log-transformed values and is
/// inverse-transformed before comparison.
pub fn station_errors(pred: &[f64], label: &[f32], mask: &MaskGrid) -> Result<Vec<f64>> {
    let n = mask.height() * mask.width();
    if pred.len() != n || label.len() != n {
        return Err(Error::Shape(format!(
            "prediction ({}) and label ({}) must both cover the {n} mask cells",
            pred.len(),
            label.len()
        )));
    }
    if !mask.is_binary() {
        return Err(Error::Mask("station mask must be binary".into()));
    }
    Ok(mask
        .active_indices()
        .map(|i| (pred[i] - inverse_log_transform(label[i] as f64)).abs())
        .collect())
}

/// Mean absolute error over the mask's cells, `None` for an empty mask.
pub fn mae_at_stations(pred: &[f64], label: &[f32], mask: &MaskGrid) -> Result<Option<f64>> {
    Ok(mean(&station_errors(pred, label, mask)?))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Dense errors against a full truth plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseMae {
    /// Over every cell.
    pub all: f64,
    /// Over cells without a station; `None` if every cell has one.
    pub off_station: Option<f64>,
}

pub fn dense_mae(pred: &[f64], truth: &[f64], stations: &MaskGrid) -> Result<DenseMae> {
    let n = stations.height() * stations.width();
    if pred.len() != n || truth.len() != n {
        return Err(Error::Shape("prediction and truth must cover the grid".into()));
    }
    if n == 0 {
        return Err(Error::Shape("empty grid".into()));
    }
    let mut all = 0.0;
    let mut off = Vec::with_capacity(n);
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        let e = (p - t).abs();
        all += e;
        if stations.values()[i] == 0.0 {
            off.push(e);
        }
    }
    Ok(DenseMae {
        all: all / n as f64,
        off_station: mean(&off),
    })
}

/// Interpolates station values (μg/m³) to every cell by copying the value
/// of the nearest station. Returns `None` when there are no stations.
pub fn nearest_station_field(label: &[f32], mask: &MaskGrid) -> Option<Vec<f64>> {
    if mask.count() == 0 {
        return None;
    }
    let known: Vec<bool> = mask.values().iter().map(|&m| m != 0.0).collect();
    let mut values: Vec<f64> = label
        .iter()
        .zip(&known)
        .map(|(&l, &k)| if k { inverse_log_transform(l as f64) } else { 0.0 })
        .collect();
    fill_nearest(&mut values, &known, mask.height(), mask.width());
    Some(values)
}

/// Per-frame evaluation outcome for one system.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub timestamp: DateTime<Utc>,
    /// Absolute errors at each station, μg/m³.
    pub errors: Vec<f64>,
    pub station_count: usize,
    pub dense: Option<DenseMae>,
}

impl EvalRecord {
    /// Scores a prediction plane against a frame's label and, when given,
    /// the dense truth.
    pub fn score(
        timestamp: DateTime<Utc>,
        pred: &[f64],
        label: &[f32],
        mask: &MaskGrid,
        truth: Option<&[f64]>,
    ) -> Result<Self> {
        let errors = station_errors(pred, label, mask)?;
        let dense = truth.map(|t| dense_mae(pred, t, mask)).transpose()?;
        Ok(EvalRecord {
            timestamp,
            station_count: errors.len(),
            errors,
            dense,
        })
    }

    /// Station MAE, `None` without stations.
    pub fn mae(&self) -> Option<f64> {
        mean(&self.errors)
    }

    pub fn bucket(&self) -> SeasonBucket {
        SeasonBucket::of(self.timestamp)
    }
}

fn check_truths(frames: &[SampleFrame], truths: Option<&[Tensor<f64>]>) -> Result<()> {
    match truths {
        Some(t) if t.len() != frames.len() => Err(Error::Shape(format!(
            "{} dense truth planes for {} frames",
            t.len(),
            frames.len()
        ))),
        _ => Ok(()),
    }
}

fn score_all(
    frames: &[SampleFrame],
    truths: Option<&[Tensor<f64>]>,
    mut predict_frame: impl FnMut(&SampleFrame) -> Result<Vec<f64>>,
) -> Result<Vec<EvalRecord>> {
    check_truths(frames, truths)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let pred = predict_frame(f)?;
            EvalRecord::score(f.timestamp, &pred, f.label.data(), &f.mask, truths.map(|t| t[i].data()))
        })
        .collect()
}

/// Scores the network's PM2.5 head on every frame.
pub fn evaluate_model<T: Real>(
    params: &ParamStore<T>,
    spec: &NetworkSpec,
    frames: &[SampleFrame],
    truths: Option<&[Tensor<f64>]>,
    input_mask: InputMask,
) -> Result<Vec<EvalRecord>> {
    score_all(frames, truths, |f| {
        let m0 = input_mask.mask_for(f);
        Ok(predict(params, spec, &f.input.cast::<T>(), &m0)?.into_data())
    })
}

/// Scores an input channel holding a log-transformed PM2.5 forecast, read
/// back in μg/m³.
pub fn evaluate_channel(
    frames: &[SampleFrame],
    truths: Option<&[Tensor<f64>]>,
    channel: usize,
) -> Result<Vec<EvalRecord>> {
    score_all(frames, truths, |f| {
        Ok(f.input
            .channel(channel)?
            .data()
            .iter()
            .map(|&v| inverse_log_transform(v as f64))
            .collect())
    })
}

/// Scores nearest-station interpolation of each frame's own labels. At the
/// stations it is exact, so only its dense errors are informative.
pub fn evaluate_nearest_station(
    frames: &[SampleFrame],
    truths: Option<&[Tensor<f64>]>,
) -> Result<Vec<EvalRecord>> {
    score_all(frames, truths, |f| {
        Ok(nearest_station_field(f.label.data(), &f.mask)
            .unwrap_or_else(|| vec![0.0; f.label.numel()]))
    })
}

/// Mean station MAE over records that have stations.
pub fn overall_mae(records: &[EvalRecord]) -> Option<f64> {
    mean(&records.iter().filter_map(EvalRecord::mae).collect::<Vec<_>>())
}

/// Mean dense off-station MAE over records that carry it.
pub fn overall_dense_off_station(records: &[EvalRecord]) -> Option<f64> {
    mean(
        &records
            .iter()
            .filter_map(|r| r.dense.and_then(|d| d.off_station))
            .collect::<Vec<_>>(),
    )
}

/// Mean of a metric over the records of one bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketStat {
    pub bucket: SeasonBucket,
    pub mean: Option<f64>,
    pub count: usize,
}

/// One row of the report: a system (or a system's dense metric) across
/// the buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub buckets: [BucketStat; 4],
}

/// Metric that a report row aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Station,
    DenseAll,
    DenseOff,
}

impl Metric {
    fn of(self, r: &EvalRecord) -> Option<f64> {
        match self {
            Metric::Station => r.mae(),
            Metric::DenseAll => r.dense.map(|d| d.all),
            Metric::DenseOff => r.dense.and_then(|d| d.off_station),
        }
    }
}

fn aggregate(system: String, records: &[EvalRecord], metric: Metric) -> ReportRow {
    let buckets = SeasonBucket::ALL.map(|bucket| {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| r.bucket() == bucket)
            .filter_map(|r| metric.of(r))
            .collect();
        BucketStat {
            bucket,
            mean: mean(&values),
            count: values.len(),
        }
    });
    ReportRow { system, buckets }
}

/// Per-system, per-season mean errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalReport {
    pub rows: Vec<ReportRow>,
    /// Whether any record carried dense errors.
    pub has_dense: bool,
}

/// Groups each system's records by season and averages them, every record
/// weighing the same. Systems whose records carry dense errors get two
/// extra rows, `<system> dense` and `<system> dense off-station`.
pub fn seasonal_report(systems: &[(String, Vec<EvalRecord>)]) -> SeasonalReport {
    let mut rows = Vec::new();
    let mut has_dense = false;
    for (name, records) in systems {
        rows.push(aggregate(name.clone(), records, Metric::Station));
    }
    for (name, records) in systems {
        if records.iter().any(|r| r.dense.is_some()) {
            has_dense = true;
            rows.push(aggregate(format!("{name} dense"), records, Metric::DenseAll));
            rows.push(aggregate(format!("{name} dense off-station"), records, Metric::DenseOff));
        }
    }
    SeasonalReport { rows, has_dense }
}

const EMPTY: &str = "—";

impl SeasonalReport {
    pub fn row(&self, system: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.system == system)
    }

    /// Aligned text table; empty buckets show `—`.
    pub fn to_table(&self) -> String {
        let mut header = vec!["System".to_string()];
        header.extend(SeasonBucket::ALL.iter().map(|b| b.title().to_string()));
        let mut lines: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.system.clone()];
            cells.extend(
                row.buckets
                    .iter()
                    .map(|b| b.mean.map_or(EMPTY.to_string(), |m| format!("{m:.2}"))),
            );
            lines.push(cells);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in lines.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let pad = widths[c] - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                let _ = writeln!(out, "{}", rule.join("-|-"));
            }
        }
        out
    }

    /// CSV with columns `system,bucket,mae,record_count`; empty buckets
    /// show `—` in the `mae` column.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["system", "bucket", "mae", "record_count"]);
        for row in &self.rows {
            for b in &row.buckets {
                let mae = b.mean.map_or(EMPTY.to_string(), |m| format!("{m}"));
                let _ = w.write_record([row.system.as_str(), b.bucket.name(), &mae, &b.count.to_string()]);
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8 fields")
    }
}

/// Files written by [`export_heatmap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub pgm: PathBuf,
    pub bounds: PathBuf,
}

/// Gray level of `value` on the linear map `[lo, hi] → [0, 255]`, floored
/// and clamped.
pub fn gray_level(value: f64, lo: f64, hi: f64) -> u8 {
    let t = (value - lo) / (hi - lo) * 255.0;
    t.floor().clamp(0.0, 255.0) as u8
}

/// Writes `<stem>.csv` (values with 17 significant digits), `<stem>.pgm`
/// (ASCII graymap, maxval 255) and `<stem>.bounds.txt` (the `lo`/`hi` used).
pub fn export_heatmap(
    plane: &[f64],
    rows: usize,
    cols: usize,
    stem: impl AsRef<Path>,
    lo: f64,
    hi: f64,
) -> Result<HeatmapFiles> {
    if plane.len() != rows * cols {
        return Err(Error::Shape(format!(
            "plane has {} values, expected {rows}×{cols}",
            plane.len()
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "heatmap bounds need lo < hi, got lo = {lo}, hi = {hi}"
        )));
    }
    if plane.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap plane".into()));
    }
    let stem = stem.as_ref();
    let with_ext = |ext: &str| {
        let mut name = stem.as_os_str().to_owned();
        name.push(ext);
        PathBuf::from(name)
    };
    let files = HeatmapFiles {
        csv: with_ext(".csv"),
        pgm: with_ext(".pgm"),
        bounds: with_ext(".bounds.txt"),
    };

    let mut csv = String::with_capacity(plane.len() * 24);
    let mut pgm = format!("P2\n{cols} {rows}\n255\n");
    for r in 0..rows {
        let row = &plane[r * cols..(r + 1) * cols];
        let values: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let grays: Vec<String> = row.iter().map(|&v| gray_level(v, lo, hi).to_string()).collect();
        let _ = writeln!(csv, "{}", values.join(","));
        let _ = writeln!(pgm, "{}", grays.join(" "));
    }
    let bounds = format!("lo = {lo:?}\nhi = {hi:?}\n");
    for (path, text) in [(&files.csv, csv), (&files.pgm, pgm), (&files.bounds, bounds)] {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn at(month: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, month, 10, 0, 0, 0).unwrap()
    }

    fn record(month: u32, mae: f64) -> EvalRecord {
        EvalRecord {
            timestamp: at(month),
            errors: vec![mae],
            station_count: 1,
            dense: None,
        }
    }

    #[test]
    fn buckets_by_month() {
        let got: Vec<SeasonBucket> = (1..=12).map(SeasonBucket::from_month).collect();
        use SeasonBucket::*;
        assert_eq!(
            got,
            [OffSeason, OffSeason, OffSeason, Early, Early, Mid, Mid, Mid, Late, Late, OffSeason, OffSeason]
        );
    }

    #[test]
    fn station_mae_examples() {
        let mask = MaskGrid::from_cells(2, 2, &[(0, 0), (1, 1)]).unwrap();
        let label: Vec<f32> = [3.0f64, 0.0, 0.0, 7.0].iter().map(|v| v.ln_1p() as f32).collect();
        let truth: Vec<f64> = label.iter().map(|&l| inverse_log_transform(l as f64)).collect();
        assert_eq!(mae_at_stations(&truth, &label, &mask).unwrap(), Some(0.0));
        let pred = [truth[0] + 1.0, 55.0, -4.0, truth[3] - 2.0];
        assert!((mae_at_stations(&pred, &label, &mask).unwrap().unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(mae_at_stations(&pred, &label, &MaskGrid::zeros(2, 2)).unwrap(), None);
    }

    #[test]
    fn dense_examples() {
        let truth = [1.0, 2.0, 3.0, 4.0];
        let mask = MaskGrid::from_cells(2, 2, &[(0, 0)]).unwrap();
        assert_eq!(dense_mae(&truth, &truth, &mask).unwrap().all, 0.0);
        let shifted: Vec<f64> = truth.iter().map(|t| t + 1.0).collect();
        assert_eq!(dense_mae(&shifted, &truth, &mask).unwrap().all, 1.0);
        let pred = [1.0, 3.0, 5.0, 7.0];
        assert_eq!(dense_mae(&pred, &truth, &mask).unwrap().off_station, Some(2.0));
    }

    #[test]
    fn nearest_station_copies_values() {
        let mask = MaskGrid::from_cells(1, 5, &[(0, 0), (0, 4)]).unwrap();
        let label: Vec<f32> = vec![(2.0f64).ln_1p() as f32, 0.0, 0.0, 0.0, (8.0f64).ln_1p() as f32];
        let f = nearest_station_field(&label, &mask).unwrap();
        assert!((f[1] - 2.0).abs() < 1e-6 && (f[3] - 8.0).abs() < 1e-5);
        // Ties go to the first station in row-major order.
        assert_eq!(f[2], f[0]);
        assert!(nearest_station_field(&label, &MaskGrid::zeros(1, 5)).is_none());
    }

    #[test]
    fn report_examples() {
        let r = seasonal_report(&[("m".into(), vec![record(5, 3.0)])]);
        let row = r.row("m").unwrap();
        assert_eq!(row.buckets[0].mean, Some(3.0));
        assert!(row.buckets[1..].iter().all(|b| b.mean.is_none()));
        assert!(r.to_table().contains('—'));

        let r = seasonal_report(&[("m".into(), vec![record(7, 10.0), record(8, 20.0)])]);
        assert_eq!(r.row("m").unwrap().buckets[1].mean, Some(15.0));
        assert_eq!(r.row("m").unwrap().buckets[1].count, 2);

        let r = seasonal_report(&[("m".into(), vec![record(11, 4.0)])]);
        let b = &r.row("m").unwrap().buckets;
        assert_eq!(b[3].mean, Some(4.0));
        assert!(b[..3].iter().all(|s| s.count == 0));
    }

    #[test]
    fn csv_and_dense_rows() {
        let mut rec = record(6, 2.0);
        rec.dense = Some(DenseMae { all: 1.0, off_station: Some(1.5) });
        let r = seasonal_report(&[("a".into(), vec![rec]), ("b".into(), vec![record(6, 1.0)])]);
        assert!(r.has_dense);
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.row("a dense off-station").unwrap().buckets[1].mean, Some(1.5));
        let csv = r.to_csv();
        assert!(csv.starts_with("system,bucket,mae,record_count\n"));
        assert!(csv.contains("a,mid,2,1\n"));
        assert!(csv.contains("b,early,—,0\n"));
        assert!(!seasonal_report(&[("b".into(), vec![record(6, 1.0)])]).has_dense);
    }

    #[test]
    fn gray_levels() {
        assert_eq!(gray_level(0.0, 0.0, 10.0), 0);
        assert_eq!(gray_level(10.0, 0.0, 10.0), 255);
        assert_eq!(gray_level(5.0, 0.0, 10.0), 127);
        assert_eq!(gray_level(-3.0, 0.0, 10.0), 0);
        assert_eq!(gray_level(30.0, 0.0, 10.0), 255);
    }

    #[test]
    fn heatmap_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plane = [0.1, 1.0 / 3.0, 2.5e-17, 1e300, -7.25, 5.0];
        let files = export_heatmap(&plane, 2, 3, dir.path().join("h"), 0.0, 10.0).unwrap();
        let parsed: Vec<f64> = fs::read_to_string(&files.csv)
            .unwrap()
            .split([',', '\n'])
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(parsed, plane);
        let pgm = fs::read_to_string(&files.pgm).unwrap();
        assert_eq!(pgm, "P2\n3 2\n255\n2 8 0\n255 0 127\n");
        assert!(fs::read_to_string(&files.bounds).unwrap().contains("hi = 10.0"));
        assert!(export_heatmap(&plane, 2, 3, dir.path().join("x"), 1.0, 1.0).is_err());
    }
}
