//! Per-farm CSV series: `timestamp,awo_mw,fwo_mw`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;

/// Hourly `(AWO, FWO)` observations of one farm, in MW.
#[derive(Debug, Clone, PartialEq)]
pub struct WindSeries {
    /// 1-based farm id.
    pub farm_id: usize,
    pub timestamps: Vec<String>,
    pub observations: Vec<Vec2>,
    pub capacity_mw: Option<f64>,
}

impl WindSeries {
    pub fn new(farm_id: usize, timestamps: Vec<String>, observations: Vec<Vec2>) -> Result<Self> {
        if timestamps.len() != observations.len() {
            return Err(Error::InvalidConfig(format!(
                "farm {farm_id}: {} timestamps for {} observations",
                timestamps.len(),
                observations.len()
            )));
        }
        if let Some(i) = observations
            .iter()
            .position(|o| !(o[0].is_finite() && o[1].is_finite() && o[0] >= 0.0 && o[1] >= 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "farm {farm_id}: observation {} is negative or not finite",
                i + 1
            )));
        }
        Ok(WindSeries {
            farm_id,
            timestamps,
            observations,
            capacity_mw: None,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// The first `n` observations.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        WindSeries {
            farm_id: self.farm_id,
            timestamps: self.timestamps[..n].to_vec(),
            observations: self.observations[..n].to_vec(),
            capacity_mw: self.capacity_mw,
        }
    }
}

/// Farm-by-farm observation blocks, as the distributed fit consumes them.
pub fn observation_blocks(series: &[WindSeries]) -> Vec<Vec<Vec2>> {
    series.iter().map(|s| s.observations.clone()).collect()
}

/// Hour-by-hour sums over all farms; every series must have the same length.
pub fn aggregate(series: &[WindSeries]) -> Vec<Vec2> {
    let n = series.first().map_or(0, WindSeries::len);
    (0..n)
        .map(|i| series.iter().map(|s| s.observations[i]).sum())
        .collect()
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    timestamp: String,
    awo_mw: f64,
    fwo_mw: f64,
}

/// Reads one farm's file.
pub fn read_series(path: &Path, farm_id: usize) -> Result<WindSeries> {
    let display = path.display().to_string();
    let data_err = |line: u64, message: String| Error::Data {
        path: display.clone(),
        line,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => data_err(1, format!("{other:?}")),
    })?;
    let header = reader.headers().map_err(|e| data_err(1, e.to_string()))?;
    if header != vec!["timestamp", "awo_mw", "fwo_mw"] {
        return Err(data_err(
            1,
            format!(
                "expected header timestamp,awo_mw,fwo_mw, found {}",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut timestamps = Vec::new();
    let mut observations = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.deserialize::<Row>() {
        let row = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(line, e.to_string())
        })?;
        let line = timestamps.len() as u64 + 2;
        DateTime::parse_from_rfc3339(&row.timestamp)
            .map_err(|e| data_err(line, format!("bad timestamp {:?}: {e}", row.timestamp)))?;
        if !(row.awo_mw.is_finite()
            && row.fwo_mw.is_finite()
            && row.awo_mw >= 0.0
            && row.fwo_mw >= 0.0)
        {
            return Err(data_err(
                line,
                "outputs must be finite and non-negative".into(),
            ));
        }
        if !seen.insert(row.timestamp.clone()) {
            return Err(data_err(
                line,
                format!("duplicate timestamp {}", row.timestamp),
            ));
        }
        timestamps.push(row.timestamp);
        observations.push(Vec2::new(row.awo_mw, row.fwo_mw));
    }
    WindSeries::new(farm_id, timestamps, observations)
}

/// Series aligned on their common timestamps, with the number of rows each
/// farm lost in the alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub series: Vec<WindSeries>,
    pub dropped: Vec<usize>,
}

impl LoadedSeries {
    pub fn total_dropped(&self) -> usize {
        self.dropped.iter().sum()
    }
}

/// Loads every `*.csv` in `dir` (sorted by file name, farm ids from 1) and
/// keeps only timestamps present in every file, in the first file's order.
pub fn load_csv(dir: &Path) -> Result<LoadedSeries> {
    let files = csv_files(dir)?;
    if files.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no .csv files in {}",
            dir.display()
        )));
    }
    let raw = files
        .iter()
        .enumerate()
        .map(|(k, p)| read_series(p, k + 1))
        .collect::<Result<Vec<_>>>()?;
    align(raw)
}

/// Restricts each series to the timestamps common to all.
pub fn align(raw: Vec<WindSeries>) -> Result<LoadedSeries> {
    let mut common: HashSet<&str> = raw[0].timestamps.iter().map(String::as_str).collect();
    for s in &raw[1..] {
        let here: HashSet<&str> = s.timestamps.iter().map(String::as_str).collect();
        common.retain(|t| here.contains(t));
    }
    if common.is_empty() {
        return Err(Error::InsufficientData(
            "the farm series share no timestamp".into(),
        ));
    }
    let order: Vec<String> = raw[0]
        .timestamps
        .iter()
        .filter(|t| common.contains(t.as_str()))
        .cloned()
        .collect();
    let mut dropped = Vec::with_capacity(raw.len());
    let series = raw
        .iter()
        .map(|s| {
            let index: HashMap<&str, usize> = s
                .timestamps
                .iter()
                .enumerate()
                .map(|(i, t)| (t.as_str(), i))
                .collect();
            dropped.push(s.len() - order.len());
            WindSeries {
                farm_id: s.farm_id,
                timestamps: order.clone(),
                observations: order
                    .iter()
                    .map(|t| s.observations[index[t.as_str()]])
                    .collect(),
                capacity_mw: s.capacity_mw,
            }
        })
        .collect();
    Ok(LoadedSeries { series, dropped })
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// File name used for a farm's series.
pub fn farm_file_name(farm_id: usize) -> String {
    format!("farm_{farm_id:02}.csv")
}

/// Writes one file per farm into `dir`, creating it if needed.
pub fn write_csv(dir: &Path, series: &[WindSeries]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in series {
        let path = dir.join(farm_file_name(s.farm_id));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_record(["timestamp", "awo_mw", "fwo_mw"])
            .map_err(|e| Error::Parse(e.to_string()))?;
        for (t, o) in s.timestamps.iter().zip(&s.observations) {
            // `Display` for f64 prints the shortest string that parses back exactly.
            w.write_record([t.clone(), o[0].to_string(), o[1].to_string()])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(id: usize, hours: &[u32], base: f64) -> WindSeries {
        WindSeries::new(
            id,
            hours
                .iter()
                .map(|h| format!("2025-01-01T{h:02}:00:00Z"))
                .collect(),
            hours
                .iter()
                .map(|&h| Vec2::new(base + h as f64 * 0.1, base + 0.05))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_timestamps_keep_everything() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(
            dir.path(),
            &[series(1, &[0, 1, 2], 1.0), series(2, &[0, 1, 2], 2.0)],
        )
        .unwrap();
        let loaded = load_csv(dir.path()).unwrap();
        assert_eq!(loaded.series[0].len(), 3);
        assert_eq!(loaded.total_dropped(), 0);
    }

    #[test]
    fn missing_hour_is_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(
            dir.path(),
            &[series(1, &[0, 1, 2, 3], 1.0), series(2, &[0, 1, 3], 2.0)],
        )
        .unwrap();
        let loaded = load_csv(dir.path()).unwrap();
        assert_eq!(loaded.series[1].len(), 3);
        assert_eq!(loaded.dropped, vec![1, 0]);
        assert_eq!(loaded.series[0].timestamps, loaded.series[1].timestamps);
    }

    #[test]
    fn write_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = series(1, &[0, 1], 0.0);
        s.observations = vec![
            Vec2::new(0.1 + 0.2, 1.0 / 3.0),
            Vec2::new(7e-300, 123.45678901234568),
        ];
        write_csv(dir.path(), &[s.clone()]).unwrap();
        let back = load_csv(dir.path()).unwrap();
        for (a, b) in back.series[0].observations.iter().zip(&s.observations) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    #[test]
    fn malformed_row_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("farm_01.csv");
        fs::write(
            &path,
            "timestamp,awo_mw,fwo_mw\n2025-01-01T00:00:00Z,1.0,2.0\n2025-01-01T01:00:00Z,abc,2.0\n",
        )
        .unwrap();
        match load_csv(dir.path()) {
            Err(Error::Data { path: p, line, .. }) => {
                assert!(p.ends_with("farm_01.csv"));
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_output_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("a.csv"),
            "timestamp,awo_mw,fwo_mw\n2025-01-01T00:00:00Z,-1.0,2.0\n",
        )
        .unwrap();
        assert!(matches!(
            load_csv(dir.path()),
            Err(Error::Data { line: 2, .. })
        ));
    }

    #[test]
    fn disjoint_timestamps_fail() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(
            dir.path(),
            &[series(1, &[0, 1], 1.0), series(2, &[2, 3], 2.0)],
        )
        .unwrap();
        assert!(matches!(
            load_csv(dir.path()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn aggregate_sums_farms() {
        let a = aggregate(&[series(1, &[0, 1], 1.0), series(2, &[0, 1], 2.0)]);
        assert!((a[1] - Vec2::new(3.2, 3.1)).norm() < 1e-12);
    }
}
