//! Dataset manifests: scan records, loading, and per-epoch resampling.

use crate::{ModelError, Result};
use mesh_core::sampling::{derive_seed, sample_surface, select_points};
use mesh_core::{io, PointCloud, TriMesh};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    Mesh,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanLabel {
    Synthetic,
    Neutral,
    Expressive,
}

impl ScanLabel {
    pub fn is_real(self) -> bool {
        self != ScanLabel::Synthetic
    }
}

/// One manifest row, with the path already resolved.
#[derive(Debug, Clone)]
pub struct Scan {
    pub path: PathBuf,
    pub kind: ScanKind,
    pub label: ScanLabel,
    pub subject: String,
}

/// Which manifest rows a training stage sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFilter {
    Synthetic,
    RealNeutral,
    RealExpressive,
    RealAll,
}

impl DataFilter {
    pub fn accepts(self, label: ScanLabel) -> bool {
        match self {
            DataFilter::Synthetic => label == ScanLabel::Synthetic,
            DataFilter::RealNeutral => label == ScanLabel::Neutral,
            DataFilter::RealExpressive => label == ScanLabel::Expressive,
            DataFilter::RealAll => label.is_real(),
        }
    }
}

impl std::fmt::Display for DataFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            DataFilter::Synthetic => "synthetic",
            DataFilter::RealNeutral => "real-neutral",
            DataFilter::RealExpressive => "real-expressive",
            DataFilter::RealAll => "real-all",
        };
        f.write_str(name)
    }
}

/// A parsed manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scans: Vec<Scan>,
}

impl Dataset {
    /// Parses `path,kind,label,subject_id` rows; relative paths resolve
    /// against the manifest's directory.
    pub fn load(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path).map_err(|e| ModelError::Manifest {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let bad = |line: usize, msg: String| ModelError::Manifest {
            path: path.display().to_string(),
            msg: format!("line {line}: {msg}"),
        };
        let root = path.parent().unwrap_or(Path::new("."));

        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => break (i, l),
                None => return Err(bad(0, "empty manifest".into())),
            }
        };
        let fields: Vec<&str> = header.1.split(',').map(str::trim).collect();
        if fields != ["path", "kind", "label", "subject_id"] {
            return Err(bad(
                header.0 + 1,
                format!("header must be path,kind,label,subject_id, got {:?}", header.1),
            ));
        }

        let mut scans = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(bad(i + 1, format!("expected 4 columns, got {}", cols.len())));
            }
            let kind = match cols[1] {
                "mesh" => ScanKind::Mesh,
                "cloud" => ScanKind::Cloud,
                other => return Err(bad(i + 1, format!("unknown kind {other:?}"))),
            };
            let label = match cols[2] {
                "synthetic" => ScanLabel::Synthetic,
                "neutral" => ScanLabel::Neutral,
                "expressive" => ScanLabel::Expressive,
                other => return Err(bad(i + 1, format!("unknown label {other:?}"))),
            };
            if label == ScanLabel::Synthetic && kind != ScanKind::Mesh {
                return Err(bad(i + 1, "synthetic scans need template meshes".into()));
            }
            if cols[0].is_empty() || cols[3].is_empty() {
                return Err(bad(i + 1, "path and subject_id must be non-empty".into()));
            }
            let scan_path = root.join(cols[0]);
            scans.push(Scan {
                path: scan_path,
                kind,
                label,
                subject: cols[3].to_string(),
            });
        }
        if scans.is_empty() {
            return Err(bad(0, "manifest lists no scans".into()));
        }
        Ok(Dataset { scans })
    }

    /// Indices of scans a filter keeps, in manifest order.
    pub fn indices(&self, filter: DataFilter) -> Vec<usize> {
        (0..self.scans.len())
            .filter(|&i| filter.accepts(self.scans[i].label))
            .collect()
    }
}

/// Scan geometry in memory.
pub enum ScanData {
    Mesh(TriMesh),
    Cloud(PointCloud),
}

/// Reads the geometry a manifest row points at.
pub fn load_scan(scan: &Scan) -> Result<ScanData> {
    let wrap = |e: mesh_core::MeshError| ModelError::Scan {
        path: scan.path.display().to_string(),
        msg: e.to_string(),
    };
    match scan.kind {
        ScanKind::Mesh => Ok(ScanData::Mesh(io::parse_mesh(&scan.path).map_err(wrap)?)),
        ScanKind::Cloud => Ok(ScanData::Cloud(
            io::parse_point_cloud(&scan.path).map_err(wrap)?,
        )),
    }
}

/// Draws this epoch's point cloud for one scan.
///
/// Meshes are sampled by area, clouds subsampled without replacement; both
/// are deterministic in the derived seed.
pub fn sample_scan(data: &ScanData, n: usize, seed: u64) -> Result<PointCloud> {
    let cloud = match data {
        ScanData::Mesh(mesh) => sample_surface(mesh, n, seed)?,
        ScanData::Cloud(cloud) => select_points(cloud, n, seed)?,
    };
    Ok(cloud)
}

/// Seed for one scan's resampling in one epoch.
pub fn epoch_seed(run_seed: u64, stage: usize, epoch: usize, scan_idx: usize) -> u64 {
    derive_seed(run_seed, &[stage as u64, epoch as u64, scan_idx as u64])
}
