//! On-disk formats.
//!
//! A dataset lives in a directory as `features.csv` + `hierarchy.json`, with
//! optional `split.json` and `modes.json` beside them. All floats are written
//! with shortest round-trip formatting, so save → load → save is byte-stable.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, Error, Result};

use super::{validate_records, FeatureRecord, LabelHierarchy, SplitAssignment};

pub const FEATURES_FILE: &str = "features.csv";
pub const HIERARCHY_FILE: &str = "hierarchy.json";
pub const SPLIT_FILE: &str = "split.json";
pub const MODES_FILE: &str = "modes.json";

pub fn save_features(records: &[FeatureRecord], path: &Path) -> Result<()> {
    let d_in = records.first().map_or(0, |r| r.features.len());
    let mut out = String::from("sample_id,type_label,item_label");
    for j in 0..d_in {
        write!(out, ",f{j}").expect("write to string");
    }
    out.push('\n');
    for r in records {
        write!(out, "{},{},{}", r.sample_id, r.type_label, r.item_label).expect("write to string");
        for v in &r.features {
            write!(out, ",{v}").expect("write to string");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err("write", path))
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let text = std::fs::read_to_string(path).map_err(io_err("read", path))?;
    let malformed = |line: usize, message: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(malformed(1, "missing header line".into()));
    };
    let header_cols: Vec<&str> = header.split(',').collect();
    if header_cols.len() < 3
        || header_cols[0] != "sample_id"
        || header_cols[1] != "type_label"
        || header_cols[2] != "item_label"
    {
        return Err(malformed(1, format!("unexpected header `{header}`")));
    }
    let d_in = header_cols.len() - 3;

    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header_cols.len() {
            return Err(malformed(
                lineno,
                format!("expected {} columns, found {}", header_cols.len(), cols.len()),
            ));
        }
        let type_label: usize = cols[1]
            .parse()
            .map_err(|e| malformed(lineno, format!("bad type_label `{}`: {e}", cols[1])))?;
        let item_label: usize = cols[2]
            .parse()
            .map_err(|e| malformed(lineno, format!("bad item_label `{}`: {e}", cols[2])))?;
        let mut features = Vec::with_capacity(d_in);
        for c in &cols[3..] {
            let v: f64 = c
                .parse()
                .map_err(|e| malformed(lineno, format!("bad feature value `{c}`: {e}")))?;
            features.push(v);
        }
        records.push(FeatureRecord {
            sample_id: cols[0].to_string(),
            type_label,
            item_label,
            features,
        });
    }
    Ok(records)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invalid(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err("write", path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err("read", path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_hierarchy(hierarchy: &LabelHierarchy, path: &Path) -> Result<()> {
    write_json(hierarchy, path)
}

pub fn load_hierarchy(path: &Path) -> Result<LabelHierarchy> {
    let h: LabelHierarchy = read_json(path)?;
    h.validate()?;
    Ok(h)
}

pub fn save_split(split: &SplitAssignment, path: &Path) -> Result<()> {
    write_json(split, path)
}

pub fn load_split(path: &Path) -> Result<SplitAssignment> {
    read_json(path)
}

/// Ground-truth visual mode per item, written by the synthetic generator.
pub fn save_modes(item_modes: &[usize], path: &Path) -> Result<()> {
    write_json(&item_modes.to_vec(), path)
}

pub fn load_modes(path: &Path) -> Result<Vec<usize>> {
    read_json(path)
}

/// Write `features.csv` and `hierarchy.json` into `dir`, creating it if needed.
pub fn save_dataset(records: &[FeatureRecord], hierarchy: &LabelHierarchy, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err("create", dir))?;
    save_features(records, &dir.join(FEATURES_FILE))?;
    save_hierarchy(hierarchy, &dir.join(HIERARCHY_FILE))
}

/// Load and cross-validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(Vec<FeatureRecord>, LabelHierarchy)> {
    let features_path = dir.join(FEATURES_FILE);
    let hierarchy_path = dir.join(HIERARCHY_FILE);
    if !features_path.exists() || !hierarchy_path.exists() {
        return Err(Error::Data(format!(
            "{} is not a dataset directory (expected {FEATURES_FILE} and {HIERARCHY_FILE})",
            dir.display()
        )));
    }
    let records = load_features(&features_path)?;
    let hierarchy = load_hierarchy(&hierarchy_path)?;
    if !records.is_empty() {
        validate_records(&records, &hierarchy).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", features_path.display())),
            other => other,
        })?;
    }
    Ok((records, hierarchy))
}
