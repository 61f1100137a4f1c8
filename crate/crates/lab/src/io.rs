use std::fs;
use std::path::{Path, PathBuf};

use relaxctl_core::{PolicyField, ScalarField, StateGrid};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("output directory {0} is not empty; pass --force to overwrite")]
    NotEmpty(PathBuf),
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), IoError> {
    if dir.exists() {
        let mut it = fs::read_dir(dir).map_err(fs_err(dir))?;
        if it.next().is_some() && !force {
            return Err(IoError::NotEmpty(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(fs_err(dir))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), IoError> {
    let err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(fs_err(path))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(fs_err(path))
}

pub fn read_json(path: &Path) -> Result<serde_json::Value, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Two whitespace-separated columns with a `#` header line.
pub fn write_dat(path: &Path, labels: (&str, &str), points: &[(f64, f64)]) -> Result<(), IoError> {
    let mut text = format!("# {} {}\n", labels.0, labels.1);
    for (x, y) in points {
        text.push_str(&format!("{} {}\n", fmt_f64(*x), fmt_f64(*y)));
    }
    fs::write(path, text).map_err(fs_err(path))
}

fn coord_header(grid: &StateGrid) -> Vec<String> {
    if grid.dim() == 1 {
        vec!["x".into()]
    } else {
        (0..grid.dim()).map(|a| format!("x{a}")).collect()
    }
}

fn coords(grid: &StateGrid, i: usize) -> Vec<String> {
    let p = grid.node(i);
    (0..grid.dim()).map(|a| fmt_f64(p[a])).collect()
}

/// Columns `x..., name_1, name_2, ...` over the state nodes.
pub fn fields_csv(path: &Path, names: &[&str], fields: &[&ScalarField]) -> Result<(), IoError> {
    let grid = fields[0].grid();
    let mut header = coord_header(grid);
    header.extend(names.iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            let mut row = coords(grid, i);
            row.extend(fields.iter().map(|f| fmt_f64(f.values()[i])));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Wide format: one row per state node, one column per control node.
pub fn policy_csv(path: &Path, pi: &PolicyField) -> Result<(), IoError> {
    let grid = pi.state_grid();
    let mut header = coord_header(grid);
    header.extend(pi.control_grid().nodes().iter().map(|u| format!("u={}", fmt_f64(*u))));
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            let mut row = coords(grid, i);
            row.extend(pi.row(i).iter().map(|p| fmt_f64(*p)));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}
