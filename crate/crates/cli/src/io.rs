//! Surface and report files.
//!
//! Two surface formats are understood:
//!
//! * CSV with the header `x,y,z` and one point per row;
//! * a plain triangle mesh: a line `N T`, then `N` lines `x y z`, then `T`
//!   lines `i j k` with 0-based vertex indices.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a written file gives back the identical values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use snapmatch::surface::SurfaceGrid;
use snapmatch::Point;

use crate::error::CliError;

pub const CSV_HEADER: &str = "x,y,z";

fn parse_coord(token: &str) -> Result<f64, String> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| format!("`{}` is not a number", token.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite coordinate `{}`", token.trim()))
    }
}

fn parse_error(path: &Path, what: String) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        message: what,
    }
}

/// Parses surface text; `path` only labels errors.
pub fn parse_surface(text: &str, path: &Path) -> Result<SurfaceGrid, CliError> {
    let first = text.lines().next().unwrap_or("").trim();
    if first.eq_ignore_ascii_case(CSV_HEADER) {
        parse_csv(text, path)
    } else {
        parse_mesh(text, path)
    }
}

fn parse_csv(text: &str, path: &Path) -> Result<SurfaceGrid, CliError> {
    let mut points = Vec::new();
    for (row, line) in text.lines().skip(1).enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_error(path, format!("row {row}: expected 3 fields, found {}", fields.len())));
        }
        let mut p = Point::zeros();
        for (c, f) in fields.iter().enumerate() {
            p[c] = parse_coord(f).map_err(|e| parse_error(path, format!("row {row}: {e}")))?;
        }
        points.push(p);
    }
    SurfaceGrid::new(points).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn parse_mesh(text: &str, path: &Path) -> Result<SurfaceGrid, CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, "empty file".to_string()))?;
    let counts: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || {
        parse_error(
            path,
            format!("line {ln}: expected `N T` header or the CSV header `{CSV_HEADER}`"),
        )
    };
    if counts.len() != 2 {
        return Err(bad_header());
    }
    let n: usize = counts[0].parse().map_err(|_| bad_header())?;
    let t: usize = counts[1].parse().map_err(|_| bad_header())?;

    let mut points = Vec::with_capacity(n);
    let mut triangles = Vec::with_capacity(t);
    for i in 0..n + t {
        let (ln, line) = lines.next().ok_or_else(|| {
            parse_error(path, format!("file ends after {i} of {} data lines", n + t))
        })?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(parse_error(path, format!("line {ln}: expected 3 values, found {}", tokens.len())));
        }
        if i < n {
            let mut p = Point::zeros();
            for c in 0..3 {
                p[c] = parse_coord(tokens[c]).map_err(|e| parse_error(path, format!("line {ln}: {e}")))?;
            }
            points.push(p);
        } else {
            let mut tri = [0usize; 3];
            for c in 0..3 {
                tri[c] = tokens[c]
                    .parse()
                    .map_err(|_| parse_error(path, format!("line {ln}: `{}` is not a vertex index", tokens[c])))?;
            }
            triangles.push(tri);
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_error(path, format!("line {ln}: unexpected data after {n} vertices and {t} faces")));
    }
    let grid = if t == 0 {
        SurfaceGrid::new(points)
    } else {
        SurfaceGrid::with_triangles(points, triangles)
    };
    grid.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn read_surface(path: &Path) -> Result<SurfaceGrid, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_surface(&text, path)
}

/// Canonical text of a grid: mesh format with triangles, CSV without.
pub fn format_surface(grid: &SurfaceGrid) -> String {
    let mut out = String::new();
    match grid.triangles() {
        Some(tris) => {
            writeln!(out, "{} {}", grid.len(), tris.len()).unwrap();
            for p in grid.points() {
                writeln!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
            }
            for t in tris {
                writeln!(out, "{} {} {}", t[0], t[1], t[2]).unwrap();
            }
        }
        None => {
            writeln!(out, "{CSV_HEADER}").unwrap();
            for p in grid.points() {
                writeln!(out, "{},{},{}", p.x, p.y, p.z).unwrap();
            }
        }
    }
    out
}

pub fn write_surface(path: &Path, grid: &SurfaceGrid) -> Result<(), CliError> {
    write_atomic(path, &format_surface(grid))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Validation(format!("`{}` is not a file path", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

/// Minimal CSV table with a fixed header.
#[derive(Debug, Clone, Default)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            text: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.text)
    }
}
