//! Flat `key=value` manifest naming the matrix files of a system and its
//! weight. Paths are relative to the manifest; `#` starts a comment.
//! Without any weight keys the weight is the identity.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{MorError, Result};
use crate::fmap::{self, WeightFilter};
use crate::linalg::Mat;
use crate::lti::StateSpace;

use super::mtx;

const MATRIX_KEYS: [&str; 8] = ["A", "B", "C", "D", "A_w", "B_w", "C_w", "D_w"];
const META_KEYS: [&str; 4] = ["name", "format", "units", "description"];

#[derive(Debug, Clone, Default)]
pub struct SystemManifest {
    pub name: String,
    pub format: String,
    pub files: BTreeMap<String, PathBuf>,
    pub metadata: BTreeMap<String, String>,
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<SystemManifest> {
    let shown = path.display().to_string();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = SystemManifest {
        format: "matrix-market".into(),
        ..Default::default()
    };
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let err = |column: usize, message: String| MorError::Parse {
            path: shown.clone(),
            line: line_no,
            column,
            message,
        };
        let eq = content
            .find('=')
            .ok_or_else(|| err(1 + leading(content), "expected key=value".into()))?;
        let key = content[..eq].trim();
        let value = content[eq + 1..].trim();
        let key_col = 1 + leading(content);
        if key.is_empty() {
            return Err(err(key_col, "empty key".into()));
        }
        if seen.insert(key.to_string(), line_no).is_some() {
            return Err(err(key_col, format!("duplicate key '{key}'")));
        }
        if MATRIX_KEYS.contains(&key) {
            if value.is_empty() {
                return Err(err(eq + 2, format!("'{key}' needs a file path")));
            }
            out.files.insert(key.to_string(), base.join(value));
        } else if META_KEYS.contains(&key) {
            match key {
                "name" => out.name = value.to_string(),
                "format" => {
                    let v = value.to_ascii_lowercase();
                    if v != "matrix-market" && v != "mtx" {
                        return Err(err(eq + 2, format!("unsupported format '{value}'")));
                    }
                    out.format = "matrix-market".into();
                }
                _ => {
                    out.metadata.insert(key.to_string(), value.to_string());
                }
            }
        } else {
            return Err(err(key_col, format!("unknown key '{key}'")));
        }
    }
    for k in ["A", "B", "C"] {
        if !out.files.contains_key(k) {
            return Err(MorError::Parse {
                path: shown.clone(),
                line: text.lines().count().max(1),
                column: 1,
                message: format!("missing required key '{k}'"),
            });
        }
    }
    let has = |k: &str| out.files.contains_key(k);
    if (has("B_w") || has("C_w")) && !has("A_w") {
        return Err(MorError::Parse {
            path: shown,
            line: seen.get("B_w").or(seen.get("C_w")).cloned().unwrap_or(1),
            column: 1,
            message: "B_w/C_w given without A_w".into(),
        });
    }
    Ok(out)
}

fn leading(s: &str) -> usize {
    s.len() - s.trim_start().len()
}

fn shape(m: &Mat) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn mismatch(a: &str, ma: &Mat, b: &str, mb: &Mat, what: &str) -> MorError {
    MorError::DimensionMismatch(format!("{a} ({}) and {b} ({}): {what}", shape(ma), shape(mb)))
}

/// Reads the state-space matrices named by the manifest and checks that
/// their shapes fit together.
pub fn load_system(man: &SystemManifest) -> Result<StateSpace> {
    let a = mtx::read(&man.files["A"])?;
    let b = mtx::read(&man.files["B"])?;
    let c = mtx::read(&man.files["C"])?;
    if a.nrows() != a.ncols() {
        return Err(MorError::DimensionMismatch(format!("A ({}) is not square", shape(&a))));
    }
    if b.nrows() != a.nrows() {
        return Err(mismatch("A", &a, "B", &b, "row counts differ"));
    }
    if c.ncols() != a.ncols() {
        return Err(mismatch("A", &a, "C", &c, "column counts differ"));
    }
    let d = match man.files.get("D") {
        Some(p) => {
            let d = mtx::read(p)?;
            if d.nrows() != c.nrows() {
                return Err(mismatch("C", &c, "D", &d, "row counts differ"));
            }
            if d.ncols() != b.ncols() {
                return Err(mismatch("B", &b, "D", &d, "column counts differ"));
            }
            d
        }
        None => Mat::zeros(c.nrows(), b.ncols()),
    };
    StateSpace::new(a, b, c, d)
}

fn load_weight(man: &SystemManifest, m: usize) -> Result<WeightFilter> {
    let get = |k: &str| man.files.get(k).map(|p| mtx::read(p)).transpose();
    let a_w = get("A_w")?;
    let d_w = get("D_w")?;
    let Some(a_w) = a_w else {
        return match d_w {
            None => Ok(WeightFilter::identity(m)),
            Some(d_w) => {
                if d_w.nrows() != m {
                    return Err(MorError::DimensionMismatch(format!(
                        "B has {m} columns but D_w ({}) has {} rows",
                        shape(&d_w),
                        d_w.nrows()
                    )));
                }
                Ok(WeightFilter::constant(d_w))
            }
        };
    };
    let b_w = get("B_w")?.ok_or_else(|| MorError::DimensionMismatch("A_w given without B_w".into()))?;
    let c_w = get("C_w")?.ok_or_else(|| MorError::DimensionMismatch("A_w given without C_w".into()))?;
    if a_w.nrows() != a_w.ncols() {
        return Err(MorError::DimensionMismatch(format!("A_w ({}) is not square", shape(&a_w))));
    }
    if b_w.nrows() != a_w.nrows() {
        return Err(mismatch("A_w", &a_w, "B_w", &b_w, "row counts differ"));
    }
    if c_w.ncols() != a_w.ncols() {
        return Err(mismatch("A_w", &a_w, "C_w", &c_w, "column counts differ"));
    }
    if c_w.nrows() != m {
        return Err(MorError::DimensionMismatch(format!(
            "B has {m} columns but C_w ({}) has {} rows",
            shape(&c_w),
            c_w.nrows()
        )));
    }
    let d_w = match d_w {
        Some(d) => {
            if d.nrows() != c_w.nrows() {
                return Err(mismatch("C_w", &c_w, "D_w", &d, "row counts differ"));
            }
            if d.ncols() != b_w.ncols() {
                return Err(mismatch("B_w", &b_w, "D_w", &d, "column counts differ"));
            }
            d
        }
        None => Mat::zeros(m, b_w.ncols()),
    };
    WeightFilter::new(a_w, b_w, c_w, d_w)
}

pub fn read_manifest(path: &Path) -> Result<SystemManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| MorError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_manifest(&text, path)
}

/// Loads and validates the system and its weight; `G` must lie in the
/// weighted space.
pub fn load_manifest(path: &Path) -> Result<(StateSpace, WeightFilter)> {
    let man = read_manifest(path)?;
    let g = load_system(&man)?;
    let w = load_weight(&man, g.inputs())?;
    fmap::validate_membership(&g, &w)?;
    Ok((g, w))
}

/// Reduced model written by `reduce`: `model.{A,B,C,D}.mtx` in `dir`.
pub fn load_model_dir(dir: &Path) -> Result<StateSpace> {
    let mut man = SystemManifest::default();
    for k in ["A", "B", "C", "D"] {
        man.files.insert(k.into(), dir.join(format!("model.{k}.mtx")));
    }
    load_system(&man)
}

pub fn write_model_dir(dir: &Path, sys: &StateSpace) -> Result<()> {
    mtx::write(&dir.join("model.A.mtx"), sys.a())?;
    mtx::write(&dir.join("model.B.mtx"), sys.b())?;
    mtx::write(&dir.join("model.C.mtx"), sys.c())?;
    mtx::write(&dir.join("model.D.mtx"), sys.d())
}

/// Writes a system (and optionally a weight) with a manifest next to it.
pub fn write_manifest_bundle(dir: &Path, name: &str, g: &StateSpace, w: Option<&WeightFilter>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| MorError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut text = format!("name = {name}\nformat = matrix-market\n");
    let mut put = |key: &str, m: &Mat| -> Result<()> {
        let file = format!("{key}.mtx");
        mtx::write(&dir.join(&file), m)?;
        text.push_str(&format!("{key} = {file}\n"));
        Ok(())
    };
    put("A", g.a())?;
    put("B", g.b())?;
    put("C", g.c())?;
    put("D", g.d())?;
    if let Some(w) = w {
        put("A_w", w.a())?;
        put("B_w", w.b())?;
        put("C_w", w.c())?;
        put("D_w", w.d())?;
    }
    let path = dir.join("system.manifest");
    super::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
