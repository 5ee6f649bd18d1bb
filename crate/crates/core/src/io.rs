//! On-disk formats: matrices as CSV, datasets as a directory, flat `key=value` text.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every value bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::manifold::StiefelPoint;
use crate::model::{GroupedDataset, NoiseGroups, NoiseKind, SignalModel};
use crate::numerics::DenseMatrix;

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::with_capacity(m.len() * 20);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:?}", m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str, path: &Path) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("bad number {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "empty matrix".into(),
        });
    }
    let cols = rows[0].len();
    let m = DenseMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten());
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix file"));
    }
    Ok(m)
}

pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    write_text(path, &matrix_to_csv(m))
}

pub fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    matrix_from_csv(&read_text(path)?, path)
}

/// Flat `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("expected key=value, found {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    parse_key_values(&read_text(path)?, path)
}

fn join<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

/// A dataset together with the model that produced it.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub model: SignalModel,
    pub dataset: GroupedDataset,
    pub noise: NoiseKind,
    pub seed: Option<u64>,
}

const META: &str = "meta.txt";
const TRUTH: &str = "truth.csv";

fn block_file(l: usize) -> String {
    format!("block_{l}.csv")
}

/// Writes `meta.txt`, `truth.csv` and one `block_<l>.csv` per group (d rows, n_l columns).
pub fn write_dataset(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ds = &bundle.dataset;
    let mut meta = format!(
        "d={}\nk={}\nl={}\nsizes={}\nvariances={}\nlambdas={}\nnoise={}\n",
        ds.d(),
        ds.k(),
        ds.groups().len(),
        join(ds.groups().sizes()),
        join(ds.groups().variances()),
        join(bundle.model.lambdas()),
        bundle.noise,
    );
    if let Some(seed) = bundle.seed {
        meta.push_str(&format!("seed={seed}\n"));
    }
    write_text(&dir.join(META), &meta)?;
    write_matrix_csv(&dir.join(TRUTH), bundle.model.q_truth().matrix())?;
    for (l, block) in ds.blocks().iter().enumerate() {
        write_matrix_csv(&dir.join(block_file(l)), block)?;
    }
    Ok(())
}

struct Meta {
    path: PathBuf,
    entries: Vec<(String, String)>,
}

impl Meta {
    fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse {
                path: self.path.clone(),
                line: 0,
                msg: format!("missing key {key:?}"),
            })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key)?;
        raw.parse().map_err(|e: T::Err| Error::Parse {
            path: self.path.clone(),
            line: 0,
            msg: format!("{key}={raw}: {e}"),
        })
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)?
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|e: T::Err| Error::Parse {
                    path: self.path.clone(),
                    line: 0,
                    msg: format!("{key}: {e}"),
                })
            })
            .collect()
    }
}

pub fn read_dataset(dir: &Path) -> Result<DatasetBundle> {
    let path = dir.join(META);
    let meta = Meta {
        entries: read_key_values(&path)?,
        path,
    };
    let d: usize = meta.parse("d")?;
    let k: usize = meta.parse("k")?;
    let l: usize = meta.parse("l")?;
    let groups = NoiseGroups::new(meta.list("sizes")?, meta.list("variances")?)?;
    if groups.len() != l {
        return Err(Error::Dimension(format!(
            "meta declares {l} groups but lists {}",
            groups.len()
        )));
    }
    let noise: NoiseKind = meta.parse("noise")?;
    let seed = match meta.raw("seed") {
        Ok(_) => Some(meta.parse("seed")?),
        Err(_) => None,
    };
    let q = read_matrix_csv(&dir.join(TRUTH))?;
    if q.shape() != (d, k) {
        return Err(Error::Dimension(format!(
            "truth is {}×{} but meta declares {d}×{k}",
            q.nrows(),
            q.ncols()
        )));
    }
    let model = SignalModel::new(StiefelPoint::new(q)?, meta.list("lambdas")?)?;
    let blocks = (0..l)
        .map(|i| read_matrix_csv(&dir.join(block_file(i))))
        .collect::<Result<Vec<_>>>()?;
    let dataset = GroupedDataset::new(k, groups, blocks)?;
    if dataset.d() != d {
        return Err(Error::Dimension(format!(
            "blocks have {} rows but meta declares d = {d}",
            dataset.d()
        )));
    }
    Ok(DatasetBundle {
        model,
        dataset,
        noise,
        seed,
    })
}

/// A d×K starting point stored as CSV; must already be orthonormal.
pub fn read_stiefel_point(path: &Path) -> Result<StiefelPoint> {
    StiefelPoint::new(read_matrix_csv(path)?)
}
