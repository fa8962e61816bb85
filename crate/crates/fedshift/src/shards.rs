//! Line-oriented text format for datasets, used for regression fixtures.
//!
//! ```text
//! # optional comment lines
//! K,input_dim,n
//! label,x_1,...,x_d      (n lines, features to 9 significant digits)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use fedshift_core::data::shards_from_datasets;
use fedshift_core::{ClientShard, Dataset};

/// Serializes `data`, prefixing each `comments` line with `# `.
pub fn write_dataset(data: &Dataset, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(
        out,
        "{},{},{}",
        data.num_classes,
        data.input_dim,
        data.len()
    );
    for i in 0..data.len() {
        let (x, y) = data.sample(i);
        out.push_str(&y.to_string());
        for v in x {
            let _ = write!(out, ",{v:.8e}");
        }
        out.push('\n');
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hline, header) = lines.next().context("missing `K,input_dim,n` header")?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("line {}: bad header `{header}`", hline + 1))?;
    let [k, d, n] = dims[..] else {
        bail!("line {}: header needs exactly K,input_dim,n", hline + 1);
    };
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines {
        let mut fields = line.split(',').map(str::trim);
        let label: usize = fields
            .next()
            .unwrap_or("")
            .parse()
            .with_context(|| format!("line {}: bad label", i + 1))?;
        let before = features.len();
        for f in fields {
            features.push(
                f.parse::<f64>()
                    .with_context(|| format!("line {}: bad feature `{f}`", i + 1))?,
            );
        }
        ensure!(
            features.len() - before == d,
            "line {}: expected {d} features, got {}",
            i + 1,
            features.len() - before
        );
        labels.push(label);
    }
    ensure!(
        labels.len() == n,
        "header declares {n} samples, found {}",
        labels.len()
    );
    Ok(Dataset::new(d, k, features, labels)?)
}

pub fn client_file(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("client_{id}.txt"))
}

pub fn test_file(dir: &Path) -> PathBuf {
    dir.join("test.txt")
}

/// Loads `client_0.txt`, `client_1.txt`, ... (until the first gap) and
/// `test.txt`.
pub fn load_shards(dir: &Path) -> Result<(Vec<ClientShard>, Dataset)> {
    let mut datasets = Vec::new();
    loop {
        let path = client_file(dir, datasets.len());
        if !path.exists() {
            break;
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        datasets.push(read_dataset(&text).with_context(|| path.display().to_string())?);
    }
    ensure!(!datasets.is_empty(), "no client_0.txt in {}", dir.display());
    let path = test_file(dir);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let test = read_dataset(&text).with_context(|| path.display().to_string())?;
    for d in &datasets {
        ensure!(
            (d.num_classes, d.input_dim) == (test.num_classes, test.input_dim),
            "client and test files disagree on K or input_dim"
        );
    }
    Ok((shards_from_datasets(datasets)?, test))
}
