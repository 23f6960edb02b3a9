//! Line-oriented sparse format.
//!
//! Example line: `<label>\t<idx>:<val> <idx>:<val> ...` with 0-based ascending
//! indices; unlabeled lines carry no label column and start with the pairs.
//!
//! Manifest: one domain per line, `name\tlabeled\tunlabeled[\tvalid\ttest]`,
//! paths relative to the manifest's directory, `-` for an absent pool. An
//! optional `#vocab=N` line sets the vocabulary size (default 5000); other
//! lines starting with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DomainPools, MultiDomainDataset, SparseExample};
use crate::error::{Error, Result};

pub const DEFAULT_VOCAB: usize = 5000;

/// Parses one example line. `labeled` selects which of the two layouts is expected.
pub fn parse_example_line(
    line: &str,
    labeled: bool,
    domain: usize,
) -> std::result::Result<SparseExample, String> {
    let (label, pairs) = if labeled {
        let (label, rest) = line
            .split_once('\t')
            .ok_or_else(|| "expected `<label>\\t<pairs>`".to_string())?;
        let label: u8 = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(format!("label must be 0 or 1, got {other:?}")),
        };
        (Some(label), rest)
    } else {
        if line.contains('\t') {
            return Err("unlabeled line must not carry a label column".into());
        }
        (None, line)
    };
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in pairs.split_ascii_whitespace() {
        let (i, v) = tok
            .split_once(':')
            .ok_or_else(|| format!("malformed pair {tok:?}"))?;
        let i: u32 = i.parse().map_err(|_| format!("bad index in {tok:?}"))?;
        let v: f64 = v.parse().map_err(|_| format!("bad value in {tok:?}"))?;
        if !v.is_finite() {
            return Err(format!("non-finite value in {tok:?}"));
        }
        if let Some(&prev) = indices.last() {
            if i <= prev {
                return Err(format!("index {i} not ascending after {prev}"));
            }
        }
        indices.push(i);
        values.push(v);
    }
    Ok(SparseExample {
        indices,
        values,
        label,
        domain,
    })
}

fn read_pool(
    path: &Path,
    labeled: bool,
    domain: usize,
    vocab_size: usize,
) -> Result<Vec<SparseExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let ex = parse_example_line(line, labeled, domain).map_err(parse_err)?;
        if let Some(&last) = ex.indices.last() {
            if last as usize >= vocab_size {
                return Err(parse_err(format!(
                    "index {last} >= vocabulary size {vocab_size}"
                )));
            }
        }
        out.push(ex);
    }
    Ok(out)
}

fn resolve(base: &Path, field: Option<&str>) -> Option<PathBuf> {
    match field.map(str::trim) {
        None | Some("") | Some("-") => None,
        Some(p) => Some(base.join(p)),
    }
}

pub fn load_corpus(manifest: &Path) -> Result<MultiDomainDataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut vocab_size = DEFAULT_VOCAB;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: manifest.to_path_buf(),
            line: n + 1,
            msg,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(v) = trimmed.strip_prefix("#vocab=") {
            vocab_size = v
                .trim()
                .parse()
                .ok()
                .filter(|&v: &usize| v > 0)
                .ok_or_else(|| parse_err(format!("bad vocabulary size {v:?}")))?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(fields.len() == 3 || fields.len() == 5) {
            return Err(parse_err(format!(
                "expected 3 or 5 tab-separated fields, got {}",
                fields.len()
            )));
        }
        entries.push(fields.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    }

    let mut domains = Vec::with_capacity(entries.len());
    for (m, f) in entries.iter().enumerate() {
        let pool = |idx: usize, labeled: bool| -> Result<Vec<SparseExample>> {
            match resolve(base, f.get(idx).map(String::as_str)) {
                Some(p) => read_pool(&p, labeled, m, vocab_size),
                None => Ok(Vec::new()),
            }
        };
        domains.push(DomainPools {
            name: f[0].trim().to_string(),
            labeled: pool(1, true)?,
            unlabeled: pool(2, false)?,
            valid: pool(3, true)?,
            test: pool(4, true)?,
        });
    }
    let ds = MultiDomainDataset {
        vocab_size,
        domains,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn format_example(ex: &SparseExample) -> String {
    let mut s = String::new();
    if let Some(l) = ex.label {
        let _ = write!(s, "{l}\t");
    }
    for (k, (i, v)) in ex.indices.iter().zip(&ex.values).enumerate() {
        if k > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{i}:{v}");
    }
    s
}

pub fn write_pool(path: &Path, examples: &[SparseExample]) -> Result<()> {
    let mut text = String::new();
    for ex in examples {
        text.push_str(&format_example(ex));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes one file per pool plus `manifest.tsv` into `dir`; returns the manifest path.
pub fn write_corpus(ds: &MultiDomainDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("#vocab={}\n", ds.vocab_size);
    let with_splits = ds
        .domains
        .iter()
        .any(|d| !d.valid.is_empty() || !d.test.is_empty());
    for d in &ds.domains {
        let mut fields = vec![d.name.clone()];
        let mut pools: Vec<(&str, &[SparseExample])> =
            vec![("labeled", &d.labeled), ("unlabeled", &d.unlabeled)];
        if with_splits {
            pools.push(("valid", &d.valid));
            pools.push(("test", &d.test));
        }
        for (suffix, examples) in pools {
            let file = format!("{}.{suffix}", d.name);
            write_pool(&dir.join(&file), examples)?;
            fields.push(file);
        }
        manifest.push_str(&fields.join("\t"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_line() {
        let ex = parse_example_line("1\t3:2 17:1", true, 0).unwrap();
        assert_eq!(ex.label, Some(1));
        assert_eq!(ex.indices, vec![3, 17]);
        assert_eq!(ex.values, vec![2.0, 1.0]);
    }

    #[test]
    fn unlabeled_line() {
        let ex = parse_example_line("0:0.5 4:1", false, 2).unwrap();
        assert_eq!(ex.label, None);
        assert_eq!(ex.domain, 2);
        assert_eq!(ex.nnz(), 2);
    }

    #[test]
    fn malformed_lines() {
        assert!(parse_example_line("3:2 17:1", true, 0).is_err());
        assert!(parse_example_line("2\t3:2", true, 0).is_err());
        assert!(parse_example_line("1\t3:2 3:1", true, 0).is_err());
        assert!(parse_example_line("1\t3-2", true, 0).is_err());
        assert!(parse_example_line("1\t3:2", false, 0).is_err());
    }

    #[test]
    fn load_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.l"), "1\t1:1\n0\toops\n").unwrap();
        fs::write(dir.path().join("a.u"), "").unwrap();
        fs::write(dir.path().join("m.tsv"), "#vocab=10\na\ta.l\ta.u\n").unwrap();
        match load_corpus(&dir.path().join("m.tsv")) {
            Err(Error::Parse { path, line, .. }) => {
                assert!(path.ends_with("a.l"));
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_rejects_index_beyond_vocab() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.l"), "1\t1:1 10:1\n").unwrap();
        fs::write(dir.path().join("m.tsv"), "#vocab=10\na\ta.l\t-\n").unwrap();
        assert!(matches!(
            load_corpus(&dir.path().join("m.tsv")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_unlabeled_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.l"), "1\t1:1\n0\t2:1\n").unwrap();
        fs::write(dir.path().join("a.u"), "").unwrap();
        fs::write(dir.path().join("m.tsv"), "#vocab=10\na\ta.l\ta.u\n").unwrap();
        let ds = load_corpus(&dir.path().join("m.tsv")).unwrap();
        assert_eq!(ds.domains[0].labeled.len(), 2);
        assert!(ds.domains[0].unlabeled.is_empty());
        assert_eq!(ds.vocab_size, 10);
    }
}
