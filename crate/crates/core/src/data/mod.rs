//! Sparse bag-of-words corpora split into per-domain pools.

mod io;
mod split;
mod synth;

pub use io::{format_example, load_corpus, parse_example_line, write_corpus, write_pool};
pub use split::{
    five_fold_indices, five_fold_split, ratio_indices, ratio_split, Split, SplitIndices,
};
pub use synth::{generate_synthetic, SynthSpec, SynthTruth};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseExample {
    /// Strictly increasing feature ids.
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub label: Option<u8>,
    pub domain: usize,
}

impl SparseExample {
    pub fn new(
        indices: Vec<u32>,
        values: Vec<f64>,
        label: Option<u8>,
        domain: usize,
    ) -> Result<Self> {
        let ex = Self {
            indices,
            values,
            label,
            domain,
        };
        ex.check(usize::MAX)?;
        Ok(ex)
    }

    pub fn unlabeled(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    fn check(&self, vocab_size: usize) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::Contract(format!(
                "{} indices but {} values",
                self.indices.len(),
                self.values.len()
            )));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract(
                "feature indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = self.indices.last() {
            if last as usize >= vocab_size {
                return Err(Error::Range {
                    what: "feature",
                    index: last as usize,
                    len: vocab_size,
                });
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("feature values must be finite".into()));
        }
        if matches!(self.label, Some(l) if l > 1) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// All pools of one domain. `valid` and `test` may be empty when the caller
/// derives them by splitting `labeled`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DomainPools {
    pub name: String,
    pub labeled: Vec<SparseExample>,
    pub unlabeled: Vec<SparseExample>,
    pub valid: Vec<SparseExample>,
    pub test: Vec<SparseExample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomainDataset {
    pub vocab_size: usize,
    pub domains: Vec<DomainPools>,
}

impl MultiDomainDataset {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::Config(format!("no domain named {name:?}")))
    }

    pub fn names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    /// Checks every example against the vocabulary and its pool.
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocabulary size must be positive".into()));
        }
        for (m, d) in self.domains.iter().enumerate() {
            let pools: [(&str, &[SparseExample], bool); 4] = [
                ("labeled", &d.labeled, true),
                ("unlabeled", &d.unlabeled, false),
                ("valid", &d.valid, true),
                ("test", &d.test, true),
            ];
            for (pool, examples, needs_label) in pools {
                for ex in examples {
                    ex.check(self.vocab_size)?;
                    if ex.domain != m {
                        return Err(Error::Contract(format!(
                            "example in {}/{pool} carries domain {}",
                            d.name, ex.domain
                        )));
                    }
                    if needs_label != ex.label.is_some() {
                        return Err(Error::Contract(format!(
                            "{}/{pool} example has label {:?}",
                            d.name, ex.label
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense `n x vocab_size` rows; `binarize` maps every stored nonzero to 1.
pub fn to_dense_batch<'a, I>(examples: I, vocab_size: usize, binarize: bool) -> Matrix
where
    I: IntoIterator<Item = &'a SparseExample>,
    I::IntoIter: ExactSizeIterator,
{
    let iter = examples.into_iter();
    let mut out = Matrix::zeros(iter.len(), vocab_size);
    for (r, ex) in iter.enumerate() {
        let row = out.row_mut(r);
        for (&i, &v) in ex.indices.iter().zip(&ex.values) {
            row[i as usize] = if binarize && v != 0.0 { 1.0 } else { v };
        }
    }
    out
}
