//! Seeded multi-domain sentiment generator with cross-domain polarity flips.
//!
//! Vocabulary layout, in order:
//!
//! * shared signal words: the first half (rounded up) is positive in every
//!   domain, the rest negative;
//! * the ambiguous block: half `A`, half `B`. In even-numbered domains `A`
//!   words are positive and `B` negative; odd-numbered domains swap them;
//! * one marker block per domain, frequent in its own domain only;
//! * background words.
//!
//! Each word appears independently (value 1) with a probability set by its
//! role and the example's true label. Observed labels are then flipped with
//! probability `noise_rate`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DomainPools, MultiDomainDataset, SparseExample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub domains: usize,
    pub vocab_size: usize,
    pub shared_signal_words: usize,
    pub flipped_words: usize,
    pub marker_words: usize,
    pub labeled_per_domain: usize,
    pub unlabeled_per_domain: usize,
    pub valid_per_domain: usize,
    pub test_per_domain: usize,
    pub noise_rate: f64,
    /// Presence probability of a signal word agreeing with the label.
    pub signal_on: f64,
    /// Presence probability of a signal word disagreeing with the label.
    pub signal_off: f64,
    pub marker_rate: f64,
    pub background_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            domains: 3,
            vocab_size: 500,
            shared_signal_words: 10,
            flipped_words: 40,
            marker_words: 20,
            labeled_per_domain: 100,
            unlabeled_per_domain: 1000,
            valid_per_domain: 100,
            test_per_domain: 500,
            noise_rate: 0.05,
            signal_on: 0.2,
            signal_off: 0.03,
            marker_rate: 0.15,
            background_rate: 0.02,
            seed: 0,
        }
    }
}

/// Word-role layout and per-domain polarity of the generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub shared_positive: Range<usize>,
    pub shared_negative: Range<usize>,
    pub flip_a: Range<usize>,
    pub flip_b: Range<usize>,
    pub markers: Vec<Range<usize>>,
    /// `+1` where block `A` is positive, `-1` where it is negative.
    pub polarity: Vec<i8>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 || self.vocab_size == 0 {
            return Err(Error::Config(
                "domains and vocabulary size must be positive".into(),
            ));
        }
        let used = self.shared_signal_words + self.flipped_words + self.domains * self.marker_words;
        if used > self.vocab_size {
            return Err(Error::Config(format!(
                "{used} role words do not fit a vocabulary of {}",
                self.vocab_size
            )));
        }
        for (name, p) in [
            ("noise_rate", self.noise_rate),
            ("signal_on", self.signal_on),
            ("signal_off", self.signal_off),
            ("marker_rate", self.marker_rate),
            ("background_rate", self.background_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> SynthTruth {
        let s = self.shared_signal_words;
        let pos = s.div_ceil(2);
        let f = self.flipped_words;
        let fa = f.div_ceil(2);
        let marker_start = s + f;
        SynthTruth {
            shared_positive: 0..pos,
            shared_negative: pos..s,
            flip_a: s..s + fa,
            flip_b: s + fa..s + f,
            markers: (0..self.domains)
                .map(|m| {
                    let start = marker_start + m * self.marker_words;
                    start..start + self.marker_words
                })
                .collect(),
            polarity: (0..self.domains)
                .map(|m| if m % 2 == 0 { 1 } else { -1 })
                .collect(),
        }
    }

    /// Expected fraction of nonzero columns per row, with labels balanced.
    /// The layout is symmetric, so every domain shares the same value.
    pub fn expected_density(&self) -> f64 {
        let signal = (self.shared_signal_words + self.flipped_words) as f64;
        let mean_signal = 0.5 * (self.signal_on + self.signal_off);
        let other_markers = (self.domains - 1) * self.marker_words;
        let background = self.vocab_size
            - self.shared_signal_words
            - self.flipped_words
            - self.marker_words
            - other_markers;
        (signal * mean_signal
            + self.marker_words as f64 * self.marker_rate
            + (background + other_markers) as f64 * self.background_rate)
            / self.vocab_size as f64
    }

    /// `key=value` lines describing the spec.
    pub fn to_meta(&self) -> String {
        let t = self.truth();
        let mut out = format!(
            "domains={}\nvocab_size={}\nshared_signal_words={}\nflipped_words={}\nmarker_words={}\n\
             labeled_per_domain={}\nunlabeled_per_domain={}\nvalid_per_domain={}\ntest_per_domain={}\n\
             noise_rate={}\nsignal_on={}\nsignal_off={}\nmarker_rate={}\nbackground_rate={}\nseed={}\n",
            self.domains,
            self.vocab_size,
            self.shared_signal_words,
            self.flipped_words,
            self.marker_words,
            self.labeled_per_domain,
            self.unlabeled_per_domain,
            self.valid_per_domain,
            self.test_per_domain,
            self.noise_rate,
            self.signal_on,
            self.signal_off,
            self.marker_rate,
            self.background_rate,
            self.seed,
        );
        out.push_str(&format!(
            "shared_positive={}..{}\nshared_negative={}..{}\nflip_a={}..{}\nflip_b={}..{}\n",
            t.shared_positive.start,
            t.shared_positive.end,
            t.shared_negative.start,
            t.shared_negative.end,
            t.flip_a.start,
            t.flip_a.end,
            t.flip_b.start,
            t.flip_b.end
        ));
        let pol: Vec<String> = t.polarity.iter().map(i8::to_string).collect();
        out.push_str(&format!("polarity={}\n", pol.join(",")));
        out
    }
}

struct DomainSampler<'a> {
    spec: &'a SynthSpec,
    truth: &'a SynthTruth,
    domain: usize,
}

impl DomainSampler<'_> {
    fn presence(&self, word: usize, label: u8) -> f64 {
        let t = self.truth;
        let s = self.spec;
        let agree = |positive_word: bool| {
            if positive_word == (label == 1) {
                s.signal_on
            } else {
                s.signal_off
            }
        };
        let a_positive = t.polarity[self.domain] > 0;
        if t.shared_positive.contains(&word) {
            agree(true)
        } else if t.shared_negative.contains(&word) {
            agree(false)
        } else if t.flip_a.contains(&word) {
            agree(a_positive)
        } else if t.flip_b.contains(&word) {
            agree(!a_positive)
        } else if t.markers[self.domain].contains(&word) {
            s.marker_rate
        } else {
            s.background_rate
        }
    }

    fn example(&self, rng: &mut ChaCha8Rng, keep_label: bool) -> SparseExample {
        let label = u8::from(rng.random_bool(0.5));
        let mut indices = Vec::new();
        for w in 0..self.spec.vocab_size {
            if rng.random::<f64>() < self.presence(w, label) {
                indices.push(w as u32);
            }
        }
        let observed = if rng.random::<f64>() < self.spec.noise_rate {
            1 - label
        } else {
            label
        };
        let values = vec![1.0; indices.len()];
        SparseExample {
            indices,
            values,
            label: keep_label.then_some(observed),
            domain: self.domain,
        }
    }
}

/// Domains are named `d0`, `d1`, ...; every pool has its own random stream.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(MultiDomainDataset, SynthTruth)> {
    spec.validate()?;
    let truth = spec.truth();
    let mut domains = Vec::with_capacity(spec.domains);
    for m in 0..spec.domains {
        let sampler = DomainSampler {
            spec,
            truth: &truth,
            domain: m,
        };
        let pool = |k: u64, n: usize, labeled: bool| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(4 * m as u64 + k);
            (0..n)
                .map(|_| sampler.example(&mut rng, labeled))
                .collect::<Vec<_>>()
        };
        domains.push(DomainPools {
            name: format!("d{m}"),
            labeled: pool(0, spec.labeled_per_domain, true),
            unlabeled: pool(1, spec.unlabeled_per_domain, false),
            valid: pool(2, spec.valid_per_domain, true),
            test: pool(3, spec.test_per_domain, true),
        });
    }
    Ok((
        MultiDomainDataset {
            vocab_size: spec.vocab_size,
            domains,
        },
        truth,
    ))
}
