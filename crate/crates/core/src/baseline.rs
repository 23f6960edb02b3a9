//! Shared-only reference model: one MLP over raw features, trained on the
//! labeled pools of all domains together with no domain information.
//!
//! The network is the shared extractor followed by the first classifier,
//! and training mirrors the main loop's sampling, optimiser and snapshot
//! selection so that the comparison isolates the architecture.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Matrix, Var};
use crate::data::MultiDomainDataset;
use crate::error::{Error, Result};
use crate::losses::classification_loss;
use crate::model::{argmax, Activation, Architecture, Mlp, MlpSpec, NUM_CLASSES};
use crate::optim::{AdamState, Direction};
use crate::trainer::{iterations_per_epoch, BatchSampler, TrainConfig};

const STREAM_BASELINE: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    pub mlp: Mlp,
}

pub fn baseline_spec(arch: &Architecture) -> MlpSpec {
    let mut hidden = arch.extractor_hidden.clone();
    hidden.push(arch.shared_dim);
    hidden.push(arch.c1_hidden);
    MlpSpec::new(arch.vocab_size, &hidden, NUM_CLASSES, Activation::Softmax)
}

impl Baseline {
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_BASELINE);
        Ok(Self {
            mlp: Mlp::init(baseline_spec(arch), arch.init_gain, &mut rng)?,
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let p = self.mlp.forward(x)?;
        Ok((0..p.rows()).map(|r| argmax(p.row(r))).collect())
    }

    fn valid_accuracy(&self, data: &MultiDomainDataset, binarize: bool) -> Result<Option<f64>> {
        let pools: Vec<_> = data
            .domains
            .iter()
            .filter(|d| !d.valid.is_empty())
            .collect();
        if pools.is_empty() {
            return Ok(None);
        }
        let mut sum = 0.0;
        for d in &pools {
            let x = crate::data::to_dense_batch(&d.valid, data.vocab_size, binarize);
            let pred = self.predict(&x)?;
            let correct = d
                .valid
                .iter()
                .zip(&pred)
                .filter(|(ex, &y)| ex.label.map(usize::from) == Some(y))
                .count();
            sum += correct as f64 / d.valid.len() as f64;
        }
        Ok(Some(sum / pools.len() as f64))
    }
}

/// Trains on every domain's labeled pool for `config.epochs` epochs and
/// returns the best-on-validation snapshot.
pub fn train_baseline(data: &MultiDomainDataset, config: &TrainConfig) -> Result<Baseline> {
    config.validate()?;
    if config.uda_target.is_some() {
        return Err(Error::Config(
            "the baseline trains on labeled domains only".into(),
        ));
    }
    if config.arch.vocab_size != data.vocab_size {
        return Err(Error::Config(format!(
            "architecture expects {} features, dataset has {}",
            config.arch.vocab_size, data.vocab_size
        )));
    }
    let mut model = Baseline::init(&config.arch, config.seed)?;
    let mut sampler = BatchSampler::new(data, config)?;
    let mut adam = AdamState::new();
    let per_epoch = iterations_per_epoch(data, config);

    let mut best = model.clone();
    let mut best_acc = model.valid_accuracy(data, config.binarize)?;
    for epoch in 1..=config.epochs {
        for step in 0..per_epoch {
            let batches = sampler.sample();
            let (loss, grads) = {
                let mut g = Graph::new();
                let bound = model.mlp.bind(&mut g, true);
                let mut total: Option<Var> = None;
                for (x, y) in batches.labeled.iter().flatten() {
                    let x = g.constant(x);
                    let p = bound.forward(&mut g, x)?;
                    let l = classification_loss(&mut g, p, y)?;
                    total = Some(match total {
                        Some(t) => g.add(t, l)?,
                        None => l,
                    });
                }
                let total = total.ok_or_else(|| Error::Contract("no labeled batch".into()))?;
                g.backward(total)?;
                (g.value(total).item(), bound.take_grads(&mut g))
            };
            if !loss.is_finite() {
                return Err(Error::NumericalAbort {
                    term: "baseline",
                    epoch,
                    step,
                });
            }
            let mut params: Vec<&mut Matrix> = model.mlp.params_mut().collect();
            adam.update(&mut params, &grads, config.lr, Direction::Descend)?;
        }
        let acc = model.valid_accuracy(data, config.binarize)?;
        match (acc, best_acc) {
            (Some(a), Some(b)) if a > b => {
                best = model.clone();
                best_acc = acc;
            }
            (None, _) => best = model.clone(),
            _ => {}
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};
    use crate::model::DEFAULT_INIT_GAIN;

    #[test]
    fn spec_stacks_extractor_and_classifier() {
        let s = baseline_spec(&Architecture::default());
        assert_eq!(s.hidden_dims, vec![1000, 500, 128, 128]);
        assert_eq!(s.output_dim, 2);
    }

    #[test]
    fn learns_shared_signal() {
        let spec = SynthSpec {
            vocab_size: 120,
            domains: 2,
            labeled_per_domain: 64,
            unlabeled_per_domain: 0,
            valid_per_domain: 50,
            test_per_domain: 0,
            signal_on: 0.5,
            signal_off: 0.02,
            noise_rate: 0.0,
            ..SynthSpec::default()
        };
        let (data, _) = generate_synthetic(&spec).unwrap();
        let cfg = TrainConfig {
            lr: 1e-3,
            epochs: 10,
            arch: Architecture {
                vocab_size: 120,
                extractor_hidden: vec![32],
                shared_dim: 16,
                domain_dim: 8,
                c1_hidden: 16,
                c2_hidden: 8,
                disc_hidden: 16,
                init_gain: DEFAULT_INIT_GAIN,
            },
            ..TrainConfig::default()
        };
        let model = train_baseline(&data, &cfg).unwrap();
        let acc = model.valid_accuracy(&data, false).unwrap().unwrap();
        assert!(acc > 0.8, "accuracy {acc}");
    }
}
