//! The five-network architecture: shared extractor, per-domain extractors,
//! twin classifiers and the multinomial domain discriminator.
//!
//! Every trainable matrix belongs to exactly one [`Group`]. Training steps
//! bind a [`ModelParams`] onto a [`Graph`] with a [`Trainable`] mask; groups
//! outside the mask enter the graph as constants and never receive gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Matrix, Var};
use crate::error::{Error, Result};

/// Number of sentiment classes.
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        output_activation: Activation,
    ) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            output_activation,
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self
            .hidden_dims
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "MLP dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Matrix,
    /// `1 x out`
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Zero-mean Gaussian weights with variance `gain / fan_in`, zero biases.
    pub fn init(spec: MlpSpec, gain: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt())
                    .map_err(|e| Error::Config(format!("init gain {gain}: {e}")))?;
                Ok(Linear {
                    weight: Matrix::from_fn(fan_in, fan_out, |_, _| normal.sample(rng)),
                    bias: Matrix::zeros(1, fan_out),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Linear {
                weight: Matrix::zeros(i, o),
                bias: Matrix::zeros(1, o),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Parameters in canonical order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.params().map(Matrix::len).sum()
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p>, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (g.param(&l.weight), g.param(&l.bias))
                } else {
                    (g.constant(&l.weight), g.constant(&l.bias))
                }
            })
            .collect();
        BoundMlp {
            layers,
            activation: self.spec.output_activation,
            trainable,
        }
    }

    /// Tape-free forward pass.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x);
        let y = bound.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

/// An [`Mlp`] whose parameters are leaves of a particular graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
    trainable: bool,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            h = if i < last {
                g.relu(z)
            } else {
                match self.activation {
                    Activation::None => z,
                    Activation::Relu => g.relu(z),
                    Activation::Softmax => g.row_softmax(z),
                }
            };
        }
        Ok(h)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Moves gradients out of the graph in canonical parameter order.
    pub fn take_grads(&self, g: &mut Graph<'_>) -> Vec<Matrix> {
        self.vars().map(|v| g.take_grad(v)).collect()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }
}

/// Layer widths of every component network.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub vocab_size: usize,
    pub extractor_hidden: Vec<usize>,
    pub shared_dim: usize,
    pub domain_dim: usize,
    pub c1_hidden: usize,
    pub c2_hidden: usize,
    pub disc_hidden: usize,
    /// Weight variance is `init_gain / fan_in`.
    pub init_gain: f64,
}

/// He initialisation, variance `2 / fan_in`.
pub const HE_GAIN: f64 = 2.0;
/// Variance `1 / (3 fan_in)`, that of a uniform draw on `±1/sqrt(fan_in)`.
pub const DEFAULT_INIT_GAIN: f64 = 1.0 / 3.0;

impl Default for Architecture {
    fn default() -> Self {
        Self {
            vocab_size: 5000,
            extractor_hidden: vec![1000, 500],
            shared_dim: 128,
            domain_dim: 64,
            c1_hidden: 128,
            c2_hidden: 64,
            disc_hidden: 128,
            init_gain: DEFAULT_INIT_GAIN,
        }
    }
}

impl Architecture {
    pub fn shared_spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.vocab_size,
            &self.extractor_hidden,
            self.shared_dim,
            Activation::Relu,
        )
    }

    pub fn domain_spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.vocab_size,
            &self.extractor_hidden,
            self.domain_dim,
            Activation::Relu,
        )
    }

    pub fn classifier_spec(&self, hidden: usize) -> MlpSpec {
        MlpSpec::new(
            self.shared_dim + self.domain_dim,
            &[hidden],
            NUM_CLASSES,
            Activation::Softmax,
        )
    }

    pub fn discriminator_spec(&self, domains: usize) -> MlpSpec {
        MlpSpec::new(
            self.shared_dim,
            &[self.disc_hidden],
            domains,
            Activation::Softmax,
        )
    }
}

/// Which optional components exist.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    pub domains: usize,
    /// `false` for a domain without its own extractor (an adaptation target).
    pub private: Vec<bool>,
    pub second_classifier: bool,
    pub discriminator: bool,
}

impl Components {
    pub fn full(domains: usize) -> Self {
        Self {
            domains,
            private: vec![true; domains],
            second_classifier: true,
            discriminator: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    SharedExtractor,
    DomainExtractors,
    Classifier1,
    Classifier2,
    Discriminator,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::SharedExtractor,
        Group::DomainExtractors,
        Group::Classifier1,
        Group::Classifier2,
        Group::Discriminator,
    ];
}

/// Mask of groups that receive gradients in one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Trainable {
    pub shared: bool,
    pub domain: bool,
    pub c1: bool,
    pub c2: bool,
    pub disc: bool,
}

impl Trainable {
    pub const NONE: Trainable = Trainable {
        shared: false,
        domain: false,
        c1: false,
        c2: false,
        disc: false,
    };
    pub const ALL: Trainable = Trainable {
        shared: true,
        domain: true,
        c1: true,
        c2: true,
        disc: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub shared: Mlp,
    pub domain: Vec<Option<Mlp>>,
    pub c1: Mlp,
    pub c2: Option<Mlp>,
    pub disc: Option<Mlp>,
}

/// Sub-stream ids for component initialisation.
const STREAM_SHARED: u64 = 1;
const STREAM_C1: u64 = 2;
const STREAM_C2: u64 = 3;
const STREAM_DISC: u64 = 4;
const STREAM_DOMAIN_BASE: u64 = 100;

fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ModelParams {
    /// Each component draws from its own ChaCha stream, so the two classifiers
    /// never start identical and ablating a component leaves the others'
    /// initial weights unchanged.
    pub fn init(arch: &Architecture, components: &Components, seed: u64) -> Result<Self> {
        if components.domains == 0 {
            return Err(Error::Config("at least one domain is required".into()));
        }
        if components.private.len() != components.domains {
            return Err(Error::Config(
                "private-extractor flags must cover every domain".into(),
            ));
        }
        let shared = Mlp::init(
            arch.shared_spec(),
            arch.init_gain,
            &mut component_rng(seed, STREAM_SHARED),
        )?;
        let domain = components
            .private
            .iter()
            .enumerate()
            .map(|(m, &has)| {
                has.then(|| {
                    Mlp::init(
                        arch.domain_spec(),
                        arch.init_gain,
                        &mut component_rng(seed, STREAM_DOMAIN_BASE + m as u64),
                    )
                })
                .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let c1 = Mlp::init(
            arch.classifier_spec(arch.c1_hidden),
            arch.init_gain,
            &mut component_rng(seed, STREAM_C1),
        )?;
        let c2 = components
            .second_classifier
            .then(|| {
                Mlp::init(
                    arch.classifier_spec(arch.c2_hidden),
                    arch.init_gain,
                    &mut component_rng(seed, STREAM_C2),
                )
            })
            .transpose()?;
        let disc = components
            .discriminator
            .then(|| {
                Mlp::init(
                    arch.discriminator_spec(components.domains),
                    arch.init_gain,
                    &mut component_rng(seed, STREAM_DISC),
                )
            })
            .transpose()?;
        Ok(Self {
            arch: arch.clone(),
            shared,
            domain,
            c1,
            c2,
            disc,
        })
    }

    /// All-zero parameters with the layout `init` would produce.
    pub fn zeros(arch: &Architecture, components: &Components) -> Result<Self> {
        if components.private.len() != components.domains {
            return Err(Error::Config(
                "private-extractor flags must cover every domain".into(),
            ));
        }
        Ok(Self {
            arch: arch.clone(),
            shared: Mlp::zeros(arch.shared_spec())?,
            domain: components
                .private
                .iter()
                .map(|&has| has.then(|| Mlp::zeros(arch.domain_spec())).transpose())
                .collect::<Result<_>>()?,
            c1: Mlp::zeros(arch.classifier_spec(arch.c1_hidden))?,
            c2: components
                .second_classifier
                .then(|| Mlp::zeros(arch.classifier_spec(arch.c2_hidden)))
                .transpose()?,
            disc: components
                .discriminator
                .then(|| Mlp::zeros(arch.discriminator_spec(components.domains)))
                .transpose()?,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.domain.len()
    }

    pub fn components(&self) -> Components {
        Components {
            domains: self.domain.len(),
            private: self.domain.iter().map(Option::is_some).collect(),
            second_classifier: self.c2.is_some(),
            discriminator: self.disc.is_some(),
        }
    }

    /// Every parameter matrix with its stable name and group.
    pub fn named_params(&self) -> Vec<(String, Group, &Matrix)> {
        fn push<'a>(
            out: &mut Vec<(String, Group, &'a Matrix)>,
            prefix: &str,
            group: Group,
            mlp: &'a Mlp,
        ) {
            for (i, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), group, &layer.weight));
                out.push((format!("{prefix}.{i}.bias"), group, &layer.bias));
            }
        }
        let mut out = Vec::new();
        push(&mut out, "shared", Group::SharedExtractor, &self.shared);
        for (m, d) in self.domain.iter().enumerate() {
            if let Some(d) = d {
                push(&mut out, &format!("domain{m}"), Group::DomainExtractors, d);
            }
        }
        push(&mut out, "c1", Group::Classifier1, &self.c1);
        if let Some(c2) = &self.c2 {
            push(&mut out, "c2", Group::Classifier2, c2);
        }
        if let Some(disc) = &self.disc {
            push(&mut out, "disc", Group::Discriminator, disc);
        }
        out
    }

    /// Parameters of one group in canonical order.
    pub fn group_params(&self, group: Group) -> Vec<&Matrix> {
        self.named_params()
            .into_iter()
            .filter(|(_, g, _)| *g == group)
            .map(|(_, _, m)| m)
            .collect()
    }

    /// All parameters, mutable, in the same order as [`ModelParams::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.shared.params_mut().collect();
        for d in self.domain.iter_mut().flatten() {
            out.extend(d.params_mut());
        }
        out.extend(self.c1.params_mut());
        if let Some(c2) = &mut self.c2 {
            out.extend(c2.params_mut());
        }
        if let Some(disc) = &mut self.disc {
            out.extend(disc.params_mut());
        }
        out
    }

    /// Mutable parameters of one group, in the order of [`ModelParams::group_params`].
    pub fn group_params_mut(&mut self, group: Group) -> Vec<&mut Matrix> {
        match group {
            Group::SharedExtractor => self.shared.params_mut().collect(),
            Group::DomainExtractors => self
                .domain
                .iter_mut()
                .flatten()
                .flat_map(Mlp::params_mut)
                .collect(),
            Group::Classifier1 => self.c1.params_mut().collect(),
            Group::Classifier2 => self.c2.iter_mut().flat_map(Mlp::params_mut).collect(),
            Group::Discriminator => self.disc.iter_mut().flat_map(Mlp::params_mut).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, _, m)| m.len()).sum()
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p>, trainable: Trainable) -> BoundModel {
        BoundModel {
            shared: self.shared.bind(g, trainable.shared),
            domain: self
                .domain
                .iter()
                .map(|d| d.as_ref().map(|d| d.bind(g, trainable.domain)))
                .collect(),
            c1: self.c1.bind(g, trainable.c1),
            c2: self.c2.as_ref().map(|c| c.bind(g, trainable.c2)),
            disc: self.disc.as_ref().map(|d| d.bind(g, trainable.disc)),
            domain_dim: self.arch.domain_dim,
        }
    }

    fn check_domain(&self, domain: usize) -> Result<()> {
        if domain >= self.domain.len() {
            return Err(Error::Range {
                what: "domain",
                index: domain,
                len: self.domain.len(),
            });
        }
        Ok(())
    }

    /// Shared and domain-specific features of a dense batch. A domain without
    /// a private extractor (or `zero_domain`) yields an all-zero domain block.
    pub fn extract(&self, x: &Matrix, domain: usize, zero_domain: bool) -> Result<FeaturePair> {
        self.check_domain(domain)?;
        let shared = self.shared.forward(x)?;
        let domain = match (&self.domain[domain], zero_domain) {
            (Some(d), false) => d.forward(x)?,
            _ => Matrix::zeros(x.rows(), self.arch.domain_dim),
        };
        Ok(FeaturePair { shared, domain })
    }

    /// Class probabilities from classifier 1 or 2.
    pub fn classify(&self, features: &FeaturePair, which: Classifier) -> Result<Matrix> {
        let h = features.shared.concat_cols(&features.domain)?;
        match which {
            Classifier::First => self.c1.forward(&h),
            Classifier::Second => self
                .c2
                .as_ref()
                .ok_or_else(|| Error::Config("model has no second classifier".into()))?
                .forward(&h),
        }
    }

    pub fn discriminate(&self, shared: &Matrix) -> Result<Matrix> {
        self.disc
            .as_ref()
            .ok_or_else(|| Error::Config("model has no discriminator".into()))?
            .forward(shared)
    }

    /// Test-time prediction: the two classifiers' probabilities are averaged
    /// (a single-classifier model uses its only classifier).
    pub fn predict(&self, x: &Matrix, domain: usize, zero_domain: bool) -> Result<Prediction> {
        let features = self.extract(x, domain, zero_domain)?;
        let p1 = self.classify(&features, Classifier::First)?;
        let probs = match &self.c2 {
            Some(_) => {
                let p2 = self.classify(&features, Classifier::Second)?;
                average_probs(&p1, &p2)
            }
            None => p1,
        };
        Ok(Prediction::from_probs(probs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classifier {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePair {
    pub shared: Matrix,
    pub domain: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Matrix,
    pub labels: Vec<usize>,
}

impl Prediction {
    pub fn from_probs(probs: Matrix) -> Self {
        let labels = (0..probs.rows()).map(|r| argmax(probs.row(r))).collect();
        Self { probs, labels }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn average_probs(p1: &Matrix, p2: &Matrix) -> Matrix {
    p1.zip_map(p2, |a, b| 0.5 * (a + b))
}

/// A [`ModelParams`] bound onto a graph.
pub struct BoundModel {
    pub shared: BoundMlp,
    pub domain: Vec<Option<BoundMlp>>,
    pub c1: BoundMlp,
    pub c2: Option<BoundMlp>,
    pub disc: Option<BoundMlp>,
    domain_dim: usize,
}

/// Graph handles for one batch's extracted features.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub shared: Var,
    pub domain: Var,
}

impl BoundModel {
    /// Runs both extractors on `x`. A domain without a private extractor gets
    /// a constant zero block of the domain width.
    pub fn extract(&self, g: &mut Graph<'_>, x: Var, domain: usize) -> Result<FeatureVars> {
        let shared = self.shared.forward(g, x)?;
        let domain = match self.domain.get(domain) {
            Some(Some(d)) => d.forward(g, x)?,
            Some(None) => {
                let rows = g.shape(x).0;
                g.leaf(Matrix::zeros(rows, self.domain_dim), false)
            }
            None => {
                return Err(Error::Range {
                    what: "domain",
                    index: domain,
                    len: self.domain.len(),
                })
            }
        };
        Ok(FeatureVars { shared, domain })
    }

    /// Both classifiers' probabilities on concatenated features; the second is
    /// `None` when the model has no second classifier.
    pub fn classify(&self, g: &mut Graph<'_>, f: FeatureVars) -> Result<(Var, Option<Var>)> {
        let h = g.concat_cols(f.shared, f.domain)?;
        let p1 = self.c1.forward(g, h)?;
        let p2 = self.c2.as_ref().map(|c| c.forward(g, h)).transpose()?;
        Ok((p1, p2))
    }

    /// Moves one group's gradients out of the graph, ordered like
    /// [`ModelParams::group_params_mut`].
    pub fn take_group_grads(&self, g: &mut Graph<'_>, group: Group) -> Vec<Matrix> {
        let mlps: Vec<&BoundMlp> = match group {
            Group::SharedExtractor => vec![&self.shared],
            Group::DomainExtractors => self.domain.iter().flatten().collect(),
            Group::Classifier1 => vec![&self.c1],
            Group::Classifier2 => self.c2.iter().collect(),
            Group::Discriminator => self.disc.iter().collect(),
        };
        mlps.into_iter().flat_map(|m| m.take_grads(g)).collect()
    }

    pub fn discriminate(&self, g: &mut Graph<'_>, shared: Var) -> Result<Option<Var>> {
        self.disc.as_ref().map(|d| d.forward(g, shared)).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_arch() -> Architecture {
        Architecture {
            vocab_size: 30,
            extractor_hidden: vec![12, 10],
            shared_dim: 8,
            domain_dim: 4,
            c1_hidden: 8,
            c2_hidden: 4,
            disc_hidden: 8,
            init_gain: DEFAULT_INIT_GAIN,
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let arch = small_arch();
        let a = ModelParams::init(&arch, &Components::full(3), 11).unwrap();
        let b = ModelParams::init(&arch, &Components::full(3), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn classifiers_start_different() {
        for seed in [0, 1, 42, u64::MAX] {
            let mut arch = small_arch();
            arch.c2_hidden = arch.c1_hidden;
            let p = ModelParams::init(&arch, &Components::full(2), seed).unwrap();
            assert_ne!(Some(&p.c1), p.c2.as_ref());
        }
    }

    #[test]
    fn he_variance_on_wide_layer() {
        let spec = MlpSpec::new(1000, &[], 500, Activation::None);
        let mlp = Mlp::init(spec, HE_GAIN, &mut component_rng(5, 1)).unwrap();
        let w = &mlp.layers[0].weight;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / 1000.0;
        assert!((var - expected).abs() / expected < 0.2, "variance {var}");
        assert!(mlp.layers[0].bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let arch = small_arch();
        let p = ModelParams::init(&arch, &Components::full(2), 3).unwrap();
        let x = Matrix::zeros(4, arch.vocab_size);
        let f = p.extract(&x, 1, false).unwrap();
        assert_eq!(f.shared, Matrix::zeros(4, 8));
        assert_eq!(f.domain, Matrix::zeros(4, 4));
    }

    #[test]
    fn default_feature_widths() {
        let arch = Architecture {
            vocab_size: 50,
            ..Architecture::default()
        };
        let p = ModelParams::init(&arch, &Components::full(2), 3).unwrap();
        let x = Matrix::from_fn(3, 50, |i, j| if (i + j) % 7 == 0 { 1.0 } else { 0.0 });
        let f = p.extract(&x, 0, false).unwrap();
        assert_eq!(f.shared.shape(), (3, 128));
        assert_eq!(f.domain.shape(), (3, 64));
        assert!(f.shared.is_finite() && f.domain.is_finite());
        assert_eq!(p.c1.spec.input_dim, 192);
        assert_eq!(p.c1.spec.hidden_dims, vec![128]);
        assert_eq!(p.c2.as_ref().unwrap().spec.hidden_dims, vec![64]);
        assert_eq!(p.disc.as_ref().unwrap().spec.input_dim, 128);
    }

    #[test]
    fn bad_domain_is_range_error() {
        let p = ModelParams::init(&small_arch(), &Components::full(2), 3).unwrap();
        let x = Matrix::zeros(1, 30);
        assert!(matches!(p.extract(&x, 2, false), Err(Error::Range { .. })));
    }

    #[test]
    fn zero_weights_give_uniform_outputs() {
        let arch = small_arch();
        let mut p = ModelParams::init(&arch, &Components::full(4), 3).unwrap();
        for m in p.params_mut() {
            m.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let fp = FeaturePair {
            shared: Matrix::zeros(2, 8),
            domain: Matrix::zeros(2, 4),
        };
        let probs = p.classify(&fp, Classifier::First).unwrap();
        assert_eq!(probs.row(0), &[0.5, 0.5]);
        let d = p.discriminate(&fp.shared).unwrap();
        assert_eq!(d.shape(), (2, 4));
        assert!(d.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn groups_partition_parameters() {
        let p = ModelParams::init(&small_arch(), &Components::full(3), 3).unwrap();
        let all: Vec<*const Matrix> = p
            .named_params()
            .iter()
            .map(|(_, _, m)| *m as *const _)
            .collect();
        let unique: HashSet<_> = all.iter().copied().collect();
        assert_eq!(unique.len(), all.len());
        let mut seen = HashSet::new();
        for g in Group::ALL {
            for m in p.group_params(g) {
                assert!(seen.insert(m as *const Matrix), "parameter in two groups");
            }
        }
        assert_eq!(seen, unique);
    }

    #[test]
    fn argmax_ties_go_to_class_zero() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.3, 0.7]), 1);
        let p1 = Matrix::from_rows(&[&[0.9, 0.1]]);
        let p2 = Matrix::from_rows(&[&[0.5, 0.5]]);
        let avg = average_probs(&p1, &p2);
        assert!((avg.get(0, 0) - 0.7).abs() < 1e-15 && (avg.get(0, 1) - 0.3).abs() < 1e-15);
        assert_eq!(Prediction::from_probs(avg).labels, vec![0]);
        assert_eq!(average_probs(&p1, &p1), p1);
    }

    #[test]
    fn zero_domain_prediction_ignores_domain_extractors() {
        let arch = small_arch();
        let p = ModelParams::init(&arch, &Components::full(2), 3).unwrap();
        let mut q = p.clone();
        let mut rng = component_rng(99, 0);
        for d in q.domain.iter_mut().flatten() {
            *d = Mlp::init(d.spec.clone(), HE_GAIN, &mut rng).unwrap();
        }
        assert_ne!(p.domain, q.domain);
        let x = Matrix::from_fn(5, 30, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3);
        let a = p.predict(&x, 1, true).unwrap();
        let b = q.predict(&x, 1, true).unwrap();
        assert_eq!(a, b);
        let c = p.predict(&x, 1, false).unwrap();
        let d = q.predict(&x, 1, false).unwrap();
        assert_ne!(c.probs, d.probs);
    }
}
