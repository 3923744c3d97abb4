//! The trainable network: MLP feature extractor, two projection heads
//! (Euclidean and hyperbolic), and a growing linear classifier.

pub mod checkpoint;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Layer widths and nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden widths of the backbone, before the feature layer.
    pub hidden: Vec<usize>,
    /// Feature width `D`.
    pub feature_dim: usize,
    /// Projection width `d` of both heads (also their hidden width).
    pub proj_dim: usize,
    pub activation: Activation,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            feature_dim: 32,
            proj_dim: 16,
            activation: Activation::Relu,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.proj_dim == 0 {
            return Err(invalid("layer widths must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        if self.num_classes == 0 {
            return Err(invalid("classifier needs at least one class"));
        }
        Ok(())
    }
}

/// Affine map `x W + b` with `W: [in x out]`, `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Tensor::from_parts(vec![fan_in, fan_out], w),
            bias: Tensor::from_parts(vec![fan_out], b),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn bind(&self, tape: &mut Tape, trainable: bool, params: &mut Vec<Var>) -> BoundLinear {
        let (weight, bias) = if trainable {
            (tape.leaf(self.weight.clone()), tape.leaf(self.bias.clone()))
        } else {
            (tape.constant(self.weight.clone()), tape.constant(self.bias.clone()))
        };
        params.push(weight);
        params.push(bias);
        BoundLinear { weight, bias }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let in_dim = tape.value(self.weight).rows();
        let (_, cols) = tape.value(x).dims2()?;
        if cols != in_dim {
            return Err(Error::ShapeMismatch {
                op: "linear",
                detail: format!("input width {cols}, layer expects {in_dim}"),
            });
        }
        let y = tape.matmul(x, self.weight)?;
        tape.add(y, self.bias)
    }
}

/// Stack of affine layers with a nonlinearity between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    /// Whether the nonlinearity is also applied after the last layer.
    pub activate_output: bool,
}

impl Mlp {
    fn init(widths: &[usize], activation: Activation, activate_output: bool, rng: &mut impl Rng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers, activation, activate_output }
    }

    fn bind(&self, tape: &mut Tape, trainable: bool, params: &mut Vec<Var>) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable, params)).collect(),
            activation: self.activation,
            activate_output: self.activate_output,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<BoundLinear>,
    activation: Activation,
    activate_output: bool,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last || self.activate_output {
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    HeadE,
    HeadH,
    Classifier,
}

impl ParamGroup {
    pub fn is_head(self) -> bool {
        matches!(self, ParamGroup::HeadE | ParamGroup::HeadH)
    }
}

/// Feature extractor, projection heads `g_e`/`g_h` and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct L3Model {
    arch: Architecture,
    backbone: Mlp,
    head_e: Mlp,
    head_h: Mlp,
    classifier: Linear,
    rng_seed: u64,
}

impl L3Model {
    pub fn new(arch: Architecture, rng_seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut widths = vec![arch.input_dim];
        widths.extend(&arch.hidden);
        widths.push(arch.feature_dim);
        let backbone = Mlp::init(&widths, arch.activation, true, &mut rng);
        let head_widths = [arch.feature_dim, arch.proj_dim, arch.proj_dim];
        let head_e = Mlp::init(&head_widths, Activation::Relu, false, &mut rng);
        let head_h = Mlp::init(&head_widths, Activation::Relu, false, &mut rng);
        let classifier = Linear::init(arch.feature_dim, arch.num_classes, &mut rng);
        Ok(Self { arch, backbone, head_e, head_h, classifier, rng_seed })
    }

    /// Rebuilds a model from parameter arrays in [`L3Model::parameters`] order.
    pub fn from_parameters(arch: Architecture, rng_seed: u64, params: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::new(arch, rng_seed)?;
        let expected: Vec<Vec<usize>> = model.parameters().iter().map(|t| t.shape().to_vec()).collect();
        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "architecture has {} parameter arrays, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((slot, shape), p) in model.parameters_mut().into_iter().zip(&expected).zip(params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Format(format!("parameter shape {:?}, expected {:?}", p.shape(), shape)));
            }
            *slot = p;
        }
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn backbone(&self) -> &Mlp {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut Mlp {
        &mut self.backbone
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Linear {
        &mut self.classifier
    }

    /// All parameter arrays in declared order: backbone layers, `g_e`, `g_h`,
    /// classifier; weight before bias within each layer.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for mlp in [&self.backbone, &self.head_e, &self.head_h] {
            for l in &mlp.layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }

    /// Owner of each entry of [`L3Model::parameters`].
    pub fn parameter_groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::new();
        for (mlp, g) in [
            (&self.backbone, ParamGroup::Backbone),
            (&self.head_e, ParamGroup::HeadE),
            (&self.head_h, ParamGroup::HeadH),
        ] {
            out.extend(std::iter::repeat_n(g, 2 * mlp.layers.len()));
        }
        out.extend([ParamGroup::Classifier; 2]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for mlp in [&mut self.backbone, &mut self.head_e, &mut self.head_h] {
            for l in &mut mlp.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.parameters() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Places every parameter on `tape`, tracked when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut params = Vec::new();
        let backbone = self.backbone.bind(tape, trainable, &mut params);
        let head_e = self.head_e.bind(tape, trainable, &mut params);
        let head_h = self.head_h.bind(tape, trainable, &mut params);
        let classifier = self.classifier.bind(tape, trainable, &mut params);
        BoundModel { backbone, head_e, head_h, classifier, params }
    }

    fn eval(&self, x: &Tensor, f: impl FnOnce(&mut Tape, &BoundModel, Var) -> Result<Var>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = f(&mut tape, &bound, xv)?;
        Ok(tape.value(out).clone())
    }

    /// Untracked `h_feat(X)`, `[B x D]`.
    pub fn forward_features(&self, x: &Tensor) -> Result<Tensor> {
        self.eval(x, |t, m, x| m.features(t, x))
    }

    /// Untracked classifier logits, `[B x C]`.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.eval(x, |t, m, x| {
            let f = m.features(t, x)?;
            m.logits(t, f)
        })
    }

    /// Untracked `g_e` applied to features.
    pub fn project_e(&self, feats: &Tensor) -> Result<Tensor> {
        self.eval(feats, |t, m, f| m.project_e(t, f))
    }

    /// Untracked `g_h` applied to features (tangent vectors at the origin).
    pub fn project_h(&self, feats: &Tensor) -> Result<Tensor> {
        self.eval(feats, |t, m, f| m.project_h(t, f))
    }

    /// Grows the classifier to `new_class_count` outputs. Existing columns
    /// are kept bit for bit; new ones are drawn from a stream keyed by the
    /// run seed and the new width.
    pub fn expand_classifier(&mut self, new_class_count: usize) -> Result<()> {
        let old = self.num_classes();
        if new_class_count <= old {
            return Err(invalid(format!(
                "classifier can only grow: {old} -> {new_class_count}"
            )));
        }
        let d = self.arch.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(new_class_count as u64);
        let fresh = Linear::init(d, new_class_count - old, &mut rng);

        let mut w = Vec::with_capacity(d * new_class_count);
        for i in 0..d {
            w.extend_from_slice(self.classifier.weight.row(i));
            w.extend_from_slice(fresh.weight.row(i));
        }
        let mut b = self.classifier.bias.data().to_vec();
        b.extend_from_slice(fresh.bias.data());
        self.classifier = Linear {
            weight: Tensor::from_parts(vec![d, new_class_count], w),
            bias: Tensor::from_parts(vec![new_class_count], b),
        };
        self.arch.num_classes = new_class_count;
        Ok(())
    }
}

/// An [`L3Model`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    backbone: BoundMlp,
    head_e: BoundMlp,
    head_h: BoundMlp,
    classifier: BoundLinear,
    params: Vec<Var>,
}

impl BoundModel {
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.backbone.forward(tape, x)
    }

    pub fn logits(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.classifier.forward(tape, features)
    }

    pub fn project_e(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.head_e.forward(tape, features)
    }

    pub fn project_h(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.head_h.forward(tape, features)
    }

    /// Parameter handles in [`L3Model::parameters`] order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }
}

/// Frozen copy of a model; evaluation through it never tracks gradients.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    model: Arc<L3Model>,
}

impl ModelSnapshot {
    pub fn capture(model: &L3Model) -> Self {
        Self { model: Arc::new(model.clone()) }
    }

    pub fn model(&self) -> &L3Model {
        &self.model
    }

    /// A trainable copy initialised from the snapshot.
    pub fn restore(&self) -> L3Model {
        (*self.model).clone()
    }

    pub fn forward_features(&self, x: &Tensor) -> Result<Tensor> {
        self.model.forward_features(x)
    }

    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.model.forward_logits(x)
    }

    pub fn fingerprint(&self) -> u64 {
        self.model.fingerprint()
    }
}

pub fn snapshot(model: &L3Model) -> ModelSnapshot {
    ModelSnapshot::capture(model)
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, cols) = tape.value(logits).dims2()?;
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("{} labels for {} rows", labels.len(), rows),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(invalid(format!("label {bad} out of range for {cols} classes")));
    }
    let lse = tape.logsumexp_rows(logits)?;
    let picked = tape.gather_cols(logits, labels)?;
    let nll = tape.sub(lse, picked)?;
    tape.mean(nll)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture {
            input_dim: 4,
            hidden: vec![6],
            feature_dim: 5,
            proj_dim: 3,
            activation: Activation::Tanh,
            num_classes: 2,
        }
    }

    fn input(rows: usize) -> Tensor {
        let data = (0..rows * 4).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        Tensor::matrix(rows, 4, data).unwrap()
    }

    #[test]
    fn zero_backbone_gives_zero_features() {
        let mut m = L3Model::new(tiny(), 1).unwrap();
        m.backbone.activation = Activation::Identity;
        for l in &mut m.backbone.layers {
            *l = Linear::zeros(l.in_dim(), l.out_dim());
        }
        let f = m.forward_features(&input(3)).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_matches_row_in_batch() {
        let m = L3Model::new(tiny(), 3).unwrap();
        let batch = input(3);
        let one = batch.select_rows(&[1]).unwrap();
        let fb = m.forward_features(&batch).unwrap();
        let f1 = m.forward_features(&one).unwrap();
        assert_eq!(fb.row(1), f1.row(0));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = L3Model::new(tiny(), 9).unwrap();
        let b = L3Model::new(tiny(), 9).unwrap();
        assert_eq!(a.forward_features(&input(4)).unwrap(), b.forward_features(&input(4)).unwrap());
        assert_ne!(a.fingerprint(), L3Model::new(tiny(), 10).unwrap().fingerprint());
    }

    #[test]
    fn single_class_logit_shape() {
        let mut arch = tiny();
        arch.num_classes = 1;
        let m = L3Model::new(arch, 0).unwrap();
        assert_eq!(m.forward_logits(&input(5)).unwrap().shape(), &[5, 1]);
    }

    #[test]
    fn zero_classifier_emits_bias() {
        let mut m = L3Model::new(tiny(), 0).unwrap();
        m.classifier.weight = Tensor::zeros(vec![5, 2]);
        m.classifier.bias = Tensor::vector(vec![0.25, -1.5]).unwrap();
        let l = m.forward_logits(&input(3)).unwrap();
        for r in l.iter_rows() {
            assert_eq!(r, &[0.25, -1.5]);
        }
    }

    #[test]
    fn logits_compose_classifier_and_features() {
        let m = L3Model::new(tiny(), 4).unwrap();
        let x = input(3);
        let f = m.forward_features(&x).unwrap();
        let manual = crate::numerics::matmul(&f, &m.classifier.weight).unwrap();
        let logits = m.forward_logits(&x).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let v = manual.data()[i * 2 + j] + m.classifier.bias.data()[j];
                assert!((logits.data()[i * 2 + j] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heads_share_no_parameters() {
        let m = L3Model::new(tiny(), 2).unwrap();
        assert_ne!(m.head_e, m.head_h);
    }

    #[test]
    fn expand_preserves_old_columns() {
        let mut m = L3Model::new(tiny(), 5).unwrap();
        let x = input(4);
        let before = m.forward_logits(&x).unwrap();
        m.expand_classifier(4).unwrap();
        m.expand_classifier(8).unwrap();
        let after = m.forward_logits(&x).unwrap();
        assert_eq!(after.shape(), &[4, 8]);
        for i in 0..4 {
            assert_eq!(&after.row(i)[..2], before.row(i));
        }
        assert!(m.expand_classifier(8).is_err());
        assert!(m.expand_classifier(3).is_err());
    }

    #[test]
    fn expansion_is_deterministic() {
        let mut a = L3Model::new(tiny(), 5).unwrap();
        let mut b = L3Model::new(tiny(), 5).unwrap();
        a.expand_classifier(6).unwrap();
        b.expand_classifier(6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::filled(vec![3, 4], 0.7));
        let ce = cross_entropy(&mut tape, l, &[0, 3, 2]).unwrap();
        assert!((tape.value(ce).item().unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((4f64.ln() - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_cross_entropy_is_zero() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::matrix(1, 3, vec![0.0, 1000.0, 0.0]).unwrap());
        let ce = cross_entropy(&mut tape, l, &[1]).unwrap();
        assert!(tape.value(ce).item().unwrap().abs() < 1e-12);
        let bad = cross_entropy(&mut tape, l, &[3]);
        assert!(bad.is_err());
    }

    #[test]
    fn from_parameters_round_trip() {
        let m = L3Model::new(tiny(), 8).unwrap();
        let params = m.parameters().into_iter().cloned().collect();
        let r = L3Model::from_parameters(tiny(), 8, params).unwrap();
        assert_eq!(m, r);
    }
}
