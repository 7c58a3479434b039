//! Layered classifiers, parameter initialization, SGD and checkpoint files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense { inputs: usize, outputs: usize },
    Conv { in_ch: usize, out_ch: usize, kernel: usize, padding: usize },
    Relu,
    MaxPool2,
    Flatten,
}

impl Layer {
    fn describe(&self) -> String {
        match *self {
            Layer::Dense { inputs, outputs } => format!("dense({inputs},{outputs})"),
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                padding,
            } => format!("conv({in_ch},{out_ch},{kernel},p{padding})"),
            Layer::Relu => "relu".into(),
            Layer::MaxPool2 => "maxpool2".into(),
            Layer::Flatten => "flatten".into(),
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv { .. })
    }
}

/// Architecture of a classifier: an input shape (without the batch axis), a
/// layer stack and the number of output classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    num_classes: usize,
}

impl ModelSpec {
    /// Validates that the layer shapes compose and end in `[num_classes]`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, num_classes: usize) -> Result<Self> {
        let spec = ModelSpec {
            input_shape,
            layers,
            num_classes,
        };
        let out = spec.output_shape_after(spec.layers.len())?;
        if out != [num_classes] {
            return Err(Error::Spec(format!(
                "final output shape {out:?} does not match {num_classes} classes"
            )));
        }
        Ok(spec)
    }

    /// conv(1→16,4×4) − relu − conv(16→32,4×4) − relu − maxpool2 − flatten −
    /// dense(3872→100) − relu − dense(100→10).
    pub fn mnist_conv() -> Self {
        ModelSpec::new(
            vec![1, 28, 28],
            vec![
                Layer::Conv { in_ch: 1, out_ch: 16, kernel: 4, padding: 0 },
                Layer::Relu,
                Layer::Conv { in_ch: 16, out_ch: 32, kernel: 4, padding: 0 },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Flatten,
                Layer::Dense { inputs: 32 * 11 * 11, outputs: 100 },
                Layer::Relu,
                Layer::Dense { inputs: 100, outputs: 10 },
            ],
            10,
        )
        .expect("built-in architecture is consistent")
    }

    /// 784−256−256−10 perceptron on flattened 1×28×28 inputs.
    pub fn mnist_mlp() -> Self {
        let mut layers = vec![Layer::Flatten];
        layers.extend(Self::mlp_layers(784, &[256, 256], 10));
        ModelSpec::new(vec![1, 28, 28], layers, 10).expect("built-in architecture is consistent")
    }

    /// Fully connected network over a flat input of `input_dim` features.
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize) -> Result<Self> {
        ModelSpec::new(vec![input_dim], Self::mlp_layers(input_dim, hidden, num_classes), num_classes)
    }

    fn mlp_layers(input_dim: usize, hidden: &[usize], num_classes: usize) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(Layer::Dense { inputs: width, outputs: h });
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Dense { inputs: width, outputs: num_classes });
        layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn output_shape_after(&self, upto: usize) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Spec(format!("invalid input shape {shape:?}")));
        }
        for (i, layer) in self.layers.iter().take(upto).enumerate() {
            let bad = |why: &str| Error::Spec(format!("layer {i} ({}): {why}, input {shape:?}", layer.describe()));
            shape = match *layer {
                Layer::Dense { inputs, outputs } => {
                    if shape != [inputs] || outputs == 0 {
                        return Err(bad("expects a flat input of matching width"));
                    }
                    vec![outputs]
                }
                Layer::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    padding,
                } => {
                    if shape.len() != 3 || shape[0] != in_ch || kernel == 0 || out_ch == 0 {
                        return Err(bad("expects CxHxW input with matching channels"));
                    }
                    if shape[1] + 2 * padding < kernel || shape[2] + 2 * padding < kernel {
                        return Err(bad("kernel larger than padded input"));
                    }
                    vec![
                        out_ch,
                        shape[1] + 2 * padding - kernel + 1,
                        shape[2] + 2 * padding - kernel + 1,
                    ]
                }
                Layer::Relu => shape,
                Layer::MaxPool2 => {
                    if shape.len() != 3 || shape[1] < 2 || shape[2] < 2 {
                        return Err(bad("expects CxHxW input of at least 2x2"));
                    }
                    vec![shape[0], shape[1] / 2, shape[2] / 2]
                }
                Layer::Flatten => vec![shape.iter().product()],
            };
        }
        Ok(shape)
    }

    /// Canonical one-line description; two specs are equal iff their descriptions are.
    pub fn describe(&self) -> String {
        let mut s = String::from("input=");
        s.push_str(
            &self
                .input_shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x"),
        );
        for layer in &self.layers {
            let _ = write!(s, ";{}", layer.describe());
        }
        let _ = write!(s, ";classes={}", self.num_classes);
        s
    }

    /// 64-bit FNV-1a of [`describe`](Self::describe); binds parameters to this spec.
    pub fn hash(&self) -> u64 {
        self.describe().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    /// `(name, shape, fan_in)` for every parameter, in order.
    fn param_layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense { inputs, outputs } => {
                    out.push((format!("layer{i}.weight"), vec![outputs, inputs], inputs));
                    out.push((format!("layer{i}.bias"), vec![outputs], inputs));
                }
                Layer::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let fan_in = in_ch * kernel * kernel;
                    out.push((format!("layer{i}.weight"), vec![out_ch, in_ch, kernel, kernel], fan_in));
                    out.push((format!("layer{i}.bias"), vec![out_ch], fan_in));
                }
                _ => {}
            }
        }
        out
    }
}

/// Ordered named parameter tensors bound to a [`ModelSpec`] by its hash.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor)>,
    spec_hash: u64,
}

pub type GradMap = HashMap<String, Tensor>;

impl ModelParams {
    pub fn new(entries: Vec<(String, Tensor)>, spec_hash: u64) -> Self {
        ModelParams { entries, spec_hash }
    }

    pub fn spec_hash(&self) -> u64 {
        self.spec_hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks names and shapes against `spec` as well as the stored hash.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.spec_hash != spec.hash() {
            return Err(Error::SpecHashMismatch {
                expected: spec.hash(),
                found: self.spec_hash,
            });
        }
        let layout = spec.param_layout();
        if layout.len() != self.entries.len() {
            return Err(Error::Spec(format!(
                "expected {} parameter entries, found {}",
                layout.len(),
                self.entries.len()
            )));
        }
        for ((name, shape, _), (n, t)) in layout.iter().zip(&self.entries) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Spec(format!(
                    "parameter {n} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"RLABCKPT";
    const VERSION: u32 = 1;
    const HASH_ENTRY: &'static str = "@spec_hash";

    /// Serializes to the checkpoint format (little-endian throughout).
    ///
    /// The spec hash travels as an extra `@spec_hash` entry holding its high
    /// and low 32-bit halves, which `f64` represents exactly.
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let hash_entry = Tensor::vector(&[(self.spec_hash >> 32) as f64, (self.spec_hash & 0xffff_ffff) as f64]);
        let all = self
            .entries
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .chain(std::iter::once((Self::HASH_ENTRY, &hash_entry)));
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&((self.entries.len() + 1) as u32).to_le_bytes())?;
        for (name, t) in all {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[t.rank() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        fn take<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
            Ok(buf)
        }
        let magic: [u8; 8] = take(&mut r, "magic")?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = u32::from_le_bytes(take(&mut r, "version")?);
        if version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(&mut r, "entry count")?);
        let mut entries = Vec::with_capacity(count as usize);
        let mut spec_hash = None;
        for _ in 0..count {
            let len = u16::from_le_bytes(take(&mut r, "name length")?) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)
                .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
            let rank = take::<1>(&mut r, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut r, "dimension")?) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(take(&mut r, &name)?));
            }
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if name == Self::HASH_ENTRY {
                let d = t.data();
                if d.len() != 2 {
                    return Err(Error::Checkpoint("malformed spec hash entry".into()));
                }
                spec_hash = Some(((d[0] as u64) << 32) | d[1] as u64);
            } else {
                entries.push((name, t));
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        let spec_hash = spec_hash.ok_or_else(|| Error::Checkpoint("missing spec hash entry".into()))?;
        Ok(ModelParams { entries, spec_hash })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

/// A spec together with parameters satisfying it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ModelParams,
}

impl Model {
    pub fn new(spec: ModelSpec, params: ModelParams) -> Result<Self> {
        params.validate(&spec)?;
        Ok(Model { spec, params })
    }

    /// He initialization: weights `N(0, 2/fan_in)`, biases zero. Layer `i`
    /// draws from its own keyed stream, so the result depends only on `seed`.
    pub fn init(spec: ModelSpec, seed: u64) -> Self {
        let mut entries = Vec::new();
        for (k, (name, shape, fan_in)) in spec.param_layout().into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let std = (2.0 / fan_in as f64).sqrt();
                let mut rng = StreamKey::new(seed, Domain::Init).batch(k as u64).rng();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect::<Vec<f64>>()
            };
            entries.push((name, Tensor::from_parts(shape, data)));
        }
        let params = ModelParams::new(entries, spec.hash());
        Model { spec, params }
    }

    /// Every parameter set to zero.
    pub fn zeros(spec: ModelSpec) -> Self {
        let entries = spec
            .param_layout()
            .into_iter()
            .map(|(name, shape, _)| (name, Tensor::zeros(&shape)))
            .collect();
        let params = ModelParams::new(entries, spec.hash());
        Model { spec, params }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Records the parameters as leaves, differentiable when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect()
    }

    /// Logits `[B, classes]` for a batch `x` of shape `[B, ...input_shape]`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let xs = tape.value(x).shape();
        if xs.len() != self.spec.input_shape.len() + 1 || xs[1..] != self.spec.input_shape[..] {
            return Err(Error::shape(
                "forward",
                format!("batch {xs:?} vs model input {:?}", self.spec.input_shape),
            ));
        }
        let mut h = x;
        let mut p = params.iter();
        for layer in &self.spec.layers {
            h = match *layer {
                Layer::Dense { .. } => {
                    let (w, b) = (p.next().expect("weight var"), p.next().expect("bias var"));
                    let z = tape.matmul(h, *w, true)?;
                    tape.bias_add(z, *b)?
                }
                Layer::Conv { padding, .. } => {
                    let (w, b) = (p.next().expect("weight var"), p.next().expect("bias var"));
                    let z = tape.conv2d(h, *w, padding)?;
                    tape.bias_add(z, *b)?
                }
                Layer::Relu => tape.relu(h)?,
                Layer::MaxPool2 => tape.maxpool2(h)?,
                Layer::Flatten => tape.flatten(h)?,
            };
        }
        debug_assert!(self.spec.layers.iter().filter(|l| l.has_params()).count() * 2 == params.len());
        Ok(h)
    }

    /// Logits without recording gradients.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let out = self.forward(&mut tape, &params, xv)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }

    /// Collects parameter gradients from a backward sweep into a name-keyed map.
    pub fn collect_grads(&self, grads: &mut Gradients, params: &[Var]) -> GradMap {
        self.params
            .entries
            .iter()
            .zip(params)
            .filter_map(|((name, _), v)| grads.take(*v).map(|g| (name.clone(), g)))
            .collect()
    }
}

/// SGD with heavy-ball momentum: `v ← μ·v + g; p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<String, Tensor>,
    updates: u64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be >= 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: HashMap::new(),
            updates: 0,
        })
    }

    /// Number of parameter updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &GradMap) -> Result<()> {
        if let Some((name, _)) = params.entries.iter().find(|(n, _)| !grads.contains_key(n)) {
            return Err(Error::MissingGradient(name.clone()));
        }
        for (name, p) in params.entries.iter_mut() {
            let g = &grads[name];
            if g.shape() != p.shape() {
                return Err(Error::shape("sgd_step", format!("{name}: {:?} vs {:?}", g.shape(), p.shape())));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        self.updates += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dense() -> ModelSpec {
        ModelSpec::new(vec![2], vec![Layer::Dense { inputs: 2, outputs: 2 }], 2).unwrap()
    }

    #[test]
    fn default_architectures_compose() {
        let conv = ModelSpec::mnist_conv();
        assert_eq!(conv.param_layout().len(), 8);
        let mlp = ModelSpec::mnist_mlp();
        assert_eq!(mlp.param_layout().len(), 6);
        assert_ne!(conv.hash(), mlp.hash());
    }

    #[test]
    fn spec_rejects_inconsistent_layers() {
        let err = ModelSpec::new(vec![3], vec![Layer::Dense { inputs: 2, outputs: 2 }], 2).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        assert!(ModelSpec::new(vec![2], vec![Layer::Dense { inputs: 2, outputs: 3 }], 2).is_err());
        assert!(ModelSpec::new(vec![4], vec![Layer::MaxPool2], 4).is_err());
    }

    #[test]
    fn init_is_he_scaled_and_seeded() {
        let spec = ModelSpec::new(vec![4], vec![Layer::Dense { inputs: 4, outputs: 2 }], 2).unwrap();
        let a = Model::init(spec.clone(), 11);
        let b = Model::init(spec.clone(), 11);
        let c = Model::init(spec, 12);
        assert_eq!(a, b);
        assert_ne!(a.params().get("layer0.weight"), c.params().get("layer0.weight"));
        assert_eq!(a.params().get("layer0.bias").unwrap().data(), &[0.0, 0.0]);

        // std over a large layer is close to sqrt(2 / fan_in) = sqrt(0.5)
        let big = ModelSpec::new(vec![4], vec![Layer::Dense { inputs: 4, outputs: 5000 }], 5000).unwrap();
        let w = Model::init(big, 3).params().get("layer0.weight").unwrap().clone();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 0.5f64.sqrt()).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let m = Model::zeros(ModelSpec::mnist_mlp());
        let x = Tensor::full(&[3, 1, 28, 28], 0.7);
        assert!(m.logits(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_logits_are_weight_column_plus_bias() {
        let spec = tiny_dense();
        let params = ModelParams::new(
            vec![
                ("layer0.weight".into(), Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]])),
                ("layer0.bias".into(), Tensor::vector(&[0.5, -0.5])),
            ],
            spec.hash(),
        );
        let m = Model::new(spec, params).unwrap();
        let z = m.logits(&Tensor::matrix(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(z.data(), &[1.5, 2.5]);
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let m = Model::init(tiny_dense(), 0);
        assert!(m.logits(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn sgd_examples() {
        let spec = ModelSpec::new(vec![1], vec![Layer::Dense { inputs: 1, outputs: 1 }], 1).unwrap();
        let mut m = Model::zeros(spec);
        m.params_mut().get_mut("layer0.weight").unwrap().data_mut()[0] = 1.0;
        let grads: GradMap = [
            ("layer0.weight".to_string(), Tensor::matrix(&[&[2.0]])),
            ("layer0.bias".to_string(), Tensor::vector(&[0.0])),
        ]
        .into();
        let mut sgd = Sgd::new(0.1, 0.0).unwrap();
        sgd.step(m.params_mut(), &grads).unwrap();
        assert!((m.params().get("layer0.weight").unwrap().item() - 0.8).abs() < 1e-15);
        assert_eq!(m.params().get("layer0.bias").unwrap().item(), 0.0);

        // momentum recurrence: p0 = 0, g = 1, lr = 1, μ = 0.9 -> -1, -2.9
        let mut m = Model::zeros(m.spec().clone());
        let ones: GradMap = [
            ("layer0.weight".to_string(), Tensor::matrix(&[&[1.0]])),
            ("layer0.bias".to_string(), Tensor::vector(&[1.0])),
        ]
        .into();
        let mut sgd = Sgd::new(1.0, 0.9).unwrap();
        sgd.step(m.params_mut(), &ones).unwrap();
        assert_eq!(m.params().get("layer0.weight").unwrap().item(), -1.0);
        sgd.step(m.params_mut(), &ones).unwrap();
        assert!((m.params().get("layer0.weight").unwrap().item() + 2.9).abs() < 1e-15);
        assert_eq!(sgd.updates(), 2);
    }

    #[test]
    fn sgd_rejects_missing_gradient_and_bad_hyperparameters() {
        let mut m = Model::init(tiny_dense(), 0);
        let partial: GradMap = [("layer0.weight".to_string(), Tensor::zeros(&[2, 2]))].into();
        let err = Sgd::new(0.1, 0.0).unwrap().step(m.params_mut(), &partial).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "layer0.bias"));
        assert!(Sgd::new(0.1, 1.0).is_err());
        assert!(Sgd::new(-0.1, 0.0).is_err());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let m = Model::init(ModelSpec::mnist_mlp(), 5);
        let mut buf = Vec::new();
        m.params().write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"RLABCKPT");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 7);
        let back = ModelParams::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(&back, m.params());

        assert!(ModelParams::read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(ModelParams::read_checkpoint(bad.as_slice()).is_err());

        let other = ModelSpec::mnist_conv();
        assert!(matches!(back.validate(&other), Err(Error::SpecHashMismatch { .. })));
    }
}
