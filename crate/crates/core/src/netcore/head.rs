//! Trainable classifier head with exact reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetError, Tensor};
use crate::rng::{derive_seed, unit_uniform};

/// Fully-connected layer; weights are `out x in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    MaxPool { kernel: usize, stride: usize },
    Flatten,
    Linear(Linear),
    Relu,
    Dropout { p: f32 },
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "linear",
            Layer::Relu => "relu",
            Layer::Dropout { .. } => "dropout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

enum Aux {
    None,
    PoolArgmax(Vec<usize>),
    DropScale(Vec<f32>),
}

/// Intermediates captured by a forward pass, consumed by backward.
pub struct ForwardCache {
    version: u64,
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
}

/// Per-layer parameter gradients (entries only for linear layers) plus the
/// gradient with respect to the input feature map.
pub struct HeadGradients {
    pub linear: Vec<Option<(Vec<f32>, Vec<f32>)>>,
    pub input: Tensor,
}

/// Layer stack mapping a feature map to class logits.
#[derive(Debug, Clone)]
pub struct Head {
    layers: Vec<Layer>,
    classes: Vec<String>,
    input_shape: [usize; 3],
    version: u64,
}

impl Head {
    /// Validate layer compatibility for `input_shape` and that the final
    /// linear layer emits one logit per class.
    pub fn new(
        layers: Vec<Layer>,
        classes: Vec<String>,
        input_shape: [usize; 3],
    ) -> Result<Self, NetError> {
        let mut shape: Vec<usize> = input_shape.to_vec();
        let mut last_linear_out = None;
        for (i, layer) in layers.iter().enumerate() {
            shape = output_shape(layer, &shape).ok_or_else(|| NetError::IncompatibleLayer {
                layer: i,
                kind: layer.kind().into(),
                shape: shape.clone(),
            })?;
            if let Layer::Linear(l) = layer {
                last_linear_out = Some(l.out_dim);
            }
        }
        match last_linear_out {
            None => return Err(NetError::NoLinearLayer),
            Some(out) if out != classes.len() => {
                return Err(NetError::ClassCountMismatch {
                    out,
                    classes: classes.len(),
                })
            }
            _ => {}
        }
        Ok(Self {
            layers,
            classes,
            input_shape,
            version: 0,
        })
    }

    /// The standard head used behind a VGG16-style 512x14x14 split point:
    /// maxpool(2,2) -> flatten -> 4096 -> relu -> dropout(0.5) -> 4096 ->
    /// relu -> dropout(0.5) -> classes.
    pub fn vgg16_style(input_shape: [usize; 3], classes: Vec<String>) -> Result<Self, NetError> {
        let [k, h, w] = input_shape;
        let flat = k * (h / 2) * (w / 2);
        let n = classes.len();
        Head::new(
            vec![
                Layer::MaxPool { kernel: 2, stride: 2 },
                Layer::Flatten,
                Layer::Linear(Linear::zeros(flat, 4096)),
                Layer::Relu,
                Layer::Dropout { p: 0.5 },
                Layer::Linear(Linear::zeros(4096, 4096)),
                Layer::Relu,
                Layer::Dropout { p: 0.5 },
                Layer::Linear(Linear::zeros(4096, n)),
            ],
            classes,
            input_shape,
        )
    }

    /// Compact head for small feature maps: maxpool(2,2) -> flatten ->
    /// hidden -> relu -> dropout(p) -> classes.
    pub fn compact(
        input_shape: [usize; 3],
        hidden: usize,
        dropout: f32,
        classes: Vec<String>,
    ) -> Result<Self, NetError> {
        let [k, h, w] = input_shape;
        let flat = k * (h / 2) * (w / 2);
        let n = classes.len();
        Head::new(
            vec![
                Layer::MaxPool { kernel: 2, stride: 2 },
                Layer::Flatten,
                Layer::Linear(Linear::zeros(flat, hidden)),
                Layer::Relu,
                Layer::Dropout { p: dropout },
                Layer::Linear(Linear::zeros(hidden, n)),
            ],
            classes,
            input_shape,
        )
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// He-uniform initialization of every linear layer, seeded.
    pub fn init_params(&mut self, seed: u64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Linear(l) = layer {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", i as u64));
                let bound = (6.0 / l.in_dim as f64).sqrt() as f32;
                for w in l.weight.iter_mut() {
                    *w = rng.gen_range(-bound..=bound);
                }
                for b in l.bias.iter_mut() {
                    *b = 0.0;
                }
            }
        }
        self.version += 1;
    }

    /// Direct mutable access for optimizers; bumps the version so stale
    /// caches are rejected.
    pub fn linear_layers_mut(&mut self) -> Vec<&mut Linear> {
        self.version += 1;
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Linear(lin) => Some(lin),
                _ => None,
            })
            .collect()
    }

    pub fn forward(&self, features: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache), NetError> {
        features.expect_shape(&self.input_shape)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut x = features.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, a) = forward_layer(layer, &x, mode, i)?;
            inputs.push(x);
            aux.push(a);
            x = y;
        }
        Ok((
            x,
            ForwardCache {
                version: self.version,
                inputs,
                aux,
            },
        ))
    }

    /// Exact reverse-mode gradients through the cached forward pass.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &Tensor,
    ) -> Result<HeadGradients, NetError> {
        if cache.version != self.version {
            return Err(NetError::StaleCache);
        }
        let mut grads: Vec<Option<(Vec<f32>, Vec<f32>)>> = vec![None; self.layers.len()];
        let mut d = d_logits.clone();
        for i in (0..self.layers.len()).rev() {
            d = backward_layer(
                &self.layers[i],
                &cache.inputs[i],
                &cache.aux[i],
                &d,
                &mut grads[i],
            )?;
        }
        Ok(HeadGradients {
            linear: grads,
            input: d,
        })
    }
}

fn output_shape(layer: &Layer, input: &[usize]) -> Option<Vec<usize>> {
    match layer {
        Layer::MaxPool { kernel, stride } => {
            if input.len() != 3 || *kernel == 0 || *stride == 0 {
                return None;
            }
            let (c, h, w) = (input[0], input[1], input[2]);
            if h < *kernel || w < *kernel {
                return None;
            }
            Some(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
        }
        Layer::Flatten => Some(vec![input.iter().product()]),
        Layer::Linear(l) => {
            if input.len() == 1 && input[0] == l.in_dim {
                Some(vec![l.out_dim])
            } else {
                None
            }
        }
        Layer::Relu => Some(input.to_vec()),
        Layer::Dropout { p } => {
            if (0.0..1.0).contains(p) {
                Some(input.to_vec())
            } else {
                None
            }
        }
    }
}

fn forward_layer(
    layer: &Layer,
    x: &Tensor,
    mode: Mode,
    layer_idx: usize,
) -> Result<(Tensor, Aux), NetError> {
    let shape = output_shape(layer, x.shape()).ok_or_else(|| NetError::IncompatibleLayer {
        layer: layer_idx,
        kind: layer.kind().into(),
        shape: x.shape().to_vec(),
    })?;
    match layer {
        Layer::MaxPool { kernel, stride } => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (oh, ow) = (shape[1], shape[2]);
            let mut out = vec![0.0f32; c * oh * ow];
            let mut argmax = vec![0usize; c * oh * ow];
            let data = x.data();
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                let y = oy * stride + ky;
                                let xx = ox * stride + kx;
                                let idx = ch * h * w + y * w + xx;
                                // Strict > keeps the first index on ties.
                                if data[idx] > best {
                                    best = data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ch * oh * ow + oy * ow + ox;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
            Ok((Tensor::new(shape, out)?, Aux::PoolArgmax(argmax)))
        }
        Layer::Flatten => Ok((x.reshaped(shape)?, Aux::None)),
        Layer::Linear(l) => {
            let mut out = vec![0.0f32; l.out_dim];
            let input = x.data();
            for (o, out_v) in out.iter_mut().enumerate() {
                let row = &l.weight[o * l.in_dim..(o + 1) * l.in_dim];
                let mut acc = f64::from(l.bias[o]);
                for (w, v) in row.iter().zip(input) {
                    acc += f64::from(*w) * f64::from(*v);
                }
                *out_v = acc as f32;
            }
            Ok((Tensor::new(shape, out)?, Aux::None))
        }
        Layer::Relu => {
            let out: Vec<f32> = x.data().iter().map(|v| v.max(0.0)).collect();
            Ok((Tensor::new(shape, out)?, Aux::None))
        }
        Layer::Dropout { p } => match mode {
            Mode::Eval => Ok((x.clone(), Aux::None)),
            Mode::Train { dropout_seed } => {
                let seed = derive_seed(dropout_seed, "dropout", layer_idx as u64);
                let keep_scale = 1.0 / (1.0 - *p);
                let scales: Vec<f32> = (0..x.len())
                    .map(|i| {
                        if unit_uniform(seed, i as u64) < f64::from(*p) {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                    .collect();
                let out: Vec<f32> = x
                    .data()
                    .iter()
                    .zip(&scales)
                    .map(|(v, s)| v * s)
                    .collect();
                Ok((Tensor::new(shape, out)?, Aux::DropScale(scales)))
            }
        },
    }
}

fn backward_layer(
    layer: &Layer,
    input: &Tensor,
    aux: &Aux,
    d_out: &Tensor,
    grad_slot: &mut Option<(Vec<f32>, Vec<f32>)>,
) -> Result<Tensor, NetError> {
    match layer {
        Layer::MaxPool { .. } => {
            let Aux::PoolArgmax(argmax) = aux else {
                return Err(NetError::StaleCache);
            };
            let mut d_in = vec![0.0f32; input.len()];
            for (o, &src) in argmax.iter().enumerate() {
                d_in[src] += d_out.data()[o];
            }
            Ok(Tensor::new(input.shape().to_vec(), d_in)?)
        }
        Layer::Flatten => d_out.reshaped(input.shape().to_vec()).map_err(NetError::from),
        Layer::Linear(l) => {
            let x = input.data();
            let dy = d_out.data();
            let mut gw = vec![0.0f32; l.in_dim * l.out_dim];
            for (o, &g) in dy.iter().enumerate() {
                let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                for (gwi, &xi) in row.iter_mut().zip(x) {
                    *gwi = g * xi;
                }
            }
            let gb = dy.to_vec();
            let mut d_in = vec![0.0f32; l.in_dim];
            for (i, d_v) in d_in.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (o, &g) in dy.iter().enumerate() {
                    acc += f64::from(l.weight[o * l.in_dim + i]) * f64::from(g);
                }
                *d_v = acc as f32;
            }
            *grad_slot = Some((gw, gb));
            Ok(Tensor::new(input.shape().to_vec(), d_in)?)
        }
        Layer::Relu => {
            let d_in: Vec<f32> = input
                .data()
                .iter()
                .zip(d_out.data())
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            Ok(Tensor::new(input.shape().to_vec(), d_in)?)
        }
        Layer::Dropout { .. } => match aux {
            Aux::None => Ok(d_out.clone()), // eval-mode forward
            Aux::DropScale(scales) => {
                let d_in: Vec<f32> = d_out
                    .data()
                    .iter()
                    .zip(scales)
                    .map(|(g, s)| g * s)
                    .collect();
                Ok(Tensor::new(input.shape().to_vec(), d_in)?)
            }
            _ => Err(NetError::StaleCache),
        },
    }
}

// ---------------------------------------------------------------------------
// Serialization: JSON index + HTF1 parameter files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerSpec {
    MaxPool { kernel: usize, stride: usize },
    Flatten,
    Linear { weight: String, bias: String, in_dim: usize, out_dim: usize },
    Relu,
    Dropout { p: f32 },
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadIndex {
    classes: Vec<String>,
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

impl Head {
    /// Write `head.json` plus one HTF1 file per linear parameter tensor.
    pub fn save(&self, dir: &std::path::Path) -> Result<(), NetError> {
        std::fs::create_dir_all(dir).map_err(|e| NetError::BackendUnavailable {
            backend: "head-io".into(),
            msg: e.to_string(),
        })?;
        let mut specs = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            specs.push(match layer {
                Layer::MaxPool { kernel, stride } => LayerSpec::MaxPool {
                    kernel: *kernel,
                    stride: *stride,
                },
                Layer::Flatten => LayerSpec::Flatten,
                Layer::Relu => LayerSpec::Relu,
                Layer::Dropout { p } => LayerSpec::Dropout { p: *p },
                Layer::Linear(l) => {
                    let wfile = format!("linear{i}.weight.htf1");
                    let bfile = format!("linear{i}.bias.htf1");
                    Tensor::new(vec![l.out_dim, l.in_dim], l.weight.clone())?
                        .save(&dir.join(&wfile))?;
                    Tensor::new(vec![l.out_dim], l.bias.clone())?.save(&dir.join(&bfile))?;
                    LayerSpec::Linear {
                        weight: wfile,
                        bias: bfile,
                        in_dim: l.in_dim,
                        out_dim: l.out_dim,
                    }
                }
            });
        }
        let index = HeadIndex {
            classes: self.classes.clone(),
            input_shape: self.input_shape,
            layers: specs,
        };
        let json = serde_json::to_string_pretty(&index).expect("head index serializes");
        std::fs::write(dir.join("head.json"), json).map_err(|e| NetError::BackendUnavailable {
            backend: "head-io".into(),
            msg: e.to_string(),
        })
    }

    pub fn load(dir: &std::path::Path) -> Result<Self, NetError> {
        let path = dir.join("head.json");
        let json = std::fs::read_to_string(&path).map_err(|e| NetError::BackendUnavailable {
            backend: "head-io".into(),
            msg: format!("{}: {e}", path.display()),
        })?;
        let index: HeadIndex =
            serde_json::from_str(&json).map_err(|e| NetError::BackendUnavailable {
                backend: "head-io".into(),
                msg: format!("{}: {e}", path.display()),
            })?;
        let mut layers = Vec::new();
        for spec in index.layers {
            layers.push(match spec {
                LayerSpec::MaxPool { kernel, stride } => Layer::MaxPool { kernel, stride },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Dropout { p } => Layer::Dropout { p },
                LayerSpec::Linear {
                    weight,
                    bias,
                    in_dim,
                    out_dim,
                } => {
                    let w = Tensor::load(&dir.join(weight))?;
                    w.expect_shape(&[out_dim, in_dim])?;
                    let b = Tensor::load(&dir.join(bias))?;
                    b.expect_shape(&[out_dim])?;
                    Layer::Linear(Linear {
                        in_dim,
                        out_dim,
                        weight: w.into_data(),
                        bias: b.into_data(),
                    })
                }
            });
        }
        Head::new(layers, index.classes, index.input_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(shape: [usize; 3], seed: u64) -> Tensor {
        let n = shape[0] * shape[1] * shape[2];
        let data: Vec<f32> = (0..n)
            .map(|i| (crate::rng::unit_uniform(seed, i as u64) * 2.0 - 1.0) as f32)
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_linear_passes_input_through() {
        let head = Head::new(
            vec![Layer::Flatten, Layer::Linear(Linear::identity(4))],
            (0..4).map(|i| format!("c{i}")).collect(),
            [1, 2, 2],
        )
        .unwrap();
        let f = feature([1, 2, 2], 1);
        let (logits, _) = head.forward(&f, Mode::Eval).unwrap();
        assert_eq!(logits.data(), f.data());
    }

    #[test]
    fn relu_zeroes_negative_input() {
        let head = Head::new(
            vec![
                Layer::Flatten,
                Layer::Relu,
                Layer::Linear(Linear::identity(4)),
            ],
            (0..4).map(|i| format!("c{i}")).collect(),
            [1, 2, 2],
        )
        .unwrap();
        let f = Tensor::new(vec![1, 2, 2], vec![-1.0, -0.5, -3.0, -0.1]).unwrap();
        let (logits, _) = head.forward(&f, Mode::Eval).unwrap();
        assert!(logits.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_layer_head_matches_dense_oracle() {
        // Straightforward nested-loop matrix oracle in f64.
        let mut head = Head::new(
            vec![
                Layer::Flatten,
                Layer::Linear(Linear::zeros(8, 5)),
                Layer::Relu,
                Layer::Linear(Linear::zeros(5, 3)),
            ],
            vec!["a".into(), "b".into(), "c".into()],
            [2, 2, 2],
        )
        .unwrap();
        head.init_params(42);
        let f = feature([2, 2, 2], 7);

        let (w1, b1, w2, b2) = {
            let mut it = head.layers().iter().filter_map(|l| match l {
                Layer::Linear(l) => Some(l),
                _ => None,
            });
            let l1 = it.next().unwrap();
            let l2 = it.next().unwrap();
            (
                l1.weight.clone(),
                l1.bias.clone(),
                l2.weight.clone(),
                l2.bias.clone(),
            )
        };
        let mut hidden = vec![0.0f64; 5];
        for o in 0..5 {
            let mut acc = f64::from(b1[o]);
            for i in 0..8 {
                acc += f64::from(w1[o * 8 + i]) * f64::from(f.data()[i]);
            }
            hidden[o] = acc.max(0.0);
        }
        let mut expected = vec![0.0f64; 3];
        for o in 0..3 {
            let mut acc = f64::from(b2[o]);
            for i in 0..5 {
                acc += f64::from(w2[o * 5 + i]) * hidden[i];
            }
            expected[o] = acc;
        }
        let (logits, _) = head.forward(&f, Mode::Eval).unwrap();
        for (got, want) in logits.data().iter().zip(&expected) {
            assert!((f64::from(*got) - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut head = Head::compact([2, 4, 4], 6, 0.0, vec!["a".into(), "b".into()]).unwrap();
        head.init_params(3);
        let f = feature([2, 4, 4], 9);
        let (logits, cache) = head.forward(&f, Mode::Eval).unwrap();
        let zero = Tensor::zeros(vec![logits.len()]);
        let grads = head.backward(&cache, &zero).unwrap();
        assert!(grads.input.data().iter().all(|v| *v == 0.0));
        for g in grads.linear.iter().flatten() {
            assert!(g.0.iter().all(|v| *v == 0.0));
            assert!(g.1.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_linear_grad_input_is_weight_transpose_times_dlogits() {
        let mut lin = Linear::zeros(3, 2);
        lin.weight = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let head = Head::new(
            vec![Layer::Flatten, Layer::Linear(lin)],
            vec!["a".into(), "b".into()],
            [3, 1, 1],
        )
        .unwrap();
        let f = Tensor::new(vec![3, 1, 1], vec![0.5, -1.0, 2.0]).unwrap();
        let (_, cache) = head.forward(&f, Mode::Eval).unwrap();
        let d = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let grads = head.backward(&cache, &d).unwrap();
        // Wᵀ d = [1*1 + 4*(-2), 2*1 + 5*(-2), 3*1 + 6*(-2)]
        assert_eq!(grads.input.data(), &[-7.0, -8.0, -9.0]);
        let (gw, gb) = grads.linear[1].as_ref().unwrap();
        assert_eq!(gb, &vec![1.0, -2.0]);
        assert_eq!(gw, &vec![0.5, -1.0, 2.0, -1.0, 2.0, -4.0]);
    }

    #[test]
    fn maxpool_routes_gradient_to_first_argmax() {
        let head = Head::new(
            vec![
                Layer::MaxPool { kernel: 2, stride: 2 },
                Layer::Flatten,
                Layer::Linear(Linear::identity(1)),
            ],
            vec!["a".into()],
            [1, 2, 2],
        )
        .unwrap();
        // All equal: the tie breaks to the first (row-major) element.
        let f = Tensor::new(vec![1, 2, 2], vec![0.7, 0.7, 0.7, 0.7]).unwrap();
        let (_, cache) = head.forward(&f, Mode::Eval).unwrap();
        let grads = head
            .backward(&cache, &Tensor::new(vec![1], vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(grads.input.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut head = Head::compact([1, 4, 4], 4, 0.0, vec!["a".into(), "b".into()]).unwrap();
        head.init_params(1);
        let f = feature([1, 4, 4], 2);
        let (logits, cache) = head.forward(&f, Mode::Eval).unwrap();
        head.init_params(2); // bumps version
        let d = Tensor::zeros(vec![logits.len()]);
        assert!(matches!(
            head.backward(&cache, &d),
            Err(NetError::StaleCache)
        ));
    }

    #[test]
    fn dropout_train_mode_is_seeded_and_scaled() {
        let head = Head::new(
            vec![
                Layer::Flatten,
                Layer::Dropout { p: 0.5 },
                Layer::Linear(Linear::identity(16)),
            ],
            (0..16).map(|i| format!("c{i}")).collect(),
            [1, 4, 4],
        )
        .unwrap();
        let f = feature([1, 4, 4], 5);
        let m = Mode::Train { dropout_seed: 77 };
        let (a, _) = head.forward(&f, m).unwrap();
        let (b, _) = head.forward(&f, m).unwrap();
        assert_eq!(a.data(), b.data());
        let (c, _) = head.forward(&f, Mode::Train { dropout_seed: 78 }).unwrap();
        assert_ne!(a.data(), c.data());
        // Surviving values are scaled by 1/(1-p).
        let kept = a
            .data()
            .iter()
            .zip(f.data())
            .filter(|(y, _)| **y != 0.0)
            .all(|(y, x)| (y - x * 2.0).abs() < 1e-6);
        assert!(kept);
        // Eval mode is the identity.
        let (e, _) = head.forward(&f, Mode::Eval).unwrap();
        assert_eq!(e.data(), f.data());
    }

    #[test]
    fn head_io_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut head = Head::compact([3, 4, 4], 8, 0.25, vec!["x".into(), "y".into()]).unwrap();
        head.init_params(9);
        head.save(dir.path()).unwrap();
        let back = Head::load(dir.path()).unwrap();
        assert_eq!(back.classes(), head.classes());
        assert_eq!(back.input_shape(), head.input_shape());
        assert_eq!(back.layers(), head.layers());
    }

    #[test]
    fn incompatible_shapes_rejected() {
        // Linear fed a rank-3 tensor.
        let err = Head::new(
            vec![Layer::Linear(Linear::zeros(4, 2))],
            vec!["a".into(), "b".into()],
            [1, 2, 2],
        )
        .unwrap_err();
        assert!(matches!(err, NetError::IncompatibleLayer { .. }));
        // Final layer class mismatch.
        let err = Head::new(
            vec![Layer::Flatten, Layer::Linear(Linear::zeros(4, 3))],
            vec!["a".into(), "b".into()],
            [1, 2, 2],
        )
        .unwrap_err();
        assert!(matches!(err, NetError::ClassCountMismatch { .. }));
    }
}
