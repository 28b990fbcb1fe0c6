use rand::Rng;

use super::batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_train, update_running, BnCache, Mode};
use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::layers::{
    as_dimension, compose_shapes, residual_conv1, residual_conv2, residual_projection, BnParams, ConvParams,
    DenseParams, LayerParams, LayerSpec, NetworkParams, ResidualParams,
};
use super::pool::{
    global_avg_pool_backward, global_avg_pool_forward, maxpool2_backward, maxpool2_forward, relu_backward,
    relu_forward,
};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// A layer list together with its parameters and the (c, h, w) input it accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub specs: Vec<LayerSpec>,
    pub params: NetworkParams,
    pub input: [usize; 3],
}

#[derive(Debug)]
enum LayerCache {
    Conv { input: Tensor4 },
    BatchNorm(BnCache),
    Relu { input: Tensor4 },
    MaxPool { input_shape: [usize; 4], argmax: Vec<usize> },
    Residual(Box<ResidualCache>),
    GlobalAvgPool { input_shape: [usize; 4] },
    Dense { input: Tensor4 },
}

#[derive(Debug)]
struct ResidualCache {
    input: Tensor4,
    bn1: BnCache,
    /// bn1 output, the ReLU input.
    pre_relu1: Tensor4,
    bn2: BnCache,
    projection: Option<BnCache>,
    /// Branch + shortcut, the final ReLU input.
    sum: Tensor4,
}

/// Result of a forward pass. Train-mode passes keep the per-layer state that
/// `Network::backward` consumes.
#[derive(Debug)]
pub struct ForwardPass {
    /// Output of the last layer, (n, units, 1, 1) for the default family.
    pub output: Tensor4,
    /// Global-average-pool features reshaped to (n, 1, 1, F), when the
    /// network has a pooling layer.
    pub embedding: Option<Tensor4>,
    mode: Mode,
    caches: Vec<LayerCache>,
}

impl ForwardPass {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Head input as one value per sample (first output unit).
    pub fn head_values(&self) -> Vec<f64> {
        let per = self.output.len() / self.output.n();
        self.output.data().iter().step_by(per).copied().collect()
    }
}

fn dense_forward(x: &Tensor4, p: &DenseParams, units: usize) -> Tensor4 {
    let n = x.n();
    let f = x.len() / n;
    let mut y = Tensor4::zeros([n, units, 1, 1]);
    for i in 0..n {
        let xi = x.sample(i);
        let yi = y.sample_mut(i);
        for (u, out) in yi.iter_mut().enumerate() {
            let row = &p.weight[u * f..(u + 1) * f];
            *out = p.bias[u] + row.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    y
}

fn dense_backward(x: &Tensor4, p: &DenseParams, dy: &Tensor4) -> (Tensor4, DenseParams) {
    let n = x.n();
    let f = x.len() / n;
    let units = p.bias.len();
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = vec![0.0; p.weight.len()];
    let mut db = vec![0.0; units];
    for i in 0..n {
        let xi = x.sample(i);
        let gi = dy.sample(i);
        let dxi = dx.sample_mut(i);
        for u in 0..units {
            let g = gi[u];
            db[u] += g;
            let row = &p.weight[u * f..(u + 1) * f];
            for k in 0..f {
                dw[u * f + k] += g * xi[k];
                dxi[k] += g * row[k];
            }
        }
    }
    (dx, DenseParams { weight: dw, bias: db })
}

fn bn_forward(x: &Tensor4, p: &BnParams, mode: Mode) -> Result<(Tensor4, Option<BnCache>)> {
    match mode {
        Mode::Train => {
            let (y, cache) = batchnorm_train(x, &p.scale, &p.shift)?;
            Ok((y, Some(cache)))
        }
        Mode::Eval => Ok((
            batchnorm_eval(x, &p.scale, &p.shift, &p.running_mean, &p.running_var)?,
            None,
        )),
    }
}

fn scaled(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    if s != 1.0 {
        v.iter_mut().for_each(|x| *x *= s);
    }
    v
}

fn scaled_tensor(mut t: Tensor4, s: f64) -> Tensor4 {
    if s != 1.0 {
        t.data_mut().iter_mut().for_each(|x| *x *= s);
    }
    t
}

struct Backward {
    conv_scale: f64,
}

impl Backward {
    fn conv(&self, x: &Tensor4, p: &ConvParams, g: &ConvGeometry, dy: &Tensor4) -> Result<(Tensor4, ConvParams)> {
        let grads = conv2d_backward(x, &p.weight, p.bias.is_some(), g, dy)?;
        let s = self.conv_scale;
        Ok((
            scaled_tensor(grads.dx, s),
            ConvParams {
                weight: scaled(grads.dw, s),
                bias: grads.db.map(|b| scaled(b, s)),
            },
        ))
    }
}

fn bn_grads(cache: &BnCache, p: &BnParams, dy: &Tensor4) -> (Tensor4, BnParams) {
    let g = batchnorm_backward(cache, &p.scale, dy);
    let c = g.dscale.len();
    (
        g.dx,
        BnParams {
            scale: g.dscale,
            shift: g.dshift,
            running_mean: vec![0.0; c],
            running_var: vec![0.0; c],
        },
    )
}

impl Network {
    pub fn new(specs: Vec<LayerSpec>, params: NetworkParams, input: [usize; 3]) -> Result<Self> {
        compose_shapes(&specs, [1, input[0], input[1], input[2]])?;
        params.check_against(&specs)?;
        Ok(Self { specs, params, input })
    }

    /// Freshly initialised network for `specs`.
    pub fn init(specs: Vec<LayerSpec>, input: [usize; 3], rng: &mut impl Rng) -> Result<Self> {
        let params = NetworkParams::init(&specs, rng)?;
        Self::new(specs, params, input)
    }

    pub fn output_shape(&self, batch: usize) -> Result<[usize; 4]> {
        compose_shapes(&self.specs, [batch, self.input[0], self.input[1], self.input[2]])
    }

    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<ForwardPass> {
        let [_, c, h, w] = x.shape();
        if [c, h, w] != self.input {
            return Err(Error::Dimension {
                layer: 0,
                message: format!("input (c, h, w) = {:?}, network expects {:?}", [c, h, w], self.input),
            });
        }
        let keep = mode == Mode::Train;
        let mut caches = Vec::with_capacity(if keep { self.specs.len() } else { 0 });
        let mut embedding = None;
        let mut cur = x.clone();
        for (i, (spec, params)) in self.specs.iter().zip(&self.params.layers).enumerate() {
            let (next, cache) = self.layer_forward(spec, params, cur, mode, keep).map_err(|e| as_dimension(i, e))?;
            next.ensure_finite(|| format!("layer {i} ({})", spec.kind()))?;
            if matches!(spec, LayerSpec::GlobalAvgPool) && embedding.is_none() {
                let [n, f, _, _] = next.shape();
                embedding = Some(next.clone().reshape([n, 1, 1, f])?);
            }
            if let Some(cache) = cache {
                caches.push(cache);
            }
            cur = next;
        }
        Ok(ForwardPass {
            output: cur,
            embedding,
            mode,
            caches,
        })
    }

    fn layer_forward(
        &self,
        spec: &LayerSpec,
        params: &LayerParams,
        x: Tensor4,
        mode: Mode,
        keep: bool,
    ) -> Result<(Tensor4, Option<LayerCache>)> {
        Ok(match (spec, params) {
            (LayerSpec::Conv { geometry, .. }, LayerParams::Conv(p)) => {
                let y = conv2d_forward(&x, &p.weight, p.bias.as_deref(), geometry)?;
                (y, keep.then_some(LayerCache::Conv { input: x }))
            }
            (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm(p)) => {
                let (y, cache) = bn_forward(&x, p, mode)?;
                (y, cache.map(LayerCache::BatchNorm))
            }
            (LayerSpec::Relu, _) => {
                let y = relu_forward(&x);
                (y, keep.then_some(LayerCache::Relu { input: x }))
            }
            (LayerSpec::MaxPool, _) => {
                let (y, argmax) = maxpool2_forward(&x)?;
                (
                    y,
                    keep.then(|| LayerCache::MaxPool {
                        input_shape: x.shape(),
                        argmax,
                    }),
                )
            }
            (LayerSpec::ResidualBlock { in_ch, out_ch, stride }, LayerParams::Residual(p)) => {
                self.residual_forward(x, p, *in_ch, *out_ch, *stride, mode, keep)?
            }
            (LayerSpec::GlobalAvgPool, _) => (
                global_avg_pool_forward(&x),
                keep.then(|| LayerCache::GlobalAvgPool { input_shape: x.shape() }),
            ),
            (LayerSpec::Dense { in_features, units }, LayerParams::Dense(p)) => {
                if x.len() / x.n() != *in_features {
                    return Err(Error::Shape(format!(
                        "dense expects {in_features} features, got {}",
                        x.len() / x.n()
                    )));
                }
                let y = dense_forward(&x, p, *units);
                (y, keep.then_some(LayerCache::Dense { input: x }))
            }
            _ => return Err(Error::Shape(format!("parameters do not match a {} layer", spec.kind()))),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn residual_forward(
        &self,
        x: Tensor4,
        p: &ResidualParams,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        mode: Mode,
        keep: bool,
    ) -> Result<(Tensor4, Option<LayerCache>)> {
        let a1 = conv2d_forward(&x, &p.conv1.weight, None, &residual_conv1(in_ch, out_ch, stride))?;
        let (b1, bn1) = bn_forward(&a1, &p.bn1, mode)?;
        let r1 = relu_forward(&b1);
        let a2 = conv2d_forward(&r1, &p.conv2.weight, None, &residual_conv2(out_ch))?;
        let (mut sum, bn2) = bn_forward(&a2, &p.bn2, mode)?;
        let proj_cache = match &p.projection {
            Some((pc, pb)) => {
                let s = conv2d_forward(&x, &pc.weight, None, &residual_projection(in_ch, out_ch, stride))?;
                let (s, cache) = bn_forward(&s, pb, mode)?;
                if s.shape() != sum.shape() {
                    return Err(Error::Shape(format!(
                        "branch {:?} and shortcut {:?} disagree",
                        sum.shape(),
                        s.shape()
                    )));
                }
                sum.add_assign(&s);
                cache
            }
            None => {
                if x.shape() != sum.shape() {
                    return Err(Error::Shape(format!(
                        "branch {:?} and identity shortcut {:?} disagree",
                        sum.shape(),
                        x.shape()
                    )));
                }
                sum.add_assign(&x);
                None
            }
        };
        let y = relu_forward(&sum);
        let cache = if keep {
            Some(LayerCache::Residual(Box::new(ResidualCache {
                input: x,
                bn1: bn1.expect("train mode keeps bn state"),
                pre_relu1: b1,
                bn2: bn2.expect("train mode keeps bn state"),
                projection: proj_cache,
                sum,
            })))
        } else {
            None
        };
        Ok((y, cache))
    }

    /// Gradients of every trainable block given `dout = dL/d(output)`.
    pub fn backward(&self, pass: &ForwardPass, dout: &Tensor4) -> Result<NetworkParams> {
        self.backward_scaled(pass, dout, 1.0)
    }

    /// Backward pass with every conv backward output multiplied by
    /// `conv_scale`. Only meaningful as a fault-injection hook for testing the
    /// gradient checker; `backward` uses 1.0.
    #[doc(hidden)]
    pub fn backward_scaled(&self, pass: &ForwardPass, dout: &Tensor4, conv_scale: f64) -> Result<NetworkParams> {
        if pass.mode != Mode::Train || pass.caches.len() != self.specs.len() {
            return Err(Error::Shape("backward needs a train-mode forward pass".into()));
        }
        if dout.shape() != pass.output.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                dout.shape(),
                pass.output.shape()
            )));
        }
        let bw = Backward { conv_scale };
        let mut grads: Vec<LayerParams> = Vec::with_capacity(self.specs.len());
        let mut dy = dout.clone();
        for i in (0..self.specs.len()).rev() {
            let (dx, g) = self
                .layer_backward(&bw, &self.specs[i], &self.params.layers[i], &pass.caches[i], &dy)
                .map_err(|e| as_dimension(i, e))?;
            grads.push(g);
            dy = dx;
        }
        grads.reverse();
        Ok(NetworkParams { layers: grads })
    }

    fn layer_backward(
        &self,
        bw: &Backward,
        spec: &LayerSpec,
        params: &LayerParams,
        cache: &LayerCache,
        dy: &Tensor4,
    ) -> Result<(Tensor4, LayerParams)> {
        Ok(match (spec, params, cache) {
            (LayerSpec::Conv { geometry, .. }, LayerParams::Conv(p), LayerCache::Conv { input }) => {
                let (dx, g) = bw.conv(input, p, geometry, dy)?;
                (dx, LayerParams::Conv(g))
            }
            (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm(p), LayerCache::BatchNorm(c)) => {
                let (dx, g) = bn_grads(c, p, dy);
                (dx, LayerParams::BatchNorm(g))
            }
            (LayerSpec::Relu, _, LayerCache::Relu { input }) => (relu_backward(input, dy), LayerParams::Empty),
            (LayerSpec::MaxPool, _, LayerCache::MaxPool { input_shape, argmax }) => {
                (maxpool2_backward(*input_shape, argmax, dy), LayerParams::Empty)
            }
            (
                LayerSpec::ResidualBlock { in_ch, out_ch, stride },
                LayerParams::Residual(p),
                LayerCache::Residual(c),
            ) => {
                let dsum = relu_backward(&c.sum, dy);
                let (da2, gbn2) = bn_grads(&c.bn2, &p.bn2, &dsum);
                let r1 = relu_forward(&c.pre_relu1);
                let (dr1, gconv2) = bw.conv(&r1, &p.conv2, &residual_conv2(*out_ch), &da2)?;
                let db1 = relu_backward(&c.pre_relu1, &dr1);
                let (da1, gbn1) = bn_grads(&c.bn1, &p.bn1, &db1);
                let (mut dx, gconv1) = bw.conv(&c.input, &p.conv1, &residual_conv1(*in_ch, *out_ch, *stride), &da1)?;
                let projection = match (&p.projection, &c.projection) {
                    (Some((pc, pb)), Some(pcache)) => {
                        let (ds, gpb) = bn_grads(pcache, pb, &dsum);
                        let (dxs, gpc) =
                            bw.conv(&c.input, pc, &residual_projection(*in_ch, *out_ch, *stride), &ds)?;
                        dx.add_assign(&dxs);
                        Some((gpc, gpb))
                    }
                    _ => {
                        dx.add_assign(&dsum);
                        None
                    }
                };
                (
                    dx,
                    LayerParams::Residual(Box::new(ResidualParams {
                        conv1: gconv1,
                        bn1: gbn1,
                        conv2: gconv2,
                        bn2: gbn2,
                        projection,
                    })),
                )
            }
            (LayerSpec::GlobalAvgPool, _, LayerCache::GlobalAvgPool { input_shape }) => {
                (global_avg_pool_backward(*input_shape, dy), LayerParams::Empty)
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense(p), LayerCache::Dense { input }) => {
                let (dx, g) = dense_backward(input, p, dy);
                (dx, LayerParams::Dense(g))
            }
            _ => return Err(Error::Shape(format!("cache does not match a {} layer", spec.kind()))),
        })
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        if pass.mode != Mode::Train {
            return;
        }
        for (layer, cache) in self.params.layers.iter_mut().zip(&pass.caches) {
            match (layer, cache) {
                (LayerParams::BatchNorm(p), LayerCache::BatchNorm(c)) => {
                    update_running(&mut p.running_mean, &mut p.running_var, c)
                }
                (LayerParams::Residual(p), LayerCache::Residual(c)) => {
                    update_running(&mut p.bn1.running_mean, &mut p.bn1.running_var, &c.bn1);
                    update_running(&mut p.bn2.running_mean, &mut p.bn2.running_var, &c.bn2);
                    if let (Some((_, pb)), Some(pc)) = (&mut p.projection, &c.projection) {
                        update_running(&mut pb.running_mean, &mut pb.running_var, pc);
                    }
                }
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::layers::default_architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_branch_block(ch: usize) -> Network {
        let specs = vec![LayerSpec::ResidualBlock {
            in_ch: ch,
            out_ch: ch,
            stride: 1,
        }];
        let params = NetworkParams::zeros(&specs);
        let mut params = params;
        if let LayerParams::Residual(r) = &mut params.layers[0] {
            r.bn1 = BnParams::identity(ch);
            r.bn2 = BnParams::identity(ch);
        }
        Network::new(specs, params, [ch, 6, 6]).unwrap()
    }

    #[test]
    fn zero_residual_branch_reduces_to_relu() {
        let net = zero_branch_block(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor4::random_uniform([2, 3, 6, 6], -1.0, 1.0, &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let y = net.forward(&x, mode).unwrap().output;
            assert_eq!(y, relu_forward(&x));
        }
    }

    #[test]
    fn eval_is_per_sample() {
        let specs = default_architecture(3, [4, 8, 8]);
        let net = Network::init(specs, [3, 16, 16], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor4::random_uniform([4, 3, 16, 16], 0.0, 1.0, &mut rng);
        let full = net.forward(&x, Mode::Eval).unwrap().output;
        let perm = [2, 0, 3, 1];
        let permuted = net.forward(&x.select(&perm), Mode::Eval).unwrap().output;
        assert_eq!(permuted, full.select(&perm));
        let single = net.forward(&x.select(&[3]), Mode::Eval).unwrap().output;
        assert_eq!(single.data()[0], full.data()[3]);
    }

    #[test]
    fn nan_input_names_first_layer() {
        let specs = default_architecture(3, [4, 8, 8]);
        let net = Network::init(specs, [3, 16, 16], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut x = Tensor4::zeros([2, 3, 16, 16]);
        x.data_mut()[5] = f64::NAN;
        match net.forward(&x, Mode::Eval) {
            Err(Error::Numeric { context }) => assert!(context.starts_with("layer 0"), "{context}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_input_size_rejected() {
        let specs = default_architecture(3, [4, 8, 8]);
        let net = Network::init(specs, [3, 16, 16], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(matches!(
            net.forward(&Tensor4::zeros([1, 3, 32, 32]), Mode::Eval),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn embedding_has_feature_width() {
        let specs = default_architecture(3, [4, 8, 12]);
        let net = Network::init(specs, [3, 16, 16], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let pass = net.forward(&Tensor4::zeros([3, 3, 16, 16]), Mode::Eval).unwrap();
        assert_eq!(pass.embedding.unwrap().shape(), [3, 1, 1, 12]);
        assert_eq!(pass.output.shape(), [3, 1, 1, 1]);
    }

    #[test]
    fn running_stats_move_after_train_pass() {
        let specs = default_architecture(3, [4, 8, 8]);
        let mut net = Network::init(specs, [3, 16, 16], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let before = net.params.clone();
        let x = Tensor4::random_uniform([4, 3, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let pass = net.forward(&x, Mode::Train).unwrap();
        net.update_running_stats(&pass);
        assert_ne!(before.running(), net.params.running());
        assert_eq!(before.trainable(), net.params.trainable());
    }
}
