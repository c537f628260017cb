use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::layers::{activation_grad, maxpool_backward, maxpool_forward, Activation, Affine, Conv, LayerSpec, Shape};
use super::{cast, Real};
use crate::report::ArchitectureName;
use crate::rng::{substream, Stream};
use crate::{Error, Result};

pub const CONV_DROPOUT_RATE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Inference,
    /// Dropout active, masks drawn from this seed.
    Training {
        dropout_seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerInfo {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub param_offset: usize,
    pub param_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub mse: f64,
    pub rmse: f64,
}

/// Layer stack with all trainable scalars in one flat vector. Dense weights
/// are stored `inputs × outputs`, conv weights `(kernel, in, out)`, each
/// followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel<T> {
    input: Shape,
    layers: Vec<LayerInfo>,
    params: Vec<T>,
    architecture: Option<ArchitectureName>,
    parallel: bool,
}

enum Aux<T> {
    None,
    Mask(Vec<T>),
    Argmax(Vec<usize>),
}

struct Trace<T> {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<T>>,
    aux: Vec<Aux<T>>,
}

fn plan(input: Shape, specs: &[LayerSpec]) -> Result<Vec<LayerInfo>> {
    if specs.is_empty() {
        return Err(Error::config("model needs at least one layer"));
    }
    let mut shape = input;
    let mut offset = 0;
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let output = spec.output_shape(shape).map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
        let param_len = spec.param_count();
        layers.push(LayerInfo { spec: *spec, input: shape, output, param_offset: offset, param_len });
        offset += param_len;
        shape = output;
    }
    Ok(layers)
}

impl<T: Real> SurrogateModel<T> {
    /// Glorot-uniform weights drawn per layer from `seed`; zero biases.
    pub fn new(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let layers = plan(input, specs)?;
        let total = layers.iter().map(|l| l.param_len).sum();
        let mut params = vec![T::zero(); total];
        for (i, layer) in layers.iter().enumerate() {
            if let Some((fan_in, fan_out, weights)) = layer.spec.fans() {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let mut rng = substream(seed, Stream::Init, &[i as u64]);
                for w in &mut params[layer.param_offset..layer.param_offset + weights] {
                    *w = cast(dist.sample(&mut rng));
                }
            }
        }
        Ok(SurrogateModel { input, layers, params, architecture: None, parallel: false })
    }

    pub fn from_parts(input: Shape, specs: &[LayerSpec], params: Vec<T>) -> Result<Self> {
        let layers = plan(input, specs)?;
        let total: usize = layers.iter().map(|l| l.param_len).sum();
        if params.len() != total {
            return Err(Error::shape(format!("model needs {total} parameters, got {}", params.len())));
        }
        Ok(SurrogateModel { input, layers, params, architecture: None, parallel: false })
    }

    pub fn with_architecture(mut self, arch: ArchitectureName) -> Self {
        self.architecture = Some(arch);
        self
    }

    pub fn architecture(&self) -> Option<ArchitectureName> {
        self.architecture
    }

    /// Row-parallel kernels. Every reduction keeps its sequential order, so
    /// results do not depend on the thread count.
    pub fn set_parallel(&mut self, on: bool) {
        self.parallel = on;
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn input_size(&self) -> usize {
        self.input.size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output.size())
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.param_len).collect()
    }

    pub fn layer_output_shapes(&self) -> Vec<Shape> {
        self.layers.iter().map(|l| l.output).collect()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Same network at another precision.
    pub fn cast<U: Real>(&self) -> SurrogateModel<U> {
        SurrogateModel {
            input: self.input,
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| cast(p.to_f64().unwrap_or(f64::NAN))).collect(),
            architecture: self.architecture,
            parallel: self.parallel,
        }
    }

    fn check_input(&self, x: &[T], rows: usize) -> Result<()> {
        if rows == 0 || x.len() != rows * self.input_size() {
            return Err(Error::shape(format!(
                "input has {} values, expected {rows} rows of {}",
                x.len(),
                self.input_size()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &[T], rows: usize, mode: ForwardMode) -> Trace<T> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &self.params[layer.param_offset..layer.param_offset + layer.param_len];
            let cur = acts.last().expect("input pushed");
            let (next, extra) = match layer.spec {
                LayerSpec::Dense { inputs, outputs, activation } => {
                    let (weights, bias) = p.split_at(inputs * outputs);
                    let op = Affine { inputs, outputs, weights, bias };
                    (op.forward(cur, rows, activation, self.parallel), Aux::None)
                }
                LayerSpec::Conv1d { in_channels, out_channels, kernel, activation } => {
                    let (weights, bias) = p.split_at(kernel * in_channels * out_channels);
                    let op = Conv { len_in: layer.input.len, in_channels, out_channels, kernel, weights, bias };
                    (op.forward(cur, rows, activation, self.parallel), Aux::None)
                }
                LayerSpec::Dropout { rate } => match mode {
                    ForwardMode::Training { dropout_seed } if rate > 0.0 => {
                        let keep = 1.0 - rate;
                        let scale: T = cast(1.0 / keep);
                        let mut rng = substream(dropout_seed, Stream::Dropout, &[i as u64]);
                        let mask: Vec<T> = (0..cur.len())
                            .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                            .collect();
                        let out = cur.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                        (out, Aux::Mask(mask))
                    }
                    _ => (cur.clone(), Aux::None),
                },
                LayerSpec::MaxPool1d { window } => {
                    let (out, idx) = maxpool_forward(cur, rows, layer.input, window);
                    (out, Aux::Argmax(idx))
                }
                LayerSpec::Flatten => (cur.clone(), Aux::None),
            };
            acts.push(next);
            aux.push(extra);
        }
        Trace { acts, aux }
    }

    pub fn forward(&self, x: &[T], rows: usize, mode: ForwardMode) -> Result<Vec<T>> {
        self.check_input(x, rows)?;
        let mut trace = self.run(x, rows, mode);
        Ok(trace.acts.pop().expect("at least one layer"))
    }

    /// Mean squared error over all `rows × outputs` entries and its exact
    /// gradient with respect to every parameter.
    pub fn loss_and_gradients(
        &self,
        x: &[T],
        targets: &[T],
        rows: usize,
        mode: ForwardMode,
    ) -> Result<(LossReport, Vec<T>)> {
        self.check_input(x, rows)?;
        let out_size = self.output_size();
        if targets.len() != rows * out_size {
            return Err(Error::shape(format!(
                "targets have {} values, expected {rows} rows of {out_size}",
                targets.len()
            )));
        }
        if x.iter().chain(targets).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite training input".into()));
        }
        let trace = self.run(x, rows, mode);
        let y = trace.acts.last().expect("at least one layer");
        let n = (rows * out_size) as f64;
        let mut sse = 0.0f64;
        let two_over_n: T = cast(2.0 / n);
        let mut grad: Vec<T> = y
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let r = p - t;
                let rf = r.to_f64().unwrap_or(f64::NAN);
                sse += rf * rf;
                two_over_n * r
            })
            .collect();
        let mse = sse / n;

        let mut grads = vec![T::zero(); self.params.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x_in = &trace.acts[l];
            let out = &trace.acts[l + 1];
            let p = &self.params[layer.param_offset..layer.param_offset + layer.param_len];
            let g = &mut grads[layer.param_offset..layer.param_offset + layer.param_len];
            grad = match layer.spec {
                LayerSpec::Dense { inputs, outputs, activation } => {
                    let dz = activation_grad(activation, out, &grad);
                    let (weights, bias) = p.split_at(inputs * outputs);
                    let op = Affine { inputs, outputs, weights, bias };
                    let (dx, dw, db) = op.backward(x_in, &dz, rows, self.parallel);
                    g[..dw.len()].copy_from_slice(&dw);
                    g[dw.len()..].copy_from_slice(&db);
                    dx
                }
                LayerSpec::Conv1d { in_channels, out_channels, kernel, activation } => {
                    let dz = activation_grad(activation, out, &grad);
                    let (weights, bias) = p.split_at(kernel * in_channels * out_channels);
                    let op = Conv { len_in: layer.input.len, in_channels, out_channels, kernel, weights, bias };
                    let (dx, dw, db) = op.backward(x_in, &dz, rows, self.parallel);
                    g[..dw.len()].copy_from_slice(&dw);
                    g[dw.len()..].copy_from_slice(&db);
                    dx
                }
                LayerSpec::Dropout { .. } => match &trace.aux[l] {
                    Aux::Mask(mask) => grad.iter().zip(mask).map(|(&d, &m)| d * m).collect(),
                    _ => grad,
                },
                LayerSpec::MaxPool1d { .. } => match &trace.aux[l] {
                    Aux::Argmax(idx) => maxpool_backward(&grad, idx, x_in.len()),
                    _ => unreachable!("max-pool always records its argmax"),
                },
                LayerSpec::Flatten => grad,
            };
        }
        Ok((LossReport { mse, rmse: mse.sqrt() }, grads))
    }
}

/// `input → 128 → 64 → 32 → 32 → 24 → output`, ReLU hidden, linear output.
pub fn build_dense_net<T: Real>(input_dim: usize, output_dim: usize, seed: u64) -> Result<SurrogateModel<T>> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::config("network dimensions must be positive"));
    }
    let widths = [input_dim, 128, 64, 32, 32, 24, output_dim];
    let specs: Vec<LayerSpec> = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec::Dense {
            inputs: w[0],
            outputs: w[1],
            activation: if i + 2 == widths.len() { Activation::Linear } else { Activation::Relu },
        })
        .collect();
    Ok(SurrogateModel::new(Shape::vector(input_dim), &specs, seed)?.with_architecture(ArchitectureName::Dense))
}

/// Two valid 3-tap convolutions (20 filters), dropout, 2-pool, flatten, a
/// 20-unit hidden layer and a linear output. The input vector is read as a
/// single-channel sequence.
pub fn build_conv_net<T: Real>(input_len: usize, output_dim: usize, seed: u64) -> Result<SurrogateModel<T>> {
    if input_len < 5 {
        return Err(Error::config(format!("conv net needs input length >= 5, got {input_len}")));
    }
    if output_dim == 0 {
        return Err(Error::config("network dimensions must be positive"));
    }
    let pooled = (input_len - 4) / 2;
    let specs = [
        LayerSpec::Conv1d { in_channels: 1, out_channels: 20, kernel: 3, activation: Activation::Relu },
        LayerSpec::Conv1d { in_channels: 20, out_channels: 20, kernel: 3, activation: Activation::Relu },
        LayerSpec::Dropout { rate: CONV_DROPOUT_RATE },
        LayerSpec::MaxPool1d { window: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: pooled * 20, outputs: 20, activation: Activation::Relu },
        LayerSpec::Dense { inputs: 20, outputs: output_dim, activation: Activation::Linear },
    ];
    let shape = Shape { len: input_len, channels: 1 };
    Ok(SurrogateModel::new(shape, &specs, seed)?.with_architecture(ArchitectureName::Conv))
}

pub fn forward<T: Real>(model: &SurrogateModel<T>, x: &[T], rows: usize, mode: ForwardMode) -> Result<Vec<T>> {
    model.forward(x, rows, mode)
}

pub fn loss_and_gradients<T: Real>(
    model: &SurrogateModel<T>,
    x: &[T],
    targets: &[T],
    rows: usize,
    mode: ForwardMode,
) -> Result<(LossReport, Vec<T>)> {
    model.loss_and_gradients(x, targets, rows, mode)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn dense_net_counts() {
        let m = build_dense_net::<f32>(240, 12, 1).unwrap();
        assert_eq!(m.layer_param_counts(), vec![30848, 8256, 2080, 1056, 792, 300]);
        assert_eq!(m.param_count(), 43_332);
        let desk = build_dense_net::<f32>(24, 4, 1).unwrap();
        assert_eq!(desk.layer_param_counts()[0], 3200);
    }

    #[test]
    fn conv_net_counts_and_shapes() {
        let m = build_conv_net::<f32>(240, 12, 1).unwrap();
        assert_eq!(m.layer_param_counts(), vec![80, 1220, 0, 0, 0, 47220, 252]);
        assert_eq!(m.param_count(), 48_772);
        let shapes: Vec<(usize, usize)> = m.layer_output_shapes().iter().map(|s| (s.len, s.channels)).collect();
        assert_eq!(shapes, vec![(238, 20), (236, 20), (236, 20), (118, 20), (1, 2360), (1, 20), (1, 12)]);
        let desk = build_conv_net::<f32>(24, 4, 1).unwrap();
        assert_eq!(desk.layer_output_shapes()[4].channels, 200);
        assert!(build_conv_net::<f32>(4, 4, 1).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = build_dense_net::<f64>(6, 3, 2).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let y = m.forward(&[1.0; 12], 2, ForwardMode::Inference).unwrap();
        assert_eq!(y, vec![0.0; 6]);
    }

    #[test]
    fn single_dense_layer_by_hand() {
        let spec = [LayerSpec::Dense { inputs: 2, outputs: 1, activation: Activation::Linear }];
        let m = SurrogateModel::from_parts(Shape::vector(2), &spec, vec![1.0, 1.0, 0.5]).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0], 1, ForwardMode::Inference).unwrap(), vec![3.5]);
        assert!(m.forward(&[1.0, 2.0, 3.0], 1, ForwardMode::Inference).is_err());
    }

    #[test]
    fn inference_ignores_dropout_and_training_uses_seed() {
        let m = build_conv_net::<f64>(12, 2, 3).unwrap();
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = m.forward(&x, 2, ForwardMode::Inference).unwrap();
        assert_eq!(a, m.forward(&x, 2, ForwardMode::Inference).unwrap());
        let t1 = m.forward(&x, 2, ForwardMode::Training { dropout_seed: 9 }).unwrap();
        assert_eq!(t1, m.forward(&x, 2, ForwardMode::Training { dropout_seed: 9 }).unwrap());
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let m = build_dense_net::<f64>(4, 2, 5).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4];
        let y = m.forward(&x, 1, ForwardMode::Inference).unwrap();
        let (loss, g) = m.loss_and_gradients(&x, &y, 1, ForwardMode::Inference).unwrap();
        assert_eq!(loss.mse, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rmse_of_constant_residual() {
        let spec = [LayerSpec::Dense { inputs: 1, outputs: 2, activation: Activation::Linear }];
        let m = SurrogateModel::from_parts(Shape::vector(1), &spec, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let (loss, _) = m.loss_and_gradients(&[1.0, 5.0], &[0.0; 4], 2, ForwardMode::Inference).unwrap();
        assert_eq!(loss.rmse, 2.0);
        assert!(m.loss_and_gradients(&[f64::NAN, 5.0], &[0.0; 4], 2, ForwardMode::Inference).is_err());
    }

    fn finite_difference_check(m: &SurrogateModel<f64>, rows: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..rows * m.input_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..rows * m.output_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = m.loss_and_gradients(&x, &t, rows, ForwardMode::Inference).unwrap();
        let h = 1e-5;
        let mut probe = m.clone();
        #[allow(clippy::needless_range_loop)]
        for i in 0..m.param_count() {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + h;
            let up = probe.loss_and_gradients(&x, &t, rows, ForwardMode::Inference).unwrap().0.mse;
            probe.params_mut()[i] = orig - h;
            let down = probe.loss_and_gradients(&x, &t, rows, ForwardMode::Inference).unwrap().0.mse;
            probe.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} vs backprop {}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..2 {
            finite_difference_check(&build_dense_net(5, 3, seed).unwrap(), 3, seed + 100);
            finite_difference_check(&build_conv_net(9, 2, seed).unwrap(), 2, seed + 200);
        }
    }
}
