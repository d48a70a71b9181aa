//! Fully connected networks: batched forward and reverse passes.
//!
//! The backward pass recomputes layer activations chunk by chunk instead of
//! caching them, which bounds transient memory by the chunk size even for
//! very large batches.

use rand::Rng;

use super::linalg;
use super::tensor::{init_linear, ParamStore};
use crate::error::{Error, Result};

/// Rows per backward recompute chunk.
const BACKWARD_CHUNK: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_CUBIC: f64 = 0.044715;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let inner = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
        }
    }

    /// Derivative as a function of the pre-activation value.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let inner = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
                let t = inner.tanh();
                let d_inner = GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            }
        }
    }
}

/// Layer widths `[input, hidden.., output]` plus one activation per hidden
/// layer. The final layer is always affine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden_activations: Vec<Activation>,
}

impl MlpSpec {
    /// Spec with the same activation after every hidden layer.
    pub fn new(widths: Vec<usize>, activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        let hidden = widths.len() - 2;
        MlpSpec { widths, hidden_activations: vec![activation; hidden] }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.w{layer}")
    }

    fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.b{layer}")
    }

    /// Activation applied after layer `l`, `None` for the final layer.
    fn activation_after(&self, layer: usize) -> Option<Activation> {
        (layer + 1 < self.layer_count()).then(|| self.hidden_activations[layer])
    }
}

/// Register freshly initialized weights and biases under `prefix`.
pub fn register_mlp<R: Rng>(store: &mut ParamStore, prefix: &str, spec: &MlpSpec, rng: &mut R) {
    for l in 0..spec.layer_count() {
        let (w, b) = init_linear(spec.widths[l], spec.widths[l + 1], rng);
        store.insert(MlpSpec::weight_name(prefix, l), w);
        store.insert(MlpSpec::bias_name(prefix, l), b);
    }
}

fn check_width(context: &str, expected: usize, input_len: usize, batch: usize) -> Result<()> {
    if input_len != expected * batch {
        return Err(Error::ShapeMismatch {
            context: context.into(),
            expected: vec![batch, expected],
            actual: vec![input_len / expected.max(1), input_len % expected.max(1)],
        });
    }
    Ok(())
}

/// One affine layer plus optional activation: `out = act(x W + b)`.
fn layer_forward(
    x: &[f64],
    batch: usize,
    w: &[f64],
    b: &[f64],
    fan_in: usize,
    fan_out: usize,
    act: Option<Activation>,
    out: &mut Vec<f64>,
) {
    out.resize(batch * fan_out, 0.0);
    linalg::matmul(x, w, batch, fan_in, fan_out, out);
    for row in out.chunks_exact_mut(fan_out) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    if let Some(a) = act {
        for v in out.iter_mut() {
            *v = a.apply(*v);
        }
    }
}

/// Batched forward pass: `input` is `batch x input_width`, row-major.
pub fn mlp_forward(
    store: &ParamStore,
    prefix: &str,
    spec: &MlpSpec,
    input: &[f64],
    batch: usize,
) -> Result<Vec<f64>> {
    check_width(&format!("{prefix} input"), spec.input_width(), input.len(), batch)?;
    let mut current = input.to_vec();
    let mut next = Vec::new();
    for l in 0..spec.layer_count() {
        let w = store.values(&MlpSpec::weight_name(prefix, l))?;
        let b = store.values(&MlpSpec::bias_name(prefix, l))?;
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        if w.len() != fan_in * fan_out {
            return Err(Error::ShapeMismatch {
                context: format!("{prefix} layer {l} weights"),
                expected: vec![fan_in, fan_out],
                actual: vec![w.len()],
            });
        }
        layer_forward(&current, batch, w, b, fan_in, fan_out, spec.activation_after(l), &mut next);
        std::mem::swap(&mut current, &mut next);
    }
    Ok(current)
}

/// Reverse pass. Recomputes the forward activations per chunk, accumulates
/// weight/bias gradients into the store, and returns the input gradient.
pub fn mlp_backward(
    store: &mut ParamStore,
    prefix: &str,
    spec: &MlpSpec,
    input: &[f64],
    batch: usize,
    grad_out: &[f64],
) -> Result<Vec<f64>> {
    check_width(&format!("{prefix} input"), spec.input_width(), input.len(), batch)?;
    check_width(&format!("{prefix} grad_out"), spec.output_width(), grad_out.len(), batch)?;
    let layers = spec.layer_count();

    // Weights are read many times while grads accumulate: take copies up front.
    let mut weights = Vec::with_capacity(layers);
    for l in 0..layers {
        weights.push(store.values(&MlpSpec::weight_name(prefix, l))?.to_vec());
    }

    let mut dw: Vec<Vec<f64>> =
        (0..layers).map(|l| vec![0.0; spec.widths[l] * spec.widths[l + 1]]).collect();
    let mut db: Vec<Vec<f64>> = (0..layers).map(|l| vec![0.0; spec.widths[l + 1]]).collect();
    let mut grad_input = vec![0.0; input.len()];

    let in_w = spec.input_width();
    let out_w = spec.output_width();
    let mut row = 0;
    while row < batch {
        let rows = BACKWARD_CHUNK.min(batch - row);
        let x_chunk = &input[row * in_w..(row + rows) * in_w];
        let g_chunk = &grad_out[row * out_w..(row + rows) * out_w];

        // Recompute pre-activations for this chunk.
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut current = x_chunk.to_vec();
        for l in 0..layers {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let b = store.values(&MlpSpec::bias_name(prefix, l))?;
            let mut z = vec![0.0; rows * fan_out];
            linalg::matmul(&current, &weights[l], rows, fan_in, fan_out, &mut z);
            for r in z.chunks_exact_mut(fan_out) {
                for (v, bias) in r.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            pre.push(z);
            if let Some(a) = spec.activation_after(l) {
                current = pre[l].iter().map(|&v| a.apply(v)).collect();
            } else {
                current = pre[l].clone();
            }
        }

        // Backpropagate.
        let mut delta = g_chunk.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            // Activation input to layer l.
            let x_l: Vec<f64> = if l == 0 {
                x_chunk.to_vec()
            } else {
                let a = spec.activation_after(l - 1).expect("layer below top has activation");
                pre[l - 1].iter().map(|&v| a.apply(v)).collect()
            };
            linalg::matmul_tn_acc(&x_l, &delta, rows, fan_in, fan_out, &mut dw[l]);
            for r in delta.chunks_exact(fan_out) {
                for (acc, d) in db[l].iter_mut().zip(r) {
                    *acc += d;
                }
            }
            let mut d_prev = vec![0.0; rows * fan_in];
            linalg::matmul_nt(&delta, &weights[l], rows, fan_out, fan_in, &mut d_prev);
            if l > 0 {
                let a = spec.activation_after(l - 1).unwrap();
                for (d, &z) in d_prev.iter_mut().zip(&pre[l - 1]) {
                    *d *= a.derivative(z);
                }
            }
            delta = d_prev;
        }
        grad_input[row * in_w..(row + rows) * in_w].copy_from_slice(&delta);
        row += rows;
    }

    for l in 0..layers {
        store.accumulate_grad(&MlpSpec::weight_name(prefix, l), &dw[l])?;
        store.accumulate_grad(&MlpSpec::bias_name(prefix, l), &db[l])?;
    }
    Ok(grad_input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::gradcheck::{loss_and_grads, max_param_rel_error};
    use crate::diffnet::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_single_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![3, 3], Activation::Relu);
        let mut store = ParamStore::new();
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        store.insert("id.w0", Tensor::from_values(&[3, 3], w).unwrap());
        store.insert("id.b0", Tensor::zeros(&[3]));
        let x = vec![0.3, -1.5, 2.0, 0.0, 0.25, -0.125];
        let y = mlp_forward(&store, "id", &spec, &x, 2).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn relu_unit_matches_closed_form() {
        // One hidden relu unit, w = 1, b = -0.5, then identity output layer.
        let spec = MlpSpec::new(vec![1, 1, 1], Activation::Relu);
        let mut store = ParamStore::new();
        store.insert("r.w0", Tensor::from_values(&[1, 1], vec![1.0]).unwrap());
        store.insert("r.b0", Tensor::from_values(&[1], vec![-0.5]).unwrap());
        store.insert("r.w1", Tensor::from_values(&[1, 1], vec![1.0]).unwrap());
        store.insert("r.b1", Tensor::zeros(&[1]));
        let y = mlp_forward(&store, "r", &spec, &[0.3, 0.7], 2).unwrap();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_names_the_network() {
        let spec = MlpSpec::new(vec![4, 2], Activation::Relu);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        register_mlp(&mut store, "net", &spec, &mut rng);
        let err = mlp_forward(&store, "net", &spec, &[1.0; 6], 2);
        match err {
            Err(Error::ShapeMismatch { context, .. }) => assert!(context.contains("net")),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn three_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let spec = MlpSpec::new(vec![5, 8, 7, 2], Activation::Gelu);
        let mut store = ParamStore::new();
        register_mlp(&mut store, "net", &spec, &mut rng);
        let batch = 6;
        let input: Vec<f64> =
            (0..batch * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets: Vec<f64> =
            (0..batch * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss_fn = |s: &ParamStore| -> f64 {
            let y = mlp_forward(s, "net", &spec, &input, batch).unwrap();
            y.iter().zip(&targets).map(|(a, t)| (a - t) * (a - t)).sum::<f64>()
                / (batch * 2) as f64
        };
        let backward = |s: &mut ParamStore| {
            let y = mlp_forward(s, "net", &spec, &input, batch).unwrap();
            let gout: Vec<f64> = y
                .iter()
                .zip(&targets)
                .map(|(a, t)| 2.0 * (a - t) / (batch * 2) as f64)
                .collect();
            mlp_backward(s, "net", &spec, &input, batch, &gout).unwrap();
        };

        loss_and_grads(&mut store, backward);
        let err = max_param_rel_error(&mut store, loss_fn, 1e-5);
        assert!(err < 1e-6, "max relative gradient error {err}");
    }

    #[test]
    fn relu_three_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let spec = MlpSpec::new(vec![4, 6, 6, 1], Activation::Relu);
        let mut store = ParamStore::new();
        register_mlp(&mut store, "net", &spec, &mut rng);
        let batch = 5;
        let input: Vec<f64> = (0..batch * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss_fn = |s: &ParamStore| -> f64 {
            mlp_forward(s, "net", &spec, &input, batch).unwrap().iter().sum::<f64>()
        };
        let backward = |s: &mut ParamStore| {
            let y = mlp_forward(s, "net", &spec, &input, batch).unwrap();
            let gout = vec![1.0; y.len()];
            mlp_backward(s, "net", &spec, &input, batch, &gout).unwrap();
        };
        loss_and_grads(&mut store, backward);
        let err = max_param_rel_error(&mut store, loss_fn, 1e-5);
        assert!(err < 1e-6, "max relative gradient error {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::Gelu);
        let mut store = ParamStore::new();
        register_mlp(&mut store, "net", &spec, &mut rng);
        let input: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        store.zero_grads();
        let gout = vec![1.0; 4];
        let gin = mlp_backward(&mut store, "net", &spec, &input, 2, &gout).unwrap();

        let h = 1e-6;
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus[i] += h;
            let mut minus = input.clone();
            minus[i] -= h;
            let lp: f64 = mlp_forward(&store, "net", &spec, &plus, 2).unwrap().iter().sum();
            let lm: f64 = mlp_forward(&store, "net", &spec, &minus, 2).unwrap().iter().sum();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gin[i]).abs() < 1e-6 * fd.abs().max(1.0), "input grad {i}");
        }
    }
}
