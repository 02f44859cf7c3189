//! Fully-connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector, layer by layer: the `out × in`
//! weight matrix (row-major) followed by the `out` biases. Hidden layers use
//! ReLU; the output layer is tanh or identity. Batches are row-major
//! `batch × features` matrices.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::PrngStream;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    dims: Vec<usize>,
    params: Vec<T>,
    output: Activation,
}

/// Layer activations recorded by [`Mlp::forward_batch`]: `acts[0]` is the
/// input, `acts[l]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    acts: Vec<Array2<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Array2<T> {
        &self.acts[0]
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl<T: Real> Mlp<T> {
    /// All-zero network.
    pub fn zeros(dims: &[usize], output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::domain("network needs >= 2 layer sizes, all positive", dims.len() as f64));
        }
        Ok(Mlp { dims: dims.to_vec(), params: vec![T::zero(); param_count(dims)], output })
    }

    /// Weights and biases uniform on `±1/√fan_in`; the last layer on
    /// `±final_scale/√fan_in`.
    pub fn init(dims: &[usize], output: Activation, rng: &mut PrngStream, final_scale: f64) -> Result<Self> {
        let mut net = Self::zeros(dims, output)?;
        let layers = net.layers();
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if l + 1 == layers {
                bound *= final_scale;
            }
            for p in &mut net.params[off..off + fan_out * (fan_in + 1)] {
                *p = T::lit(rng.uniform_in(-bound, bound));
            }
            off += fan_out * (fan_in + 1);
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], output: Activation, params: Vec<T>) -> Result<Self> {
        let net = Self::zeros(dims, output)?;
        if params.len() != net.params.len() {
            return Err(Error::dim("network parameters", net.params.len(), params.len()));
        }
        Ok(Mlp { params, ..net })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn same_shape<U>(&self, other: &Mlp<U>) -> bool {
        self.dims == other.dims && self.output == other.output
    }

    /// Same architecture with every parameter passed through `f`.
    pub fn map_params<U: Real>(&self, f: impl Fn(usize, T) -> U) -> Mlp<U> {
        Mlp { dims: self.dims.clone(), params: self.params.iter().enumerate().map(|(i, &p)| f(i, p)).collect(), output: self.output }
    }

    /// Copy with parameters `θ + scale·direction`.
    pub fn offset(&self, direction: &[T], scale: T) -> Mlp<T> {
        let mut out = self.clone();
        for (p, &d) in out.params.iter_mut().zip(direction) {
            *p += scale * d;
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, T>, &[T]) {
        let off: usize = self.dims[..l + 1].windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_out * fan_in]).unwrap();
        let b = &self.params[off + fan_out * fan_in..off + fan_out * (fan_in + 1)];
        (w, b)
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        Ok(self.forward_batch(x)?.output().row(0).to_vec())
    }

    pub fn forward_batch(&self, input: Array2<T>) -> Result<ForwardCache<T>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), input.ncols()));
        }
        let layers = self.layers();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input);
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = acts[l].dot(&w.t());
            let last = l + 1 == layers;
            for mut row in z.rows_mut() {
                for (v, &bias) in row.iter_mut().zip(b) {
                    let pre = *v + bias;
                    *v = match (last, self.output) {
                        (false, _) => pre.max(T::zero()),
                        (true, Activation::Identity) => pre,
                        (true, Activation::Tanh) => pre.tanh(),
                    };
                }
            }
            acts.push(z);
        }
        Ok(ForwardCache { acts })
    }

    /// Backpropagates `d_out = ∂loss/∂output` (batch × out).
    ///
    /// Returns the parameter gradient (empty when `want_params` is false) and
    /// the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &Array2<T>, want_params: bool) -> (Vec<T>, Array2<T>) {
        let mut delta = d_out.clone();
        if self.output == Activation::Tanh {
            delta.zip_mut_with(cache.output(), |d, &y| *d *= T::one() - y * y);
        }
        self.backward_pre(cache, delta, want_params)
    }

    /// Output-layer pre-activations `z` (equal to the output for identity heads).
    pub fn output_pre(&self, cache: &ForwardCache<T>) -> Array2<T> {
        let last = self.layers() - 1;
        let (w, b) = self.layer(last);
        let mut z = cache.acts[last].dot(&w.t());
        for mut row in z.rows_mut() {
            row.iter_mut().zip(b).for_each(|(v, &bias)| *v += bias);
        }
        z
    }

    /// Like [`Mlp::backward`] but starting from `∂loss/∂z` at the output layer.
    pub fn backward_pre(&self, cache: &ForwardCache<T>, d_pre: Array2<T>, want_params: bool) -> (Vec<T>, Array2<T>) {
        let layers = self.layers();
        let mut grads = if want_params { vec![T::zero(); self.params.len()] } else { Vec::new() };
        let mut delta = d_pre;
        let mut off = self.params.len();
        for l in (0..layers).rev() {
            let (w, _) = self.layer(l);
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            off -= fan_out * (fan_in + 1);
            if want_params {
                let dw = delta.t().dot(&cache.acts[l]);
                grads[off..off + fan_out * fan_in].iter_mut().zip(dw.iter()).for_each(|(g, &v)| *g = v);
                let db = delta.sum_axis(Axis(0));
                grads[off + fan_out * fan_in..off + fan_out * (fan_in + 1)]
                    .iter_mut()
                    .zip(db.iter())
                    .for_each(|(g, &v)| *g = v);
            }
            let mut d_in = delta.dot(&w);
            if l > 0 {
                d_in.zip_mut_with(&cache.acts[l], |d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
            }
            delta = d_in;
        }
        (grads, delta)
    }
}

/// Row-wise concatenation `[a | b]`.
pub fn hstack<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(a);
    out.slice_mut(s![.., a.ncols()..]).assign(b);
    out
}

/// Column block `[from, to)` of `m`.
pub fn columns<T: Real>(m: &Array2<T>, from: usize, to: usize) -> Array2<T> {
    m.slice(s![.., from..to]).to_owned()
}

pub fn column_vec<T: Real>(v: &[T]) -> Array2<T> {
    Array1::from(v.to_vec()).insert_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_batch(rng: &mut PrngStream, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.uniform_in(-1.0, 1.0))
    }

    /// Single-sample forward pass written with scalar loops.
    fn oracle_forward(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut off = 0;
        let dims = net.dims();
        for l in 0..dims.len() - 1 {
            let (fi, fo) = (dims[l], dims[l + 1]);
            let p = &net.params()[off..];
            let mut z: Vec<f64> = (0..fo).map(|o| p[fo * fi + o] + (0..fi).map(|i| p[o * fi + i] * a[i]).sum::<f64>()).collect();
            let last = l + 2 == dims.len();
            for v in &mut z {
                *v = if !last {
                    v.max(0.0)
                } else if net.output_activation() == Activation::Tanh {
                    v.tanh()
                } else {
                    *v
                };
            }
            a = z;
            off += fo * (fi + 1);
        }
        a
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[3, 4, 2], Activation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        let net = Mlp::from_params(&[1, 1], Activation::Identity, vec![2.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn tanh_head_is_bounded() {
        let mut rng = PrngStream::new(1, 0);
        let net = Mlp::<f64>::init(&[4, 8, 3], Activation::Tanh, &mut rng, 50.0).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.uniform_in(-10.0, 10.0)).collect();
            assert!(net.forward(&x).unwrap().iter().all(|y| y.abs() <= 1.0));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::<f64>::zeros(&[3, 2], Activation::Identity).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(Mlp::<f64>::from_params(&[3, 2], Activation::Identity, vec![0.0; 5]).is_err());
        assert!(Mlp::<f64>::zeros(&[3], Activation::Identity).is_err());
    }

    #[test]
    fn batch_matches_scalar_oracle() {
        let mut rng = PrngStream::new(2, 0);
        for act in [Activation::Identity, Activation::Tanh] {
            let net = Mlp::<f64>::init(&[5, 7, 6, 3], act, &mut rng, 1.0).unwrap();
            let x = rand_batch(&mut rng, 4, 5);
            let out = net.forward_batch(x.clone()).unwrap();
            for r in 0..4 {
                let want = oracle_forward(&net, x.row(r).as_slice().unwrap());
                for (a, b) in out.output().row(r).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn output_pre_inverts_tanh() {
        let mut rng = PrngStream::new(3, 0);
        let net = Mlp::<f64>::init(&[4, 6, 3], Activation::Tanh, &mut rng, 1.0).unwrap();
        let cache = net.forward_batch(rand_batch(&mut rng, 5, 4)).unwrap();
        let z = net.output_pre(&cache);
        for (zv, y) in z.iter().zip(cache.output()) {
            assert!((zv.tanh() - y).abs() < 1e-14);
        }
    }

    fn fd_check(net: &Mlp<f64>, x: &Array2<f64>, weights: &Array2<f64>) {
        // loss = Σ weights ⊙ output
        let loss = |n: &Mlp<f64>, x: &Array2<f64>| (n.forward_batch(x.clone()).unwrap().output() * weights).sum();
        let cache = net.forward_batch(x.clone()).unwrap();
        let (g, dx) = net.backward(&cache, weights, true);
        let h = 1e-6;
        for i in 0..net.num_params() {
            let mut up = net.clone();
            up.params_mut()[i] += h;
            let mut dn = net.clone();
            dn.params_mut()[i] -= h;
            let fd = (loss(&up, x) - loss(&dn, x)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
        for idx in [(0, 0), (1, 2), (2, 3)] {
            let mut up = x.clone();
            up[idx] += h;
            let mut dn = x.clone();
            dn[idx] -= h;
            let fd = (loss(net, &up) - loss(net, &dn)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = PrngStream::new(3, 0);
        for act in [Activation::Identity, Activation::Tanh] {
            let net = Mlp::<f64>::init(&[4, 6, 5, 2], act, &mut rng, 1.0).unwrap();
            let x = rand_batch(&mut rng, 3, 4);
            let w = rand_batch(&mut rng, 3, 2);
            fd_check(&net, &x, &w);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = PrngStream::new(4, 0);
        let net = Mlp::<f64>::init(&[3, 4, 2], Activation::Tanh, &mut rng, 1.0).unwrap();
        let x = rand_batch(&mut rng, 5, 3);
        let cache = net.forward_batch(x).unwrap();
        let (g, dx) = net.backward(&cache, &Array2::zeros((5, 2)), true);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let mut rng = PrngStream::new(5, 0);
        let net = Mlp::<f64>::init(&[3, 5, 2], Activation::Identity, &mut rng, 1.0).unwrap();
        let x = rand_batch(&mut rng, 4, 3);
        let d = rand_batch(&mut rng, 4, 2);
        let (full, _) = net.backward(&net.forward_batch(x.clone()).unwrap(), &d, true);
        let mut summed = vec![0.0; net.num_params()];
        for r in 0..4 {
            let xr = x.slice(s![r..r + 1, ..]).to_owned();
            let dr = d.slice(s![r..r + 1, ..]).to_owned();
            let (g, _) = net.backward(&net.forward_batch(xr).unwrap(), &dr, true);
            summed.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        for (a, b) in full.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_instantiation() {
        let mut rng = PrngStream::new(6, 0);
        let net = Mlp::<f32>::init(&[2, 3, 1], Activation::Tanh, &mut rng, 1.0).unwrap();
        assert_eq!(net.forward(&[0.5, -0.5]).unwrap().len(), 1);
    }
}
