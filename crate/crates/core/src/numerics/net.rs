//! Dense networks on flat f32 parameter vectors.
//!
//! Two architectures cover every learner in the pipeline: [`Mlp`] (plain
//! feed-forward: denoiser, actor, critic, Q) and [`ResMlp`] (stem + skip
//! connected blocks + head: the chunked/single-step regression baselines).
//! Batched forward/backward go through one sgemm call per layer; gradient
//! accumulation over the batch happens inside the GEMM in a fixed order,
//! which keeps training bit-deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Hidden / output nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Mish,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f32) -> f32 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Mish => z * softplus(z).tanh(),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Double-precision twin of `apply`, for the reference forward.
    #[inline]
    fn apply_f64(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Mish => z * (z.max(0.0) + (-z.abs()).exp().ln_1p()).tanh(),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`.
    #[inline]
    fn grad(self, z: f32) -> f32 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Mish => {
                let sp = softplus(z);
                let t = sp.tanh();
                let sig = 1.0 / (1.0 + (-z).exp());
                t + z * (1.0 - t * t) * sig
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[inline]
fn softplus(z: f32) -> f32 {
    // Stable for large |z|.
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// y[b, out] = x[b, in] * W^T + bias, W row-major [out, in].
fn linear_forward(x: &[f32], b: usize, in_dim: usize, w: &[f32], bias: &[f32], out_dim: usize, y: &mut [f32]) {
    debug_assert_eq!(x.len(), b * in_dim);
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(y.len(), b * out_dim);
    unsafe {
        matrixmultiply::sgemm(
            b,
            in_dim,
            out_dim,
            1.0,
            x.as_ptr(),
            in_dim as isize,
            1,
            w.as_ptr(),
            1,
            in_dim as isize,
            0.0,
            y.as_mut_ptr(),
            out_dim as isize,
            1,
        );
    }
    for row in y.chunks_exact_mut(out_dim) {
        for (v, bb) in row.iter_mut().zip(bias) {
            *v += bb;
        }
    }
}

/// dx[b, in] = dz[b, out] * W.
fn linear_backward_input(dz: &[f32], b: usize, out_dim: usize, w: &[f32], in_dim: usize, dx: &mut [f32]) {
    unsafe {
        matrixmultiply::sgemm(
            b,
            out_dim,
            in_dim,
            1.0,
            dz.as_ptr(),
            out_dim as isize,
            1,
            w.as_ptr(),
            in_dim as isize,
            1,
            0.0,
            dx.as_mut_ptr(),
            in_dim as isize,
            1,
        );
    }
}

/// dW[out, in] += dz^T[out, b] * x[b, in]; db[out] += column sums of dz.
fn linear_backward_params(dz: &[f32], b: usize, out_dim: usize, x: &[f32], in_dim: usize, dw: &mut [f32], db: &mut [f32]) {
    unsafe {
        matrixmultiply::sgemm(
            out_dim,
            b,
            in_dim,
            1.0,
            dz.as_ptr(),
            1,
            out_dim as isize,
            x.as_ptr(),
            in_dim as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            in_dim as isize,
            1,
        );
    }
    for row in dz.chunks_exact(out_dim) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
}

/// Double-precision dense layer on f32-stored parameters: y = x W^T + b.
/// Reference path for gradient checks; plain loops, allocating.
fn linear_forward_f64(
    params: &[f32],
    layout: (usize, usize, usize, usize),
    x: &[f64],
    b: usize,
) -> Vec<f64> {
    let (wo, bo, i, o) = layout;
    debug_assert_eq!(x.len(), b * i);
    let mut y = vec![0.0f64; b * o];
    for r in 0..b {
        let row = &x[r * i..(r + 1) * i];
        for oi in 0..o {
            let mut acc = params[bo + oi] as f64;
            for (xv, wv) in row.iter().zip(&params[wo + oi * i..wo + (oi + 1) * i]) {
                acc += xv * (*wv as f64);
            }
            y[r * o + oi] = acc;
        }
    }
    y
}

fn apply_activation(act: Activation, z: &[f32], out: &mut [f32]) {
    for (o, &zv) in out.iter_mut().zip(z) {
        *o = act.apply(zv);
    }
}

fn mul_activation_grad(act: Activation, z: &[f32], d: &mut [f32]) {
    for (dv, &zv) in d.iter_mut().zip(z) {
        *dv *= act.grad(zv);
    }
}

/// Kaiming-style uniform fan-in init: U(-g * sqrt(3/fan_in), +g * sqrt(3/fan_in)),
/// gain sqrt(2) for rectifier-family hidden layers, 1 otherwise. Biases zero.
fn init_layer(w: &mut [f32], fan_in: usize, act: Activation, rng: &mut ChaCha8Rng) {
    let gain = match act {
        Activation::Relu | Activation::Mish => std::f32::consts::SQRT_2,
        _ => 1.0,
    };
    let bound = gain * (3.0 / fan_in as f32).sqrt();
    for v in w.iter_mut() {
        *v = (rng.gen::<f32>() * 2.0 - 1.0) * bound;
    }
}

/// Borrowed view of one linear layer inside a flat parameter vector.
pub struct LayerView<'a> {
    pub w: &'a [f32],
    pub b: &'a [f32],
    pub out_dim: usize,
    pub in_dim: usize,
}

/// Reusable intermediate buffers for forward/backward passes.
#[derive(Default)]
pub struct Scratch {
    bufs: Vec<Vec<f32>>,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Hands out buffer `idx` resized to `len`, contents unspecified.
    fn buf(&mut self, idx: usize, len: usize) -> &mut Vec<f32> {
        while self.bufs.len() <= idx {
            self.bufs.push(Vec::new());
        }
        let b = &mut self.bufs[idx];
        b.resize(len, 0.0);
        b
    }

    fn take(&mut self, idx: usize, len: usize) -> Vec<f32> {
        self.buf(idx, len);
        std::mem::take(&mut self.bufs[idx])
    }

    fn put(&mut self, idx: usize, v: Vec<f32>) {
        self.bufs[idx] = v;
    }
}

/// Common surface for trainable dense networks on flat parameter storage.
pub trait Net: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn params(&self) -> &[f32];
    fn params_mut(&mut self) -> &mut [f32];
    fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Batched forward: `x` is `b` rows of `in_dim`, output resized to
    /// `b * out_dim`.
    fn forward_batch(&self, x: &[f32], b: usize, y: &mut Vec<f32>, scratch: &mut Scratch);

    /// Runs forward + reverse pass for upstream gradient `dy` (length
    /// `b * out_dim`), accumulating parameter gradients into `grad`
    /// (length `param_count`, += semantics) and optionally writing input
    /// gradients.
    fn backward_batch(
        &self,
        x: &[f32],
        b: usize,
        dy: &[f32],
        grad: &mut [f32],
        dx: Option<&mut Vec<f32>>,
        scratch: &mut Scratch,
    );

    /// Layer views in parameter-vector order, for serialization.
    fn layers(&self) -> Vec<LayerView<'_>>;

    /// Double-precision reference forward over the same f32 parameters.
    /// Finite-difference gradient checks need a loss whose noise floor sits
    /// far below the analytic gradient; the production f32 path cannot
    /// provide that.
    fn forward_batch_f64(&self, x: &[f64], b: usize) -> Vec<f64>;

    /// Single-sample convenience forward.
    fn forward1(&self, x: &[f32]) -> Vec<f32> {
        let mut y = Vec::new();
        let mut s = Scratch::new();
        self.forward_batch(x, 1, &mut y, &mut s);
        y
    }
}

/// Plain feed-forward network: `layer_sizes = [in, h1, .., out]`, the same
/// hidden activation everywhere, separate output activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_activation: Activation,
    params: Vec<f32>,
    /// (w_offset, b_offset, in, out) per layer.
    layout: Vec<(usize, usize, usize, usize)>,
}

fn dense_layout(dims: &[(usize, usize)]) -> (Vec<(usize, usize, usize, usize)>, usize) {
    let mut layout = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &(i, o) in dims {
        layout.push((off, off + i * o, i, o));
        off += i * o + o;
    }
    (layout, off)
}

impl Mlp {
    pub fn new(
        layer_sizes: &[usize],
        activation: Activation,
        output_activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "layer_sizes must have >= 2 positive entries, got {layer_sizes:?}"
            )));
        }
        let dims: Vec<(usize, usize)> = layer_sizes.windows(2).map(|w| (w[0], w[1])).collect();
        let (layout, len) = dense_layout(&dims);
        let mut net = Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            output_activation,
            params: vec![0.0; len],
            layout,
        };
        let n_layers = net.layout.len();
        for l in 0..n_layers {
            let act = if l + 1 == n_layers { output_activation } else { activation };
            let (wo, bo, i, o) = net.layout[l];
            init_layer(&mut net.params[wo..wo + i * o], i, act, rng);
            let _ = bo;
        }
        Ok(net)
    }

    /// Rebuilds a network around an existing flat parameter vector.
    pub fn from_params(
        layer_sizes: &[usize],
        activation: Activation,
        output_activation: Activation,
        params: Vec<f32>,
    ) -> Result<Self> {
        let dims: Vec<(usize, usize)> = layer_sizes.windows(2).map(|w| (w[0], w[1])).collect();
        let (layout, len) = dense_layout(&dims);
        if params.len() != len {
            return Err(Error::Dependency(format!(
                "parameter count {} does not match architecture {layer_sizes:?} (expected {len})",
                params.len()
            )));
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            output_activation,
            params,
            layout,
        })
    }

    /// Scales the final layer's weights and biases: small-output init for
    /// actor heads.
    pub fn scale_last_layer(&mut self, factor: f32) {
        let (wo, _, i, o) = *self.layout.last().expect("mlp has layers");
        for v in &mut self.params[wo..wo + i * o + o] {
            *v *= factor;
        }
    }

    /// Overwrites the final layer's bias vector (critic head offset init).
    pub fn set_last_bias(&mut self, value: f32) {
        let (wo, bo, i, o) = *self.layout.last().expect("mlp has layers");
        debug_assert_eq!(bo, wo + i * o);
        for v in &mut self.params[bo..bo + o] {
            *v = value;
        }
    }

    fn act_at(&self, layer: usize) -> Activation {
        if layer + 1 == self.layout.len() {
            self.output_activation
        } else {
            self.activation
        }
    }
}

impl Net for Mlp {
    fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn params(&self) -> &[f32] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn forward_batch(&self, x: &[f32], b: usize, y: &mut Vec<f32>, scratch: &mut Scratch) {
        assert_eq!(x.len(), b * self.in_dim(), "input length mismatch");
        let n = self.layout.len();
        let mut cur = scratch.take(0, x.len());
        cur.copy_from_slice(x);
        let mut next = scratch.take(1, 0);
        for (l, &(wo, bo, i, o)) in self.layout.iter().enumerate() {
            next.resize(b * o, 0.0);
            linear_forward(&cur, b, i, &self.params[wo..wo + i * o], &self.params[bo..bo + o], o, &mut next);
            let act = self.act_at(l);
            if act != Activation::Linear {
                let z = next.clone();
                apply_activation(act, &z, &mut next);
            }
            if l + 1 == n {
                y.clear();
                y.extend_from_slice(&next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        scratch.put(0, cur);
        scratch.put(1, next);
    }

    fn backward_batch(
        &self,
        x: &[f32],
        b: usize,
        dy: &[f32],
        grad: &mut [f32],
        dx: Option<&mut Vec<f32>>,
        scratch: &mut Scratch,
    ) {
        assert_eq!(x.len(), b * self.in_dim(), "input length mismatch");
        assert_eq!(dy.len(), b * self.out_dim(), "upstream gradient length mismatch");
        assert_eq!(grad.len(), self.param_count(), "gradient buffer length mismatch");
        let n = self.layout.len();

        // Forward, keeping pre-activations (z) and layer inputs (a).
        let mut zs: Vec<Vec<f32>> = Vec::with_capacity(n);
        let mut inputs: Vec<Vec<f32>> = Vec::with_capacity(n);
        let mut cur = x.to_vec();
        for &(wo, bo, i, o) in &self.layout {
            let mut z = vec![0.0; b * o];
            linear_forward(&cur, b, i, &self.params[wo..wo + i * o], &self.params[bo..bo + o], o, &mut z);
            inputs.push(cur);
            let mut a = z.clone();
            let l = zs.len();
            let act = self.act_at(l);
            if act != Activation::Linear {
                apply_activation(act, &z, &mut a);
            }
            zs.push(z);
            cur = a;
        }

        // Reverse.
        let mut delta = dy.to_vec();
        for l in (0..n).rev() {
            let (wo, bo, i, o) = self.layout[l];
            mul_activation_grad(self.act_at(l), &zs[l], &mut delta);
            {
                let (dw, rest) = grad[wo..bo + o].split_at_mut(i * o);
                linear_backward_params(&delta, b, o, &inputs[l], i, dw, rest);
            }
            if l > 0 {
                let mut prev = scratch.take(2, b * i);
                linear_backward_input(&delta, b, o, &self.params[wo..wo + i * o], i, &mut prev);
                scratch.put(2, std::mem::replace(&mut delta, prev));
            } else if let Some(dx) = dx {
                dx.resize(b * i, 0.0);
                linear_backward_input(&delta, b, o, &self.params[wo..wo + i * o], i, dx);
                return;
            }
        }
    }

    fn layers(&self) -> Vec<LayerView<'_>> {
        self.layout
            .iter()
            .map(|&(wo, bo, i, o)| LayerView {
                w: &self.params[wo..wo + i * o],
                b: &self.params[bo..bo + o],
                out_dim: o,
                in_dim: i,
            })
            .collect()
    }

    fn forward_batch_f64(&self, x: &[f64], b: usize) -> Vec<f64> {
        assert_eq!(x.len(), b * self.in_dim(), "input length mismatch");
        let mut cur = x.to_vec();
        for (l, &layout) in self.layout.iter().enumerate() {
            let mut z = linear_forward_f64(&self.params, layout, &cur, b);
            let act = self.act_at(l);
            for v in &mut z {
                *v = act.apply_f64(*v);
            }
            cur = z;
        }
        cur
    }
}

/// Stem + skip-connected blocks + head. Each block is a pair of linear +
/// activation layers whose output is added to the block input:
/// `h <- h + act(W2 act(W1 h + b1) + b2)`.
#[derive(Clone, Debug)]
pub struct ResMlp {
    pub input_dim: usize,
    pub width: usize,
    pub blocks: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_activation: Activation,
    params: Vec<f32>,
    layout: Vec<(usize, usize, usize, usize)>,
}

impl ResMlp {
    pub fn new(
        input_dim: usize,
        width: usize,
        blocks: usize,
        output_dim: usize,
        activation: Activation,
        output_activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || width == 0 || output_dim == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        let mut dims = vec![(input_dim, width)];
        for _ in 0..blocks {
            dims.push((width, width));
            dims.push((width, width));
        }
        dims.push((width, output_dim));
        let (layout, len) = dense_layout(&dims);
        let mut net = ResMlp {
            input_dim,
            width,
            blocks,
            output_dim,
            activation,
            output_activation,
            params: vec![0.0; len],
            layout,
        };
        let n = net.layout.len();
        for l in 0..n {
            let act = if l + 1 == n { output_activation } else { activation };
            let (wo, _, i, o) = net.layout[l];
            init_layer(&mut net.params[wo..wo + i * o], i, act, rng);
        }
        Ok(net)
    }

    pub fn from_params(
        input_dim: usize,
        width: usize,
        blocks: usize,
        output_dim: usize,
        activation: Activation,
        output_activation: Activation,
        params: Vec<f32>,
    ) -> Result<Self> {
        let mut dims = vec![(input_dim, width)];
        for _ in 0..blocks {
            dims.push((width, width));
            dims.push((width, width));
        }
        dims.push((width, output_dim));
        let (layout, len) = dense_layout(&dims);
        if params.len() != len {
            return Err(Error::Dependency(format!(
                "parameter count {} does not match architecture (expected {len})",
                params.len()
            )));
        }
        Ok(ResMlp {
            input_dim,
            width,
            blocks,
            output_dim,
            activation,
            output_activation,
            params,
            layout,
        })
    }

    fn linear(&self, l: usize, x: &[f32], b: usize, y: &mut Vec<f32>) {
        let (wo, bo, i, o) = self.layout[l];
        y.resize(b * o, 0.0);
        linear_forward(x, b, i, &self.params[wo..wo + i * o], &self.params[bo..bo + o], o, y);
    }
}

impl Net for ResMlp {
    fn in_dim(&self) -> usize {
        self.input_dim
    }

    fn out_dim(&self) -> usize {
        self.output_dim
    }

    fn params(&self) -> &[f32] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn forward_batch(&self, x: &[f32], b: usize, y: &mut Vec<f32>, scratch: &mut Scratch) {
        assert_eq!(x.len(), b * self.input_dim, "input length mismatch");
        let act = self.activation;
        let mut h = scratch.take(0, 0);
        self.linear(0, x, b, &mut h);
        let z = h.clone();
        apply_activation(act, &z, &mut h);

        let mut u = scratch.take(1, 0);
        let mut v = scratch.take(2, 0);
        for blk in 0..self.blocks {
            self.linear(1 + 2 * blk, &h, b, &mut u);
            let zu = u.clone();
            apply_activation(act, &zu, &mut u);
            self.linear(2 + 2 * blk, &u, b, &mut v);
            let zv = v.clone();
            apply_activation(act, &zv, &mut v);
            for (hv, vv) in h.iter_mut().zip(&v) {
                *hv += vv;
            }
        }

        self.linear(self.layout.len() - 1, &h, b, y);
        if self.output_activation != Activation::Linear {
            let zy = y.clone();
            apply_activation(self.output_activation, &zy, y);
        }
        scratch.put(0, h);
        scratch.put(1, u);
        scratch.put(2, v);
    }

    fn backward_batch(
        &self,
        x: &[f32],
        b: usize,
        dy: &[f32],
        grad: &mut [f32],
        dx: Option<&mut Vec<f32>>,
        scratch: &mut Scratch,
    ) {
        assert_eq!(x.len(), b * self.input_dim, "input length mismatch");
        assert_eq!(dy.len(), b * self.output_dim, "upstream gradient length mismatch");
        assert_eq!(grad.len(), self.param_count(), "gradient buffer length mismatch");
        let _ = scratch;
        let act = self.activation;

        // Forward with full intermediate retention.
        // Stem: z0, h0 = act(z0). Block k: zu_k, u_k, zv_k, h_{k+1} = h_k + act(zv_k).
        let mut z0 = Vec::new();
        self.linear(0, x, b, &mut z0);
        let mut h = z0.clone();
        apply_activation(act, &z0, &mut h);

        let mut hs: Vec<Vec<f32>> = vec![h.clone()]; // block inputs
        let mut zus: Vec<Vec<f32>> = Vec::with_capacity(self.blocks);
        let mut us: Vec<Vec<f32>> = Vec::with_capacity(self.blocks);
        let mut zvs: Vec<Vec<f32>> = Vec::with_capacity(self.blocks);
        for blk in 0..self.blocks {
            let mut zu = Vec::new();
            self.linear(1 + 2 * blk, &h, b, &mut zu);
            let mut u = zu.clone();
            apply_activation(act, &zu, &mut u);
            let mut zv = Vec::new();
            self.linear(2 + 2 * blk, &u, b, &mut zv);
            let mut v = zv.clone();
            apply_activation(act, &zv, &mut v);
            for (hv, vv) in h.iter_mut().zip(&v) {
                *hv += vv;
            }
            zus.push(zu);
            us.push(u);
            zvs.push(zv);
            hs.push(h.clone());
        }

        let head = self.layout.len() - 1;
        let mut zy = Vec::new();
        self.linear(head, &h, b, &mut zy);

        // Reverse.
        let mut d = dy.to_vec();
        mul_activation_grad(self.output_activation, &zy, &mut d);
        let mut dh = vec![0.0; b * self.width];
        {
            let (wo, bo, i, o) = self.layout[head];
            let (dw, rest) = grad[wo..bo + o].split_at_mut(i * o);
            linear_backward_params(&d, b, o, &hs[self.blocks], i, dw, rest);
            linear_backward_input(&d, b, o, &self.params[wo..wo + i * o], i, &mut dh);
        }

        let mut tmp = vec![0.0; b * self.width];
        for blk in (0..self.blocks).rev() {
            // dh flows through both the skip and the two-layer body.
            let mut dv = dh.clone();
            mul_activation_grad(act, &zvs[blk], &mut dv);
            {
                let (wo, bo, i, o) = self.layout[2 + 2 * blk];
                let (dw, rest) = grad[wo..bo + o].split_at_mut(i * o);
                linear_backward_params(&dv, b, o, &us[blk], i, dw, rest);
                linear_backward_input(&dv, b, o, &self.params[wo..wo + i * o], i, &mut tmp);
            }
            mul_activation_grad(act, &zus[blk], &mut tmp);
            {
                let (wo, bo, i, o) = self.layout[1 + 2 * blk];
                let (dw, rest) = grad[wo..bo + o].split_at_mut(i * o);
                linear_backward_params(&tmp, b, o, &hs[blk], i, dw, rest);
                let mut dskip = vec![0.0; b * self.width];
                linear_backward_input(&tmp, b, o, &self.params[wo..wo + i * o], i, &mut dskip);
                for (dhv, dsv) in dh.iter_mut().zip(&dskip) {
                    *dhv += dsv;
                }
            }
        }

        mul_activation_grad(act, &z0, &mut dh);
        let (wo, bo, i, o) = self.layout[0];
        {
            let (dw, rest) = grad[wo..bo + o].split_at_mut(i * o);
            linear_backward_params(&dh, b, o, x, i, dw, rest);
        }
        if let Some(dx) = dx {
            dx.resize(b * i, 0.0);
            linear_backward_input(&dh, b, o, &self.params[wo..wo + i * o], i, dx);
        }
    }

    fn layers(&self) -> Vec<LayerView<'_>> {
        self.layout
            .iter()
            .map(|&(wo, bo, i, o)| LayerView {
                w: &self.params[wo..wo + i * o],
                b: &self.params[bo..bo + o],
                out_dim: o,
                in_dim: i,
            })
            .collect()
    }

    fn forward_batch_f64(&self, x: &[f64], b: usize) -> Vec<f64> {
        assert_eq!(x.len(), b * self.input_dim, "input length mismatch");
        let act = self.activation;
        let apply = |v: Vec<f64>, a: Activation| -> Vec<f64> {
            v.into_iter().map(|z| a.apply_f64(z)).collect()
        };
        let mut h = apply(linear_forward_f64(&self.params, self.layout[0], x, b), act);
        for blk in 0..self.blocks {
            let u = apply(
                linear_forward_f64(&self.params, self.layout[1 + 2 * blk], &h, b),
                act,
            );
            let v = apply(
                linear_forward_f64(&self.params, self.layout[2 + 2 * blk], &u, b),
                act,
            );
            for (hv, vv) in h.iter_mut().zip(&v) {
                *hv += vv;
            }
        }
        apply(
            linear_forward_f64(&self.params, *self.layout.last().unwrap(), &h, b),
            self.output_activation,
        )
    }
}

/// Mean-squared-error loss over a batch with gradient accumulation:
/// loss = mean((net(x) - target)^2) over all b * out_dim entries, summed in
/// f64. Parameter gradients are added into `grad`.
pub fn mse_loss_grad<N: Net>(
    net: &N,
    x: &[f32],
    b: usize,
    target: &[f32],
    grad: &mut [f32],
    scratch: &mut Scratch,
) -> f64 {
    let out = net.out_dim();
    assert_eq!(target.len(), b * out, "target length mismatch");
    let mut y = Vec::new();
    net.forward_batch(x, b, &mut y, scratch);
    let mut loss = 0.0f64;
    let scale = 1.0 / (b * out) as f32;
    let mut dy = vec![0.0f32; b * out];
    for i in 0..b * out {
        let d = y[i] - target[i];
        loss += (d as f64) * (d as f64);
        dy[i] = 2.0 * d * scale;
    }
    net.backward_batch(x, b, &dy, grad, None, scratch);
    loss / (b * out) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_rng;

    fn tiny_mlp(act: Activation, out_act: Activation) -> Mlp {
        let mut rng = named_rng(1, "test-net");
        Mlp::new(&[3, 4, 2], act, out_act, &mut rng).unwrap()
    }

    #[test]
    fn zero_net_maps_to_biases() {
        let mut net = tiny_mlp(Activation::Relu, Activation::Linear);
        net.params_mut().fill(0.0);
        let y = net.forward1(&[1.0, -2.0, 3.0]);
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_is_matvec() {
        let mut rng = named_rng(2, "test-net");
        let mut net = Mlp::new(&[2, 2], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        // W = [[1, 2], [3, 4]], b = [10, 20]
        net.params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 10.0, 20.0]);
        let y = net.forward1(&[1.0, 1.0]);
        assert_eq!(y, vec![13.0, 27.0]);
    }

    #[test]
    fn relu_output_activation_clips() {
        let mut rng = named_rng(2, "test-net");
        let mut net = Mlp::new(&[1, 1], Activation::Relu, Activation::Relu, &mut rng).unwrap();
        net.params_mut().copy_from_slice(&[1.0, 0.0]);
        assert_eq!(net.forward1(&[-5.0]), vec![0.0]);
        assert_eq!(net.forward1(&[5.0]), vec![5.0]);
    }

    #[test]
    fn f64_reference_tracks_f32_forward() {
        let mut rng = named_rng(31, "test-net");
        let mlp = Mlp::new(&[5, 16, 16, 3], Activation::Mish, Activation::Linear, &mut rng).unwrap();
        let res =
            ResMlp::new(5, 16, 2, 3, Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let b = 4;
        let x32: Vec<f32> = (0..b * 5).map(|i| ((i as f32) * 0.71).sin()).collect();
        let x64: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
        let mut scratch = Scratch::new();
        for net in [&mlp as &dyn Net, &res] {
            let mut y32 = Vec::new();
            net.forward_batch(&x32, b, &mut y32, &mut scratch);
            let y64 = net.forward_batch_f64(&x64, b);
            for (a, c) in y32.iter().zip(&y64) {
                assert!(
                    ((*a as f64) - c).abs() < 1e-4,
                    "f32 {a} vs f64 reference {c}"
                );
            }
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = tiny_mlp(Activation::Mish, Activation::Tanh);
        let xs = [[0.1f32, -0.4, 0.9], [1.5, 0.0, -2.0]];
        let flat: Vec<f32> = xs.iter().flatten().copied().collect();
        let mut y = Vec::new();
        net.forward_batch(&flat, 2, &mut y, &mut Scratch::new());
        for (i, x) in xs.iter().enumerate() {
            let yi = net.forward1(x);
            for j in 0..2 {
                assert!((y[i * 2 + j] - yi[j]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_is_zero() {
        let net = tiny_mlp(Activation::Relu, Activation::Linear);
        let mut grad = vec![0.0; net.param_count()];
        let x = [0.3f32, 0.6, -0.2];
        net.backward_batch(&x, 1, &[0.0, 0.0], &mut grad, None, &mut Scratch::new());
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_linear_gradient_by_hand() {
        // y = Wx + b, upstream u: dW = u x^T, db = u, dx = W^T u.
        let mut rng = named_rng(3, "test-net");
        let mut net = Mlp::new(&[2, 2], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        net.params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
        let mut grad = vec![0.0; 6];
        let mut dx = Vec::new();
        net.backward_batch(
            &[5.0, 7.0],
            1,
            &[1.0, -1.0],
            &mut grad,
            Some(&mut dx),
            &mut Scratch::new(),
        );
        assert_eq!(grad, vec![5.0, 7.0, -5.0, -7.0, 1.0, -1.0]);
        assert_eq!(dx, vec![1.0 - 3.0, 2.0 - 4.0]);
    }

    #[test]
    fn resmlp_skip_identity_when_body_zero() {
        let mut rng = named_rng(4, "test-net");
        let mut net =
            ResMlp::new(2, 2, 1, 2, Activation::Relu, Activation::Linear, &mut rng).unwrap();
        let n = net.param_count();
        net.params_mut().fill(0.0);
        // Stem = identity, head = identity, block body zero: y = relu(x).
        let layers: Vec<(usize, usize)> = net.layers().iter().map(|l| (l.in_dim, l.out_dim)).collect();
        assert_eq!(layers, vec![(2, 2), (2, 2), (2, 2), (2, 2)]);
        let p = net.params_mut();
        p[0] = 1.0;
        p[3] = 1.0; // stem W = I
        p[n - 6] = 1.0;
        p[n - 3] = 1.0; // head W = I
        let y = net.forward1(&[0.5, -0.5]);
        assert_eq!(y, vec![0.5, 0.0]);
    }

    #[test]
    fn mse_zero_at_exact_fit() {
        let mut rng = named_rng(5, "test-net");
        let mut net = Mlp::new(&[1, 1], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        net.params_mut().copy_from_slice(&[2.0, 1.0]);
        let mut grad = vec![0.0; 2];
        let loss = mse_loss_grad(&net, &[3.0], 1, &[7.0], &mut grad, &mut Scratch::new());
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let net = tiny_mlp(Activation::Mish, Activation::Linear);
        let x = [0.2f32, -0.7, 1.3];
        let a = net.forward1(&x);
        let b = net.forward1(&x);
        assert_eq!(a, b);
    }
}
