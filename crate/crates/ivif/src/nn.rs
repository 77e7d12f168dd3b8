//! Small CNN building blocks: 3×3 same-padding convolutions with explicit
//! backward passes, elementwise activations, and an Adam optimizer.
//!
//! Everything runs in f64 with a fixed accumulation order, so repeated runs
//! with the same seed are bit-identical.

use ndarray::{Array1, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// 3×3 convolution, stride 1, zero padding 1. Weight layout `[out, in, 3, 3]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    /// Kaiming-style uniform init over `±sqrt(1/fan_in)`.
    pub fn init(in_ch: usize, out_ch: usize, rng: &mut ChaCha20Rng) -> Self {
        let bound = if in_ch == 0 { 0.0 } else { (1.0 / (in_ch * 9) as f64).sqrt() };
        let mut weight = Array4::zeros((out_ch, in_ch, 3, 3));
        for v in weight.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        let mut bias = Array1::zeros(out_ch);
        for v in bias.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        Conv2d { weight, bias }
    }

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Conv2d {
            weight: Array4::zeros((out_ch, in_ch, 3, 3)),
            bias: Array1::zeros(out_ch),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (o, i, _, _) = self.weight.dim();
        Conv2d::zeros(i, o)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Forward pass: `x` is `[C, H, W]`, output `[O, H, W]`.
    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (cin, h, w) = x.dim();
        debug_assert_eq!(cin, self.in_channels());
        let cout = self.out_channels();
        let mut out = Array3::zeros((cout, h, w));
        let xs = x.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout");
        let plane = h * w;
        for o in 0..cout {
            let dst = &mut os[o * plane..(o + 1) * plane];
            dst.fill(self.bias[o]);
            for c in 0..cin {
                let src = &xs[c * plane..(c + 1) * plane];
                for ku in 0..3usize {
                    for kv in 0..3usize {
                        let k = self.weight[(o, c, ku, kv)];
                        add_shifted(dst, src, h, w, ku as isize - 1, kv as isize - 1, k);
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `grad` and, when `gx` is
    /// given, the input gradient.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        gout: &Array3<f64>,
        grad: &mut Conv2d,
        mut gx: Option<&mut Array3<f64>>,
    ) {
        let (cin, h, w) = x.dim();
        let cout = self.out_channels();
        let plane = h * w;
        let xs = x.as_slice().expect("standard layout");
        let gs = gout.as_slice().expect("standard layout");
        for o in 0..cout {
            let go = &gs[o * plane..(o + 1) * plane];
            grad.bias[o] += go.iter().sum::<f64>();
            for c in 0..cin {
                let src = &xs[c * plane..(c + 1) * plane];
                for ku in 0..3usize {
                    for kv in 0..3usize {
                        grad.weight[(o, c, ku, kv)] +=
                            dot_shifted(go, src, h, w, ku as isize - 1, kv as isize - 1);
                    }
                }
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            let gxs = gx.as_slice_mut().expect("standard layout");
            for c in 0..cin {
                let dst = &mut gxs[c * plane..(c + 1) * plane];
                for o in 0..cout {
                    let go = &gs[o * plane..(o + 1) * plane];
                    for ku in 0..3usize {
                        for kv in 0..3usize {
                            let k = self.weight[(o, c, ku, kv)];
                            // adjoint of the forward shift
                            add_shifted(dst, go, h, w, 1 - ku as isize, 1 - kv as isize, k);
                        }
                    }
                }
            }
        }
    }
}

/// `dst[y][x] += k * src[y+dy][x+dx]` over the in-bounds region.
fn add_shifted(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, k: f64) {
    if k == 0.0 {
        return;
    }
    let y0 = (-dy).max(0) as usize;
    let y1 = h - dy.max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = w - dx.max(0) as usize;
    if y0 >= y1 || x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let sx0 = (x0 as isize + dx) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
        for (di, si) in d.iter_mut().zip(s) {
            *di += k * si;
        }
    }
}

/// `Σ a[y][x] * b[y+dy][x+dx]` over the in-bounds region.
fn dot_shifted(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let y0 = (-dy).max(0) as usize;
    let y1 = h - dy.max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = w - dx.max(0) as usize;
    if y0 >= y1 || x0 >= x1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let sx0 = (x0 as isize + dx) as usize;
        let av = &a[y * w + x0..y * w + x1];
        let bv = &b[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
        for (ai, bi) in av.iter().zip(bv) {
            acc += ai * bi;
        }
    }
    acc
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Gradient through leaky ReLU given the pre-activation values.
pub fn leaky_relu_backward(pre: &Array3<f64>, gout: &Array3<f64>) -> Array3<f64> {
    let mut g = gout.clone();
    g.zip_mut_with(pre, |gv, &z| {
        if z <= 0.0 {
            *gv *= LEAKY_SLOPE;
        }
    });
    g
}

pub fn sigmoid(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Gradient through sigmoid given the forward *output*.
pub fn sigmoid_backward(out: &Array3<f64>, gout: &Array3<f64>) -> Array3<f64> {
    let mut g = gout.clone();
    g.zip_mut_with(out, |gv, &s| *gv *= s * (1.0 - s));
    g
}

/// Adam with bias correction; `eps = 1e-8`. Moment buffers are allocated on
/// the first step and keyed by tensor order, which must stay stable.
#[derive(Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Adam { beta1, beta2, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
