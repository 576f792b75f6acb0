//! The network `F` inside the preconditioned denoiser: a 1-D convolutional
//! encoder-decoder with two resolution levels, additive skips and SiLU, conditioned
//! on the noise level through sinusoidal features and per-level biases.
//!
//! ```text
//! x ─ conv_in ─ h0 ─ pool ─ down1 ─ h1 ─ pool ─ down2 ─ h2
//!                │                   │                   │
//!                │                   └──(+)── up1 ─ up ──┘
//!                └────────(+)── up0 ─ up ─┘
//!                          └─ conv_out ─ y
//! ```
//!
//! All parameters live in one flat buffer so optimizers and checkpoints treat
//! them uniformly. Gradients are derived by hand.

use serde::{Deserialize, Serialize};

use crate::clip::LatentClip;
use crate::error::{Error, Result};

/// Shape of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Data channels `C` (input and output).
    pub channels: usize,
    /// Width at full resolution.
    pub base: usize,
    /// Width at the two coarser resolutions.
    pub mid: usize,
    /// Odd convolution kernel width.
    pub kernel: usize,
    /// Number of sinusoidal noise features (even).
    pub noise_features: usize,
}

impl Architecture {
    /// Desk-scale default: 32 -> 64 -> 64 -> 32, kernel 5, 16 noise features.
    pub fn standard(channels: usize) -> Self {
        Self {
            channels,
            base: 32,
            mid: 64,
            kernel: 5,
            noise_features: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base == 0 || self.mid == 0 {
            return Err(Error::config("architecture", "widths must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("architecture.kernel", "kernel width must be odd"));
        }
        if self.noise_features == 0 || self.noise_features % 2 != 0 {
            return Err(Error::config(
                "architecture.noise_features",
                "must be a positive even number",
            ));
        }
        Ok(())
    }

    /// Frames must survive two halvings.
    pub fn check_frames(&self, frames: usize) -> Result<()> {
        if frames == 0 || frames % 4 != 0 {
            return Err(Error::Contract(format!(
                "network needs a frame count divisible by 4, got {frames}"
            )));
        }
        Ok(())
    }

    fn conv_shapes(&self) -> [(usize, usize); 6] {
        let (c, b, m) = (self.channels, self.base, self.mid);
        // (out, in) for conv_in, down1, down2, up1, up0, conv_out
        [(b, c), (m, b), (m, m), (m, m), (b, m), (c, b)]
    }

    /// Total width of the per-level noise biases (conv_in .. up0).
    fn bias_width(&self) -> usize {
        self.conv_shapes()[..5].iter().map(|s| s.0).sum()
    }

    /// Named tensors in buffer order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        const NAMES: [&str; 6] = ["conv_in", "down1", "down2", "up1", "up0", "conv_out"];
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let len: usize = shape.iter().product();
            specs.push(TensorSpec {
                name,
                shape,
                offset,
                fan_in,
            });
            offset += len;
        };
        for (name, (o, i)) in NAMES.iter().zip(self.conv_shapes()) {
            push(format!("{name}.weight"), vec![o, i, self.kernel], i * self.kernel);
            push(format!("{name}.bias"), vec![o], i * self.kernel);
        }
        let w = self.bias_width();
        push("noise.weight".into(), vec![w, self.noise_features], self.noise_features);
        push("noise.bias".into(), vec![w], self.noise_features);
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map(|s| s.offset + s.len()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Sinusoidal expansion of `c_noise`: `sin(f_j c)` and `cos(f_j c)` for
/// geometrically spaced `f_j` in `[0.5, 32]`.
pub fn noise_embedding(c_noise: f64, n_features: usize) -> Vec<f64> {
    let half = n_features / 2;
    let mut out = Vec::with_capacity(n_features);
    let freqs: Vec<f64> = (0..half)
        .map(|j| {
            if half == 1 {
                1.0
            } else {
                0.5 * 64f64.powf(j as f64 / (half - 1) as f64)
            }
        })
        .collect();
    out.extend(freqs.iter().map(|f| (f * c_noise).sin()));
    out.extend(freqs.iter().map(|f| (f * c_noise).cos()));
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Same-padded stride-1 convolution. `input` is `cin x t`, `out` is `cout x t`
/// and is overwritten.
fn conv_forward(w: &[f64], b: &[f64], input: &[f64], cin: usize, cout: usize, k: usize, t: usize, out: &mut [f64]) {
    let pad = k / 2;
    for o in 0..cout {
        let row = &mut out[o * t..(o + 1) * t];
        row.fill(b[o]);
        for c in 0..cin {
            let src = &input[c * t..(c + 1) * t];
            let taps = &w[(o * cin + c) * k..(o * cin + c + 1) * k];
            for (j, &wv) in taps.iter().enumerate() {
                // out[s] += wv * src[s + j - pad]
                if j >= pad {
                    let sh = j - pad;
                    for (r, s) in row[..t - sh].iter_mut().zip(&src[sh..]) {
                        *r += wv * s;
                    }
                } else {
                    let sh = pad - j;
                    for (r, s) in row[sh..].iter_mut().zip(&src[..t - sh]) {
                        *r += wv * s;
                    }
                }
            }
        }
    }
}

/// Backward of [`conv_forward`]: accumulates into `gw`, `gb` and (when given) `gin`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    w: &[f64],
    input: &[f64],
    gout: &[f64],
    cin: usize,
    cout: usize,
    k: usize,
    t: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    mut gin: Option<&mut [f64]>,
) {
    let pad = k / 2;
    for o in 0..cout {
        let g = &gout[o * t..(o + 1) * t];
        gb[o] += g.iter().sum::<f64>();
        for c in 0..cin {
            let src = &input[c * t..(c + 1) * t];
            let base = (o * cin + c) * k;
            for j in 0..k {
                let (gs, ss) = if j >= pad {
                    let sh = j - pad;
                    (&g[..t - sh], &src[sh..])
                } else {
                    let sh = pad - j;
                    (&g[sh..], &src[..t - sh])
                };
                gw[base + j] += gs.iter().zip(ss).map(|(a, b)| a * b).sum::<f64>();
            }
            if let Some(gin) = gin.as_deref_mut() {
                let dst = &mut gin[c * t..(c + 1) * t];
                for j in 0..k {
                    let wv = w[base + j];
                    if j >= pad {
                        let sh = j - pad;
                        for (d, a) in dst[sh..].iter_mut().zip(&g[..t - sh]) {
                            *d += wv * a;
                        }
                    } else {
                        let sh = pad - j;
                        for (d, a) in dst[..t - sh].iter_mut().zip(&g[sh..]) {
                            *d += wv * a;
                        }
                    }
                }
            }
        }
    }
}

fn pool2(input: &[f64], ch: usize, t: usize) -> Vec<f64> {
    let h = t / 2;
    let mut out = vec![0.0; ch * h];
    for c in 0..ch {
        for s in 0..h {
            out[c * h + s] = 0.5 * (input[c * t + 2 * s] + input[c * t + 2 * s + 1]);
        }
    }
    out
}

fn pool2_backward(gout: &[f64], ch: usize, t: usize) -> Vec<f64> {
    let h = t / 2;
    let mut gin = vec![0.0; ch * t];
    for c in 0..ch {
        for s in 0..h {
            let g = 0.5 * gout[c * h + s];
            gin[c * t + 2 * s] = g;
            gin[c * t + 2 * s + 1] = g;
        }
    }
    gin
}

fn up2(input: &[f64], ch: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; ch * 2 * t];
    for c in 0..ch {
        for s in 0..t {
            let v = input[c * t + s];
            out[c * 2 * t + 2 * s] = v;
            out[c * 2 * t + 2 * s + 1] = v;
        }
    }
    out
}

fn up2_backward(gout: &[f64], ch: usize, t: usize) -> Vec<f64> {
    let mut gin = vec![0.0; ch * t];
    for c in 0..ch {
        for s in 0..t {
            gin[c * t + s] = gout[c * 2 * t + 2 * s] + gout[c * 2 * t + 2 * s + 1];
        }
    }
    gin
}

/// Pre-activations and activations kept for the backward pass.
struct Trace {
    emb_in: Vec<f64>,
    x: Vec<f64>,
    z0: Vec<f64>,
    p0: Vec<f64>,
    z1: Vec<f64>,
    p1: Vec<f64>,
    z2: Vec<f64>,
    u2: Vec<f64>,
    z3: Vec<f64>,
    u3: Vec<f64>,
    z4: Vec<f64>,
    h4: Vec<f64>,
}

/// Stateless view binding an architecture to a parameter buffer.
pub struct Network<'a> {
    arch: Architecture,
    params: &'a [f64],
    specs: Vec<TensorSpec>,
}

impl<'a> Network<'a> {
    pub fn new(arch: Architecture, params: &'a [f64]) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Contract(format!(
                "architecture needs {} parameters, buffer holds {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            arch,
            params,
            specs: arch.layout(),
        })
    }

    fn tensor(&self, i: usize) -> &[f64] {
        &self.params[self.specs[i].range()]
    }

    /// Per-level biases from the noise embedding: `W e + b`.
    fn level_biases(&self, emb: &[f64]) -> Vec<f64> {
        let w = self.tensor(12);
        let b = self.tensor(13);
        let nf = self.arch.noise_features;
        b.iter()
            .enumerate()
            .map(|(r, bv)| bv + w[r * nf..(r + 1) * nf].iter().zip(emb).map(|(a, e)| a * e).sum::<f64>())
            .collect()
    }

    fn conv(&self, layer: usize, input: &[f64], t: usize, extra_bias: Option<&[f64]>) -> Vec<f64> {
        let (cout, cin) = self.arch.conv_shapes()[layer];
        let w = self.tensor(2 * layer);
        let b: Vec<f64> = match extra_bias {
            Some(e) => self.tensor(2 * layer + 1).iter().zip(e).map(|(a, b)| a + b).collect(),
            None => self.tensor(2 * layer + 1).to_vec(),
        };
        let mut out = vec![0.0; cout * t];
        conv_forward(w, &b, input, cin, cout, self.arch.kernel, t, &mut out);
        out
    }

    fn bias_slices(&self, biases: &'_ [f64]) -> [std::ops::Range<usize>; 5] {
        let shapes = self.arch.conv_shapes();
        let mut ranges: [std::ops::Range<usize>; 5] = Default::default();
        let mut o = 0;
        for (i, r) in ranges.iter_mut().enumerate() {
            *r = o..o + shapes[i].0;
            o += shapes[i].0;
        }
        debug_assert_eq!(o, biases.len());
        ranges
    }

    fn run(&self, x: &[f64], frames: usize, emb: &[f64]) -> (Vec<f64>, Trace) {
        let a = self.arch;
        let t = frames;
        let biases = self.level_biases(emb);
        let br = self.bias_slices(&biases);

        let z0 = self.conv(0, x, t, Some(&biases[br[0].clone()]));
        let h0: Vec<f64> = z0.iter().map(|&v| silu(v)).collect();
        let p0 = pool2(&h0, a.base, t);
        let z1 = self.conv(1, &p0, t / 2, Some(&biases[br[1].clone()]));
        let h1: Vec<f64> = z1.iter().map(|&v| silu(v)).collect();
        let p1 = pool2(&h1, a.mid, t / 2);
        let z2 = self.conv(2, &p1, t / 4, Some(&biases[br[2].clone()]));
        let h2: Vec<f64> = z2.iter().map(|&v| silu(v)).collect();
        let u2 = up2(&h2, a.mid, t / 4);
        let z3 = self.conv(3, &u2, t / 2, Some(&biases[br[3].clone()]));
        let h3: Vec<f64> = z3.iter().zip(&h1).map(|(&v, s)| silu(v) + s).collect();
        let u3 = up2(&h3, a.mid, t / 2);
        let z4 = self.conv(4, &u3, t, Some(&biases[br[4].clone()]));
        let h4: Vec<f64> = z4.iter().zip(&h0).map(|(&v, s)| silu(v) + s).collect();
        let y = self.conv(5, &h4, t, None);

        let trace = Trace {
            emb_in: emb.to_vec(),
            x: x.to_vec(),
            z0,
            p0,
            z1,
            p1,
            z2,
            u2,
            z3,
            u3,
            z4,
            h4,
        };
        (y, trace)
    }

    /// Forward pass on a `C x T` input with a noise embedding vector.
    pub fn apply(&self, x: &LatentClip, emb: &[f64]) -> Result<LatentClip> {
        x.ensure_shape(self.arch.channels, x.frames())?;
        self.arch.check_frames(x.frames())?;
        if emb.len() != self.arch.noise_features {
            return Err(Error::Contract(format!(
                "noise embedding has {} features, network expects {}",
                emb.len(),
                self.arch.noise_features
            )));
        }
        let (y, _) = self.run(x.data(), x.frames(), emb);
        Ok(x.map_data(y))
    }

    /// Forward pass followed by backpropagation of `grad_out = dL/dy`.
    /// Gradients are accumulated into `grads` (same layout as the parameters).
    /// Returns the network output.
    pub fn apply_with_grad(&self, x: &[f64], frames: usize, emb: &[f64], grad_of_output: impl FnOnce(&[f64]) -> Vec<f64>, grads: &mut [f64]) -> Vec<f64> {
        let (y, tr) = self.run(x, frames, emb);
        let gy = grad_of_output(&y);
        self.backward(&tr, frames, &gy, grads);
        y
    }

    fn backward(&self, tr: &Trace, t: usize, gy: &[f64], grads: &mut [f64]) {
        let a = self.arch;
        let k = a.kernel;
        let shapes = a.conv_shapes();
        let specs = &self.specs;

        // Split the gradient buffer into per-tensor slices.
        let mut slices: Vec<&mut [f64]> = Vec::with_capacity(specs.len());
        let mut rest = grads;
        for s in specs {
            let (head, tail) = rest.split_at_mut(s.len());
            slices.push(head);
            rest = tail;
        }
        let mut g_level = vec![0.0; a.bias_width()];
        let biases_ranges = self.bias_slices(&g_level);

        let conv_bw = |layer: usize,
                           input: &[f64],
                           gout: &[f64],
                           tt: usize,
                           slices: &mut Vec<&mut [f64]>,
                           g_level: &mut [f64],
                           want_input: bool|
         -> Option<Vec<f64>> {
            let (cout, cin) = shapes[layer];
            let mut gin = want_input.then(|| vec![0.0; cin * tt]);
            let mut gb = vec![0.0; cout];
            {
                let (lo, hi) = slices.split_at_mut(2 * layer + 1);
                conv_backward(
                    self.tensor(2 * layer),
                    input,
                    gout,
                    cin,
                    cout,
                    k,
                    tt,
                    lo[2 * layer],
                    &mut gb,
                    gin.as_deref_mut(),
                );
                for (d, g) in hi[0].iter_mut().zip(&gb) {
                    *d += g;
                }
            }
            if layer < 5 {
                for (d, g) in g_level[biases_ranges[layer].clone()].iter_mut().zip(&gb) {
                    *d += g;
                }
            }
            gin
        };

        // y = conv_out(h4)
        let g_h4 = conv_bw(5, &tr.h4, gy, t, &mut slices, &mut g_level, true).unwrap();
        // h4 = silu(z4) + h0
        let g_z4: Vec<f64> = g_h4.iter().zip(&tr.z4).map(|(g, z)| g * silu_grad(*z)).collect();
        let mut g_h0 = g_h4;
        let g_u3 = conv_bw(4, &tr.u3, &g_z4, t, &mut slices, &mut g_level, true).unwrap();
        let g_h3 = up2_backward(&g_u3, a.mid, t / 2);
        // h3 = silu(z3) + h1
        let g_z3: Vec<f64> = g_h3.iter().zip(&tr.z3).map(|(g, z)| g * silu_grad(*z)).collect();
        let mut g_h1 = g_h3;
        let g_u2 = conv_bw(3, &tr.u2, &g_z3, t / 2, &mut slices, &mut g_level, true).unwrap();
        let g_h2 = up2_backward(&g_u2, a.mid, t / 4);
        let g_z2: Vec<f64> = g_h2.iter().zip(&tr.z2).map(|(g, z)| g * silu_grad(*z)).collect();
        let g_p1 = conv_bw(2, &tr.p1, &g_z2, t / 4, &mut slices, &mut g_level, true).unwrap();
        for (d, g) in g_h1.iter_mut().zip(pool2_backward(&g_p1, a.mid, t / 2)) {
            *d += g;
        }
        let g_z1: Vec<f64> = g_h1.iter().zip(&tr.z1).map(|(g, z)| g * silu_grad(*z)).collect();
        let g_p0 = conv_bw(1, &tr.p0, &g_z1, t / 2, &mut slices, &mut g_level, true).unwrap();
        for (d, g) in g_h0.iter_mut().zip(pool2_backward(&g_p0, a.base, t)) {
            *d += g;
        }
        let g_z0: Vec<f64> = g_h0.iter().zip(&tr.z0).map(|(g, z)| g * silu_grad(*z)).collect();
        conv_bw(0, &tr.x, &g_z0, t, &mut slices, &mut g_level, false);

        // level biases = W e + b
        let nf = a.noise_features;
        for (r, g) in g_level.iter().enumerate() {
            let row = &mut slices[12][r * nf..(r + 1) * nf];
            for (d, e) in row.iter_mut().zip(&tr.emb_in) {
                *d += g * e;
            }
            slices[13][r] += g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::init_params;

    fn tiny() -> Architecture {
        Architecture {
            channels: 2,
            base: 2,
            mid: 3,
            kernel: 3,
            noise_features: 4,
        }
    }

    #[test]
    fn standard_layout_sizes() {
        let a = Architecture::standard(32);
        let names: Vec<String> = a.layout().iter().map(|s| s.name.clone()).collect();
        assert_eq!(names.len(), 14);
        assert_eq!(a.layout()[2].shape, vec![64, 32, 5]);
        assert!(tiny().param_count() <= 200, "{}", tiny().param_count());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let a = tiny();
        let p = vec![0.0; a.param_count()];
        let net = Network::new(a, &p).unwrap();
        let x = LatentClip::new(2, 8, (0..16).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let y = net.apply(&x, &noise_embedding(0.2, 4)).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let a = Architecture::standard(4);
        let p = init_params(&a, 3);
        let net = Network::new(a, &p).unwrap();
        let x = LatentClip::new(4, 16, (0..64).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let e = noise_embedding(-0.4, 16);
        let y1 = net.apply(&x, &e).unwrap();
        let y2 = net.apply(&x, &e).unwrap();
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn output_is_affine_in_an_output_weight() {
        let a = tiny();
        let mut p = init_params(&a, 5);
        let spec = a.layout().into_iter().find(|s| s.name == "conv_out.weight").unwrap();
        let idx = spec.offset + 1;
        let x = LatentClip::new(2, 8, (0..16).map(|v| (v as f64).cos()).collect()).unwrap();
        let e = noise_embedding(0.1, 4);
        let mut outs = Vec::new();
        for scale in [1.0, 2.0, 3.0] {
            let mut q = p.clone();
            q[idx] = p[idx] * scale;
            outs.push(Network::new(a, &q).unwrap().apply(&x, &e).unwrap().into_data());
        }
        for i in 0..16 {
            let d1 = outs[1][i] - outs[0][i];
            let d2 = outs[2][i] - outs[1][i];
            assert!((d1 - d2).abs() < 1e-12);
        }
        p[idx] = 0.0;
    }

    #[test]
    fn rejects_bad_frame_counts() {
        let a = tiny();
        let p = vec![0.0; a.param_count()];
        let net = Network::new(a, &p).unwrap();
        let x = LatentClip::zeros(2, 6);
        assert!(matches!(net.apply(&x, &[0.0; 4]), Err(Error::Contract(_))));
        assert!(Network::new(a, &p[1..]).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (cin, cout, k, t) = (2, 3, 5, 7);
        let w: Vec<f64> = (0..cout * cin * k).map(|i| (i as f64 * 0.7).sin()).collect();
        let b = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..cin * t).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut out = vec![0.0; cout * t];
        conv_forward(&w, &b, &x, cin, cout, k, t, &mut out);
        for o in 0..cout {
            for s in 0..t {
                let mut acc = b[o];
                for c in 0..cin {
                    for j in 0..k {
                        let idx = s as isize + j as isize - 2;
                        if (0..t as isize).contains(&idx) {
                            acc += w[(o * cin + c) * k + j] * x[c * t + idx as usize];
                        }
                    }
                }
                assert!((acc - out[o * t + s]).abs() < 1e-12);
            }
        }
    }
}
