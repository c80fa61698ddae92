//! Convolutional trunk with grouped softmax heads, forward and backward.
//!
//! Layers: `conv3×3(same) → ReLU → maxpool 2×2` per conv stage, then fully
//! connected ReLU layers, then `groups` independent heads of `classes`
//! logits each. For grasping there are 18 groups (angle bins) of 2 logits.
//! All parameters live in one flat vector in declaration order.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Arch {
    pub input_side: usize,
    pub kernel: usize,
    pub conv_channels: Vec<usize>,
    pub fc: Vec<usize>,
    pub groups: usize,
    pub classes: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            input_side: 48,
            kernel: 3,
            conv_channels: vec![8, 16, 32],
            fc: vec![256, 64],
            groups: 18,
            classes: 2,
        }
    }
}

impl Arch {
    /// AlexNet-sized layout kept for reference; far too large to train here.
    pub fn alexnet_scale() -> Self {
        Self {
            input_side: 227,
            kernel: 3,
            conv_channels: vec![96, 256, 384, 384, 256],
            fc: vec![4096, 1024],
            groups: 18,
            classes: 2,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.kernel % 2 == 0 {
            return Err(LearnError::Arch("kernel size must be odd".into()));
        }
        if self.groups == 0 || self.classes < 2 {
            return Err(LearnError::Arch("need at least one head of two classes".into()));
        }
        if self.conv_channels.contains(&0) || self.fc.contains(&0) || self.input_side == 0 {
            return Err(LearnError::Arch("layer sizes must be positive".into()));
        }
        if self.input_side >> self.conv_channels.len() == 0 {
            return Err(LearnError::Arch("input too small for the pooling stages".into()));
        }
        Ok(())
    }

    /// Same trunk with a different head block.
    pub fn with_heads(&self, groups: usize, classes: usize) -> Arch {
        Arch {
            groups,
            classes,
            ..self.clone()
        }
    }

    /// One-line description used in checkpoints.
    pub fn descriptor(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "convnet input={} kernel={} conv={} fc={} heads={}x{}",
            self.input_side,
            self.kernel,
            join(&self.conv_channels),
            join(&self.fc),
            self.groups,
            self.classes
        )
    }

    pub fn parse_descriptor(s: &str) -> Result<Arch, LearnError> {
        let bad = || LearnError::Checkpoint(format!("bad architecture descriptor: {s}"));
        let mut toks = s.split_whitespace();
        if toks.next() != Some("convnet") {
            return Err(bad());
        }
        let mut arch = Arch::default();
        let list = |v: &str| -> Result<Vec<usize>, LearnError> {
            v.split(',').map(|x| x.parse().map_err(|_| bad())).collect()
        };
        for t in toks {
            let (k, v) = t.split_once('=').ok_or_else(bad)?;
            match k {
                "input" => arch.input_side = v.parse().map_err(|_| bad())?,
                "kernel" => arch.kernel = v.parse().map_err(|_| bad())?,
                "conv" => arch.conv_channels = list(v)?,
                "fc" => arch.fc = list(v)?,
                "heads" => {
                    let (g, c) = v.split_once('x').ok_or_else(bad)?;
                    arch.groups = g.parse().map_err(|_| bad())?;
                    arch.classes = c.parse().map_err(|_| bad())?;
                }
                _ => return Err(bad()),
            }
        }
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvLayer {
    c_in: usize,
    c_out: usize,
    /// Spatial side of the input (and of the pre-pool output).
    side: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FcLayer {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

/// Parameter offsets into the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    convs: Vec<ConvLayer>,
    fcs: Vec<FcLayer>,
    head: FcLayer,
    kernel: usize,
    input_side: usize,
    groups: usize,
    classes: usize,
    len: usize,
}

impl Layout {
    pub fn new(arch: &Arch) -> Result<Layout, LearnError> {
        arch.validate()?;
        let k = arch.kernel;
        let mut off = 0;
        let mut side = arch.input_side;
        let mut c_in = 1;
        let mut convs = Vec::new();
        for &c_out in &arch.conv_channels {
            let w = off;
            off += c_out * c_in * k * k;
            let b = off;
            off += c_out;
            convs.push(ConvLayer {
                c_in,
                c_out,
                side,
                w,
                b,
            });
            c_in = c_out;
            side /= 2;
        }
        let mut n_in = c_in * side * side;
        let mut fcs = Vec::new();
        for &n_out in &arch.fc {
            let w = off;
            off += n_out * n_in;
            let b = off;
            off += n_out;
            fcs.push(FcLayer { n_in, n_out, w, b });
            n_in = n_out;
        }
        let n_out = arch.groups * arch.classes;
        let head = FcLayer {
            n_in,
            n_out,
            w: off,
            b: off + n_out * n_in,
        };
        off += n_out * n_in + n_out;
        Ok(Layout {
            convs,
            fcs,
            head,
            kernel: k,
            input_side: arch.input_side,
            groups: arch.groups,
            classes: arch.classes,
            len: off,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Parameter range of the convolutional stages.
    pub fn conv_range(&self) -> std::ops::Range<usize> {
        0..self.convs.last().map_or(0, |c| c.b + c.c_out)
    }

    /// Parameter range of head `g` (its weights, then its biases).
    pub fn head_ranges(&self, g: usize) -> [std::ops::Range<usize>; 2] {
        let per = self.classes * self.head.n_in;
        let w0 = self.head.w + g * per;
        let b0 = self.head.b + g * self.classes;
        [w0..w0 + per, b0..b0 + self.classes]
    }

    pub fn head_start(&self) -> usize {
        self.head.w
    }
}

/// Network parameters and their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Arch,
    layout: Layout,
    pub params: Vec<f64>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Scratch {
    /// Input to each conv stage (index 0 is the image).
    conv_in: Vec<Vec<f64>>,
    /// Post-ReLU output of each conv stage, before pooling.
    conv_out: Vec<Vec<f64>>,
    /// Flat index into `conv_out` chosen by each pooled cell.
    pool_arg: Vec<Vec<usize>>,
    /// Input to each fc layer and to the head.
    fc_in: Vec<Vec<f64>>,
    logits: Vec<f64>,
    d_fc: Vec<Vec<f64>>,
    d_conv: Vec<Vec<f64>>,
    d_pool: Vec<Vec<f64>>,
}

impl Scratch {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

impl Network {
    /// He-scaled Gaussian trunk; heads Gaussian with σ = `head_std`.
    pub fn init<R: Rng + ?Sized>(arch: &Arch, head_std: f64, rng: &mut R) -> Result<Network, LearnError> {
        let layout = Layout::new(arch)?;
        let mut params = vec![0.0; layout.len];
        let k2 = layout.kernel * layout.kernel;
        for c in &layout.convs {
            let n = Normal::new(0.0, (2.0 / (c.c_in * k2) as f64).sqrt()).expect("finite std");
            for p in &mut params[c.w..c.b] {
                *p = n.sample(rng);
            }
        }
        for f in &layout.fcs {
            let n = Normal::new(0.0, (2.0 / f.n_in as f64).sqrt()).expect("finite std");
            for p in &mut params[f.w..f.b] {
                *p = n.sample(rng);
            }
        }
        if head_std > 0.0 {
            let n = Normal::new(0.0, head_std).map_err(|e| LearnError::Arch(e.to_string()))?;
            for p in &mut params[layout.head.w..layout.head.b] {
                *p = n.sample(rng);
            }
        }
        Ok(Network {
            arch: arch.clone(),
            layout,
            params,
        })
    }

    pub fn from_params(arch: &Arch, params: Vec<f64>) -> Result<Network, LearnError> {
        let layout = Layout::new(arch)?;
        if params.len() != layout.len {
            return Err(LearnError::ShapeMismatch {
                expected: layout.len,
                got: params.len(),
            });
        }
        Ok(Network {
            arch: arch.clone(),
            layout,
            params,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn input_len(&self) -> usize {
        self.layout.input_side * self.layout.input_side
    }

    pub fn scratch(&self) -> Scratch {
        let l = &self.layout;
        Scratch {
            conv_in: l.convs.iter().map(|c| vec![0.0; c.c_in * c.side * c.side]).collect(),
            conv_out: l.convs.iter().map(|c| vec![0.0; c.c_out * c.side * c.side]).collect(),
            pool_arg: l
                .convs
                .iter()
                .map(|c| vec![0; c.c_out * (c.side / 2) * (c.side / 2)])
                .collect(),
            fc_in: l
                .fcs
                .iter()
                .map(|f| vec![0.0; f.n_in])
                .chain(std::iter::once(vec![0.0; l.head.n_in]))
                .collect(),
            logits: vec![0.0; l.head.n_out],
            d_fc: l
                .fcs
                .iter()
                .map(|f| vec![0.0; f.n_in])
                .chain(std::iter::once(vec![0.0; l.head.n_in]))
                .collect(),
            d_conv: l.convs.iter().map(|c| vec![0.0; c.c_out * c.side * c.side]).collect(),
            d_pool: l.convs.iter().map(|c| vec![0.0; c.c_in * c.side * c.side]).collect(),
        }
    }

    /// Full forward pass; the logits are left in `s`. Inputs are shifted by
    /// −0.5 so a mid-grey image is zero.
    pub fn forward_into(&self, pixels: &[f32], s: &mut Scratch) -> Result<(), LearnError> {
        if pixels.len() != self.input_len() {
            return Err(LearnError::ShapeMismatch {
                expected: self.input_len(),
                got: pixels.len(),
            });
        }
        let l = &self.layout;
        let p = &self.params;
        if l.convs.is_empty() {
            for (d, &v) in s.fc_in[0].iter_mut().zip(pixels) {
                *d = v as f64 - 0.5;
            }
        } else {
            for (d, &v) in s.conv_in[0].iter_mut().zip(pixels) {
                *d = v as f64 - 0.5;
            }
        }
        for (li, c) in l.convs.iter().enumerate() {
            conv_forward(
                &s.conv_in[li],
                c,
                l.kernel,
                &p[c.w..c.b],
                &p[c.b..c.b + c.c_out],
                &mut s.conv_out[li],
            );
            for v in s.conv_out[li].iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let next = if li + 1 < l.convs.len() {
                &mut s.conv_in[li + 1]
            } else {
                &mut s.fc_in[0]
            };
            max_pool(&s.conv_out[li], c.c_out, c.side, next, &mut s.pool_arg[li]);
        }
        for (fi, f) in l.fcs.iter().enumerate() {
            let (a, b) = s.fc_in.split_at_mut(fi + 1);
            fc_forward(&a[fi], f, p, &mut b[0]);
            for v in b[0].iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        let last = s.fc_in.len() - 1;
        fc_forward(&s.fc_in[last], &l.head, p, &mut s.logits);
        Ok(())
    }

    /// Logits for one input.
    pub fn forward(&self, pixels: &[f32]) -> Result<ActivationMatrix, LearnError> {
        let mut s = self.scratch();
        self.forward_into(pixels, &mut s)?;
        Ok(ActivationMatrix {
            groups: self.layout.groups,
            classes: self.layout.classes,
            logits: s.logits,
        })
    }

    /// Positive-class probability of every binary head.
    pub fn scores_into(&self, pixels: &[f32], s: &mut Scratch, out: &mut [f64]) -> Result<(), LearnError> {
        self.forward_into(pixels, s)?;
        for (g, o) in out.iter_mut().enumerate().take(self.layout.groups) {
            *o = binary_score(&s.logits[g * self.layout.classes..(g + 1) * self.layout.classes]);
        }
        Ok(())
    }

    /// Backpropagates the softmax cross-entropy of head `group` against
    /// `class`, scaled by `scale`, into `grad`. Requires a preceding
    /// `forward_into` on the same scratch. Returns the unscaled loss.
    pub fn backward_into(&self, s: &mut Scratch, group: usize, class: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let p = &self.params;
        let nc = l.classes;
        let z = &s.logits[group * nc..(group + 1) * nc];
        let (loss, dz) = softmax_xent(z, class);
        // head: only the selected group's rows receive gradient
        let last = s.fc_in.len() - 1;
        let x = &s.fc_in[last];
        let d_x = &mut s.d_fc[last];
        d_x.fill(0.0);
        for (c, &g) in dz.iter().enumerate() {
            let g = g * scale;
            let row = group * nc + c;
            let w0 = l.head.w + row * l.head.n_in;
            grad[l.head.b + row] += g;
            for i in 0..l.head.n_in {
                grad[w0 + i] += g * x[i];
                d_x[i] += g * p[w0 + i];
            }
        }
        // fully connected trunk, last to first
        for fi in (0..l.fcs.len()).rev() {
            let f = &l.fcs[fi];
            let (lo, hi) = s.d_fc.split_at_mut(fi + 1);
            let d_out = &mut hi[0];
            let out = &s.fc_in[fi + 1];
            for (d, &o) in d_out.iter_mut().zip(out) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
            let x = &s.fc_in[fi];
            let d_x = &mut lo[fi];
            d_x.fill(0.0);
            for j in 0..f.n_out {
                let g = d_out[j];
                if g == 0.0 {
                    continue;
                }
                grad[f.b + j] += g;
                let w0 = f.w + j * f.n_in;
                let gw = &mut grad[w0..w0 + f.n_in];
                for (gw, &xi) in gw.iter_mut().zip(x) {
                    *gw += g * xi;
                }
                for (dx, &w) in d_x.iter_mut().zip(&p[w0..w0 + f.n_in]) {
                    *dx += g * w;
                }
            }
        }
        // conv stages, last to first
        for li in (0..l.convs.len()).rev() {
            let c = &l.convs[li];
            let d_pooled: &[f64] = if li + 1 < l.convs.len() {
                &s.d_pool[li + 1]
            } else {
                &s.d_fc[0]
            };
            let d_out = &mut s.d_conv[li];
            d_out.fill(0.0);
            for (k, &src) in s.pool_arg[li].iter().enumerate() {
                d_out[src] += d_pooled[k];
            }
            for (d, &o) in d_out.iter_mut().zip(&s.conv_out[li]) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
            let need_input_grad = li > 0;
            let (gw_all, rest) = grad.split_at_mut(c.b);
            conv_backward(
                &s.conv_in[li],
                c,
                l.kernel,
                &p[c.w..c.b],
                &s.d_conv[li],
                &mut gw_all[c.w..],
                &mut rest[..c.c_out],
                if need_input_grad { Some(&mut s.d_pool[li]) } else { None },
            );
        }
        loss
    }
}

/// Softmax positive-class probability of a two-logit head, computed
/// stably as a logistic of the logit difference.
pub fn binary_score(z: &[f64]) -> f64 {
    let d = z[1] - z[0];
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of softmax(z) at `class` and its gradient w.r.t. z.
pub fn softmax_xent(z: &[f64], class: usize) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&v| (v - m).exp()).sum();
    let lse = m + sum.ln();
    let grad = z
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - lse).exp() - if i == class { 1.0 } else { 0.0 })
        .collect();
    (lse - z[class], grad)
}

/// Logits of one input, `groups × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub groups: usize,
    pub classes: usize,
    pub logits: Vec<f64>,
}

impl ActivationMatrix {
    pub fn row(&self, g: usize) -> &[f64] {
        &self.logits[g * self.classes..(g + 1) * self.classes]
    }

    /// Positive-class probability of binary head `g`.
    pub fn score(&self, g: usize) -> f64 {
        binary_score(self.row(g))
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.groups).map(|g| self.score(g)).collect()
    }
}

fn conv_forward(input: &[f64], c: &ConvLayer, k: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let n = c.side;
    let pad = (k / 2) as isize;
    for o in 0..c.c_out {
        let out_o = &mut out[o * n * n..(o + 1) * n * n];
        out_o.fill(b[o]);
        for i in 0..c.c_in {
            let in_i = &input[i * n * n..(i + 1) * n * n];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(dy, n);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(dx, n);
                    let wv = w[((o * c.c_in + i) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_i[sy * n + (x0 as isize + dx) as usize..sy * n + (x1 as isize + dx) as usize];
                        let dst = &mut out_o[y * n + x0..y * n + x1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    c: &ConvLayer,
    k: usize,
    w: &[f64],
    d_out: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut d_in: Option<&mut Vec<f64>>,
) {
    let n = c.side;
    let pad = (k / 2) as isize;
    if let Some(d) = d_in.as_deref_mut() {
        d.fill(0.0);
    }
    for o in 0..c.c_out {
        let d_o = &d_out[o * n * n..(o + 1) * n * n];
        gb[o] += d_o.iter().sum::<f64>();
        for i in 0..c.c_in {
            let in_i = &input[i * n * n..(i + 1) * n * n];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(dy, n);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(dx, n);
                    let widx = ((o * c.c_in + i) * k + ky) * k + kx;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = sy * n + (x0 as isize + dx) as usize;
                        let src = &in_i[s0..s0 + (x1 - x0)];
                        let g = &d_o[y * n + x0..y * n + x1];
                        for (a, b) in g.iter().zip(src) {
                            acc += a * b;
                        }
                        if let Some(d) = d_in.as_deref_mut() {
                            let dst = &mut d[i * n * n + s0..i * n * n + s0 + (x1 - x0)];
                            for (dv, &gv) in dst.iter_mut().zip(g) {
                                *dv += wv * gv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

/// Output positions whose tap at offset `d` stays inside `[0, n)`.
#[inline]
fn valid_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi.max(lo))
}

fn max_pool(input: &[f64], channels: usize, side: usize, out: &mut [f64], arg: &mut [usize]) {
    let m = side / 2;
    for ch in 0..channels {
        let base = ch * side * side;
        for y in 0..m {
            for x in 0..m {
                let mut best = base + 2 * y * side + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * side + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = ch * m * m + y * m + x;
                out[o] = input[best];
                arg[o] = best;
            }
        }
    }
}

fn fc_forward(x: &[f64], f: &FcLayer, p: &[f64], out: &mut [f64]) {
    for j in 0..f.n_out {
        let w0 = f.w + j * f.n_in;
        let row = &p[w0..w0 + f.n_in];
        let mut acc = p[f.b + j];
        for (w, v) in row.iter().zip(x) {
            acc += w * v;
        }
        out[j] = acc;
    }
}
