//! Layer kinds used by the two EEG architectures.
//!
//! Activations between layers are `[channels, height, width]` tensors, where
//! height runs over EEG electrodes and width over time. Dense, global pooling
//! and softmax produce flat vectors.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output length equals input length; odd leftovers go to the end.
    Same,
}

impl Padding {
    fn amounts(self, kernel: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = kernel - 1;
                (total / 2, total - total / 2)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "valid" => Some(Padding::Valid),
            "same" => Some(Padding::Same),
            _ => None,
        }
    }
}

/// Grouped 2D convolution with stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub groups: usize,
    /// Padding along (height, width).
    pub padding: (Padding, Padding),
    /// `[out_channels, in_channels / groups, kh, kw]`
    pub weight: Tensor<F>,
    /// `[out_channels]`
    pub bias: Option<Tensor<F>>,
}

impl<F: Real> Conv2d<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        groups: usize,
        padding: (Padding, Padding),
        with_bias: bool,
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "conv groups {groups} must divide in={in_channels} and out={out_channels}"
            )));
        }
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::InvalidArgument("conv kernel must be non-empty".into()));
        }
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            groups,
            padding,
            weight: Tensor::zeros(&[out_channels, in_channels / groups, kernel.0, kernel.1]),
            bias: with_bias.then(|| Tensor::zeros(&[out_channels])),
        })
    }

    fn pads(&self) -> ((usize, usize), (usize, usize)) {
        (
            self.padding.0.amounts(self.kernel.0),
            self.padding.1.amounts(self.kernel.1),
        )
    }

    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let [c, h, w] = match input {
            [c, h, w] => [*c, *h, *w],
            _ => return Err(format!("expected [C, H, W] input, got {input:?}")),
        };
        if c != self.in_channels {
            return Err(format!(
                "expected {} input channels, got {c}",
                self.in_channels
            ));
        }
        let ((pt, pb), (pl, pr)) = self.pads();
        let (kh, kw) = self.kernel;
        if h + pt + pb < kh || w + pl + pr < kw {
            return Err(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + pt + pb,
                w + pl + pr
            ));
        }
        Ok(vec![self.out_channels, h + pt + pb - kh + 1, w + pl + pr - kw + 1])
    }

    fn fan_in(&self) -> usize {
        (self.in_channels / self.groups) * self.kernel.0 * self.kernel.1
    }

    /// Visit every (weight, output row, input row) triple of the convolution
    /// together with the range of output columns it touches.
    #[inline]
    fn for_each_tap(
        &self,
        in_shape: &[usize],
        mut f: impl FnMut(usize, usize, usize, usize, usize),
    ) {
        // f(weight_index, out_base, in_base, lo, hi) pairs
        // out[out_base + ox] with in[in_base + ox - pl] for ox in lo..hi.
        let (h, w) = (in_shape[1], in_shape[2]);
        let ((pt, pb), (pl, pr)) = self.pads();
        let (kh, kw) = self.kernel;
        let ho = h + pt + pb - kh + 1;
        let wo = w + pl + pr - kw + 1;
        let cin_g = self.in_channels / self.groups;
        let cout_g = self.out_channels / self.groups;
        for co in 0..self.out_channels {
            let g = co / cout_g;
            for cil in 0..cin_g {
                let ci = g * cin_g + cil;
                for ky in 0..kh {
                    for y in 0..ho {
                        let iy = y + ky;
                        if iy < pt || iy - pt >= h {
                            continue;
                        }
                        let iy = iy - pt;
                        for kx in 0..kw {
                            let wi = ((co * cin_g + cil) * kh + ky) * kw + kx;
                            // ix = ox + kx - pl must lie in [0, w)
                            let lo = pl.saturating_sub(kx);
                            let hi = (w + pl).saturating_sub(kx).min(wo);
                            if lo >= hi {
                                continue;
                            }
                            let out_base = (co * ho + y) * wo;
                            // shift so that in index = in_base + ox
                            let in_base = (ci * h + iy) * w + kx;
                            f(wi, out_base, in_base, lo, hi);
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let out_shape = self
            .output_shape(x.shape())
            .expect("shape chain validated at build");
        let (ho, wo) = (out_shape[1], out_shape[2]);
        let mut out = Tensor::zeros(&out_shape);
        if let Some(b) = &self.bias {
            for (co, chunk) in out.data_mut().chunks_exact_mut(ho * wo).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let pl = self.pads().1 .0;
        let xd = x.data();
        let wd = self.weight.data();
        let od = out.data_mut();
        self.for_each_tap(x.shape(), |wi, ob, ib, lo, hi| {
            let wv = wd[wi];
            let src = &xd[ib + lo - pl..ib + hi - pl];
            for (o, &s) in od[ob + lo..ob + hi].iter_mut().zip(src) {
                *o = *o + wv * s;
            }
        });
        out
    }

    pub fn backward_input(&self, in_shape: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
        let mut gin = Tensor::zeros(in_shape);
        let pl = self.pads().1 .0;
        let gd = grad_out.data();
        let wd = self.weight.data();
        let id = gin.data_mut();
        self.for_each_tap(in_shape, |wi, ob, ib, lo, hi| {
            let wv = wd[wi];
            let src = &gd[ob + lo..ob + hi];
            for (g, &s) in id[ib + lo - pl..ib + hi - pl].iter_mut().zip(src) {
                *g = *g + wv * s;
            }
        });
        gin
    }

    /// Accumulate weight and bias gradients into `gw` / `gb`.
    pub fn accumulate_grads(
        &self,
        x: &Tensor<F>,
        grad_out: &Tensor<F>,
        gw: &mut Tensor<F>,
        gb: Option<&mut Tensor<F>>,
    ) {
        let pl = self.pads().1 .0;
        let xd = x.data();
        let gd = grad_out.data();
        let gwd = gw.data_mut();
        self.for_each_tap(x.shape(), |wi, ob, ib, lo, hi| {
            let acc: F = gd[ob + lo..ob + hi]
                .iter()
                .zip(&xd[ib + lo - pl..ib + hi - pl])
                .map(|(&g, &s)| g * s)
                .sum();
            gwd[wi] = gwd[wi] + acc;
        });
        if let Some(gb) = gb {
            let per = grad_out.len() / self.out_channels;
            for (co, chunk) in gd.chunks_exact(per).enumerate() {
                let s: F = chunk.iter().copied().sum();
                gb.data_mut()[co] = gb.data()[co] + s;
            }
        }
    }
}

/// Fully connected layer over the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F = f32> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out_features, in_features]`
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Real> Dense<F> {
    pub fn new(in_features: usize, out_features: usize, with_bias: bool) -> Self {
        Dense {
            in_features,
            out_features,
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: with_bias.then(|| Tensor::zeros(&[out_features])),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let xd = x.data();
        let data = self
            .weight
            .data()
            .chunks_exact(self.in_features)
            .enumerate()
            .map(|(k, row)| {
                let dot: F = row.iter().zip(xd).map(|(&w, &v)| w * v).sum();
                dot + self.bias.as_ref().map_or(F::zero(), |b| b.data()[k])
            })
            .collect();
        Tensor::new(vec![self.out_features], data).expect("dense output shape")
    }

    pub fn backward_input(&self, in_shape: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
        let mut gin = Tensor::zeros(in_shape);
        let gd = gin.data_mut();
        for (row, &g) in self
            .weight
            .data()
            .chunks_exact(self.in_features)
            .zip(grad_out.data())
        {
            for (o, &w) in gd.iter_mut().zip(row) {
                *o = *o + g * w;
            }
        }
        gin
    }

    pub fn accumulate_grads(
        &self,
        x: &Tensor<F>,
        grad_out: &Tensor<F>,
        gw: &mut Tensor<F>,
        gb: Option<&mut Tensor<F>>,
    ) {
        for (row, &g) in gw
            .data_mut()
            .chunks_exact_mut(self.in_features)
            .zip(grad_out.data())
        {
            for (o, &v) in row.iter_mut().zip(x.data()) {
                *o = *o + g * v;
            }
        }
        if let Some(gb) = gb {
            for (o, &g) in gb.data_mut().iter_mut().zip(grad_out.data()) {
                *o = *o + g;
            }
        }
    }
}

/// Learned affine part of a batch-norm layer. Normalization statistics live
/// outside the network, in [`BatchStats`](crate::network::BatchStats).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F = f32> {
    pub channels: usize,
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

impl<F: Real> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: Tensor::full(&[channels], F::one()),
            beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<F>, mean: &[F], std: &[F]) -> Tensor<F> {
        let per = x.len() / self.channels;
        let mut out = x.clone();
        for (c, chunk) in out.data_mut().chunks_exact_mut(per).enumerate() {
            let scale = self.gamma.data()[c] / std[c];
            let shift = self.beta.data()[c] - mean[c] * scale;
            for v in chunk {
                *v = *v * scale + shift;
            }
        }
        out
    }

    /// Input gradient with the statistics held fixed.
    pub fn backward_fixed(&self, grad_out: &Tensor<F>, std: &[F]) -> Tensor<F> {
        let per = grad_out.len() / self.channels;
        let mut gin = grad_out.clone();
        for (c, chunk) in gin.data_mut().chunks_exact_mut(per).enumerate() {
            let scale = self.gamma.data()[c] / std[c];
            for v in chunk {
                *v = *v * scale;
            }
        }
        gin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Standard,
    Depthwise,
    Pointwise,
}

impl ConvKind {
    pub fn name(self) -> &'static str {
        match self {
            ConvKind::Standard => "conv2d",
            ConvKind::Depthwise => "depthwise_conv",
            ConvKind::Pointwise => "pointwise_conv",
        }
    }
}

/// One layer of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F = f32> {
    Conv { kind: ConvKind, conv: Conv2d<F> },
    SeparableConv { depthwise: Conv2d<F>, pointwise: Conv2d<F> },
    BatchNorm(BatchNorm<F>),
    Elu { alpha: f64 },
    Relu,
    AvgPool { pool: (usize, usize) },
    GlobalAvgPool,
    /// Identity at inference; inverted dropout during training.
    Dropout { rate: f64 },
    Dense(Dense<F>),
    /// Marks the end of the network. Attribution always targets its input.
    Softmax,
}

/// Elementwise nonlinearities that attribution rules can rewrite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Elu(f64),
}

impl Activation {
    pub fn value<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => z.max(F::zero()),
            Activation::Elu(alpha) => {
                if z > F::zero() {
                    z
                } else {
                    F::from_f64_lossy(alpha) * (z.exp() - F::one())
                }
            }
        }
    }

    pub fn derivative<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Elu(alpha) => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::from_f64_lossy(alpha) * z.exp()
                }
            }
        }
    }
}

impl<F: Real> Layer<F> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv { kind, .. } => kind.name(),
            Layer::SeparableConv { .. } => "separable_conv",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Elu { .. } => "elu",
            Layer::Relu => "relu",
            Layer::AvgPool { .. } => "avg_pool",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Dropout { .. } => "dropout_identity",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            Layer::Relu => Some(Activation::Relu),
            Layer::Elu { alpha } => Some(Activation::Elu(*alpha)),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Conv { conv, .. } => conv.output_shape(input),
            Layer::SeparableConv {
                depthwise,
                pointwise,
            } => pointwise.output_shape(&depthwise.output_shape(input)?),
            Layer::BatchNorm(bn) => {
                if input.first() != Some(&bn.channels) || input.len() < 2 {
                    Err(format!(
                        "expected {} channels in a spatial input, got {input:?}",
                        bn.channels
                    ))
                } else {
                    Ok(input.to_vec())
                }
            }
            Layer::Elu { .. } | Layer::Relu | Layer::Dropout { .. } => Ok(input.to_vec()),
            Layer::AvgPool { pool } => match input {
                [c, h, w] => {
                    let (ho, wo) = (h / pool.0, w / pool.1);
                    if ho == 0 || wo == 0 {
                        Err(format!(
                            "pool {}x{} larger than input {h}x{w}",
                            pool.0, pool.1
                        ))
                    } else {
                        Ok(vec![*c, ho, wo])
                    }
                }
                _ => Err(format!("expected [C, H, W] input, got {input:?}")),
            },
            Layer::GlobalAvgPool => match input {
                [c, h, w] if h * w > 0 => Ok(vec![*c]),
                _ => Err(format!("expected non-empty [C, H, W] input, got {input:?}")),
            },
            Layer::Dense(d) => {
                let n: usize = input.iter().product();
                if n != d.in_features {
                    Err(format!(
                        "expected {} input features, got {n} from {input:?}",
                        d.in_features
                    ))
                } else {
                    Ok(vec![d.out_features])
                }
            }
            Layer::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => Err(format!("softmax expects a vector, got {input:?}")),
            },
        }
    }

    /// Inference-mode forward. Batch-norm layers need `(mean, std)`.
    pub fn forward(&self, x: &Tensor<F>, stats: Option<(&[F], &[F])>) -> Tensor<F> {
        match self {
            Layer::Conv { conv, .. } => conv.forward(x),
            Layer::SeparableConv {
                depthwise,
                pointwise,
            } => pointwise.forward(&depthwise.forward(x)),
            Layer::BatchNorm(bn) => {
                let (mean, std) = stats.expect("batch-norm stats checked by caller");
                bn.forward(x, mean, std)
            }
            Layer::Elu { alpha } => x.map(|z| Activation::Elu(*alpha).value(z)),
            Layer::Relu => x.map(|z| Activation::Relu.value(z)),
            Layer::Dropout { .. } | Layer::Softmax => x.clone(),
            Layer::AvgPool { pool } => avg_pool_forward(x, *pool),
            Layer::GlobalAvgPool => global_avg_pool_forward(x),
            Layer::Dense(d) => d.forward(x),
        }
    }

    /// Input gradient of a layer that is linear (affine) at inference time.
    /// Nonlinear layers are handled by the attribution rules instead.
    pub fn backward_linear(
        &self,
        input: &Tensor<F>,
        grad_out: &Tensor<F>,
        stats: Option<(&[F], &[F])>,
    ) -> Tensor<F> {
        match self {
            Layer::Conv { conv, .. } => conv.backward_input(input.shape(), grad_out),
            Layer::SeparableConv {
                depthwise,
                pointwise,
            } => {
                let mid = depthwise.output_shape(input.shape()).expect("validated");
                let g = pointwise.backward_input(&mid, grad_out);
                depthwise.backward_input(input.shape(), &g)
            }
            Layer::BatchNorm(bn) => {
                let (_, std) = stats.expect("batch-norm stats checked by caller");
                bn.backward_fixed(grad_out, std)
            }
            Layer::Dropout { .. } | Layer::Softmax => grad_out.clone(),
            Layer::AvgPool { pool } => avg_pool_backward(input.shape(), grad_out, *pool),
            Layer::GlobalAvgPool => global_avg_pool_backward(input.shape(), grad_out),
            Layer::Dense(d) => d.backward_input(input.shape(), grad_out),
            Layer::Elu { .. } | Layer::Relu => {
                unreachable!("nonlinear layers are not handled by backward_linear")
            }
        }
    }

    /// Trainable tensors with their local names, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Tensor<F>)> {
        fn conv_params<'a, F: Real>(
            prefix_w: &'static str,
            prefix_b: &'static str,
            c: &'a Conv2d<F>,
            out: &mut Vec<(&'static str, &'a Tensor<F>)>,
        ) {
            out.push((prefix_w, &c.weight));
            if let Some(b) = &c.bias {
                out.push((prefix_b, b));
            }
        }
        let mut out = Vec::new();
        match self {
            Layer::Conv { conv, .. } => conv_params("weight", "bias", conv, &mut out),
            Layer::SeparableConv {
                depthwise,
                pointwise,
            } => {
                conv_params("depthwise.weight", "depthwise.bias", depthwise, &mut out);
                conv_params("pointwise.weight", "pointwise.bias", pointwise, &mut out);
            }
            Layer::BatchNorm(bn) => {
                out.push(("gamma", &bn.gamma));
                out.push(("beta", &bn.beta));
            }
            Layer::Dense(d) => {
                out.push(("weight", &d.weight));
                if let Some(b) = &d.bias {
                    out.push(("bias", b));
                }
            }
            _ => {}
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        match self {
            Layer::Conv { conv, .. } => {
                out.push(&mut conv.weight);
                out.extend(conv.bias.as_mut());
            }
            Layer::SeparableConv {
                depthwise,
                pointwise,
            } => {
                out.push(&mut depthwise.weight);
                out.extend(depthwise.bias.as_mut());
                out.push(&mut pointwise.weight);
                out.extend(pointwise.bias.as_mut());
            }
            Layer::BatchNorm(bn) => {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
            Layer::Dense(d) => {
                out.push(&mut d.weight);
                out.extend(d.bias.as_mut());
            }
            _ => {}
        }
        out
    }

    /// Fan-in used to scale random initialisation, per parameter tensor.
    pub(crate) fn fan_ins(&self) -> Vec<usize> {
        match self {
            Layer::Conv { conv, .. } => {
                vec![conv.fan_in(); 1 + conv.bias.is_some() as usize]
            }
            Layer::SeparableConv {
                depthwise,
                pointwise,
            } => {
                let mut v = vec![depthwise.fan_in(); 1 + depthwise.bias.is_some() as usize];
                v.extend(vec![pointwise.fan_in(); 1 + pointwise.bias.is_some() as usize]);
                v
            }
            Layer::Dense(d) => vec![d.in_features; 1 + d.bias.is_some() as usize],
            _ => Vec::new(),
        }
    }

    /// Accumulate parameter gradients for layers that are not batch-norm.
    pub(crate) fn accumulate_param_grads(
        &self,
        input: &Tensor<F>,
        grad_out: &Tensor<F>,
        grads: &mut [Tensor<F>],
    ) {
        match self {
            Layer::Conv { conv, .. } => {
                let (gw, rest) = grads.split_first_mut().expect("conv grads");
                conv.accumulate_grads(input, grad_out, gw, rest.first_mut());
            }
            Layer::SeparableConv {
                depthwise,
                pointwise,
            } => {
                let mid = depthwise.forward(input);
                let g_mid = pointwise.backward_input(mid.shape(), grad_out);
                let n_dw = 1 + depthwise.bias.is_some() as usize;
                let (dw, pw) = grads.split_at_mut(n_dw);
                let (gw, rest) = dw.split_first_mut().expect("depthwise grads");
                depthwise.accumulate_grads(input, &g_mid, gw, rest.first_mut());
                let (gw, rest) = pw.split_first_mut().expect("pointwise grads");
                pointwise.accumulate_grads(&mid, grad_out, gw, rest.first_mut());
            }
            Layer::Dense(d) => {
                let (gw, rest) = grads.split_first_mut().expect("dense grads");
                d.accumulate_grads(input, grad_out, gw, rest.first_mut());
            }
            _ => {}
        }
    }
}

fn avg_pool_forward<F: Real>(x: &Tensor<F>, pool: (usize, usize)) -> Tensor<F> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (h / pool.0, w / pool.1);
    let scale = F::one() / F::from_usize(pool.0 * pool.1).expect("pool size");
    let xd = x.data();
    let mut out = Tensor::zeros(&[c, ho, wo]);
    let od = out.data_mut();
    for ch in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let mut acc = F::zero();
                for dy in 0..pool.0 {
                    let row = (ch * h + y * pool.0 + dy) * w + xo * pool.1;
                    acc = acc + xd[row..row + pool.1].iter().copied().sum::<F>();
                }
                od[(ch * ho + y) * wo + xo] = acc * scale;
            }
        }
    }
    out
}

fn avg_pool_backward<F: Real>(
    in_shape: &[usize],
    grad_out: &Tensor<F>,
    pool: (usize, usize),
) -> Tensor<F> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo) = (h / pool.0, w / pool.1);
    let scale = F::one() / F::from_usize(pool.0 * pool.1).expect("pool size");
    let gd = grad_out.data();
    let mut gin = Tensor::zeros(in_shape);
    let id = gin.data_mut();
    for ch in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let g = gd[(ch * ho + y) * wo + xo] * scale;
                for dy in 0..pool.0 {
                    let row = (ch * h + y * pool.0 + dy) * w + xo * pool.1;
                    id[row..row + pool.1].fill(g);
                }
            }
        }
    }
    gin
}

fn global_avg_pool_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let c = x.shape()[0];
    let per = x.len() / c;
    let scale = F::one() / F::from_usize(per).expect("pool size");
    let data = x
        .data()
        .chunks_exact(per)
        .map(|ch| ch.iter().copied().sum::<F>() * scale)
        .collect();
    Tensor::new(vec![c], data).expect("gap output shape")
}

fn global_avg_pool_backward<F: Real>(in_shape: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
    let c = in_shape[0];
    let per = in_shape.iter().product::<usize>() / c;
    let scale = F::one() / F::from_usize(per).expect("pool size");
    let mut gin = Tensor::zeros(in_shape);
    for (chunk, &g) in gin.data_mut().chunks_exact_mut(per).zip(grad_out.data()) {
        chunk.fill(g * scale);
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, written independently of the
    /// row-slicing kernel above.
    fn conv_oracle(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = conv.kernel;
        let pt = if conv.padding.0 == Padding::Same { (kh - 1) / 2 } else { 0 };
        let pl = if conv.padding.1 == Padding::Same { (kw - 1) / 2 } else { 0 };
        let out_shape = conv.output_shape(x.shape()).unwrap();
        let (ho, wo) = (out_shape[1], out_shape[2]);
        let cin_g = c / conv.groups;
        let cout_g = conv.out_channels / conv.groups;
        let mut out = Tensor::zeros(&out_shape);
        for co in 0..conv.out_channels {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.data()[co]);
                    for cil in 0..cin_g {
                        let ci = (co / cout_g) * cin_g + cil;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as isize + ky as isize - pt as isize;
                                let ix = xo as isize + kx as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wv = conv.weight.data()
                                    [((co * cin_g + cil) * kh + ky) * kw + kx];
                                acc += wv * x.data()[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out.data_mut()[(co * ho + y) * wo + xo] = acc;
                }
            }
        }
        out
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random_conv(
        cin: usize,
        cout: usize,
        k: (usize, usize),
        groups: usize,
        padding: (Padding, Padding),
        seed: &mut u64,
    ) -> Conv2d<f64> {
        let mut c = Conv2d::new(cin, cout, k, groups, padding, true).unwrap();
        for v in c.weight.data_mut() {
            *v = lcg(seed);
        }
        for v in c.bias.as_mut().unwrap().data_mut() {
            *v = lcg(seed);
        }
        c
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut seed = 7;
        let cases = [
            (1, 4, (1, 5), 1, (Padding::Valid, Padding::Same)),
            (1, 4, (1, 6), 1, (Padding::Valid, Padding::Same)),
            (4, 8, (3, 1), 4, (Padding::Valid, Padding::Valid)),
            (3, 2, (2, 3), 1, (Padding::Same, Padding::Valid)),
            (6, 6, (1, 4), 6, (Padding::Valid, Padding::Same)),
        ];
        for (cin, cout, k, g, p) in cases {
            let conv = random_conv(cin, cout, k, g, p, &mut seed);
            let x = Tensor::from_fn(&[cin, 3, 9], |_| lcg(&mut seed));
            let fast = conv.forward(&x);
            let slow = conv_oracle(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b} for {k:?} {p:?}");
            }
        }
    }

    #[test]
    fn same_padding_preserves_length_for_even_kernels() {
        let conv = Conv2d::<f32>::new(1, 2, (1, 64), 1, (Padding::Valid, Padding::Same), false)
            .unwrap();
        assert_eq!(conv.output_shape(&[1, 3, 100]).unwrap(), vec![2, 3, 100]);
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv^T(g)> for a bias-free convolution
        let mut seed = 11;
        let mut conv = random_conv(2, 4, (2, 3), 2, (Padding::Same, Padding::Same), &mut seed);
        conv.bias = None;
        let x = Tensor::from_fn(&[2, 4, 7], |_| lcg(&mut seed));
        let y = conv.forward(&x);
        let g = Tensor::from_fn(y.shape(), |_| lcg(&mut seed));
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gx = conv.backward_input(x.shape(), &g);
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn avg_pool_drops_remainder() {
        let x = Tensor::<f64>::new(vec![1, 1, 5], vec![1.0, 3.0, 5.0, 7.0, 100.0]).unwrap();
        let y = Layer::<f64>::AvgPool { pool: (1, 2) }.forward(&x, None);
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert_eq!(y.data(), &[2.0, 6.0]);
    }

    #[test]
    fn elu_is_continuous_with_continuous_slope_at_zero() {
        let a = Activation::Elu(1.0);
        assert!((a.value(1e-9f64) - a.value(-1e-9f64)).abs() < 1e-8);
        assert!((a.derivative(1e-9f64) - a.derivative(-1e-9f64)).abs() < 1e-8);
    }
}
