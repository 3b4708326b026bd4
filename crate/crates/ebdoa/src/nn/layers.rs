//! Dense and 2D transposed-convolution layers with exact analytic
//! gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;
use crate::error::{Error, Result};

/// Gradients shaped like a layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// A fully connected layer `out = W in + b` with `W` stored row-major as
/// `[out_features, in_features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    in_features: usize,
    out_features: usize,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(in_features: usize, out_features: usize, weights: Tensor, bias: Tensor) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::invalid("dense layer dimensions must be positive"));
        }
        if weights.shape() != [out_features, in_features] {
            return Err(Error::invalid(format!(
                "dense weights must be [{out_features}, {in_features}], got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [out_features] {
            return Err(Error::invalid(format!(
                "dense bias must be [{out_features}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Self { in_features, out_features, weights, bias })
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Result<Self> {
        Self::new(
            in_features,
            out_features,
            Tensor::zeros(&[out_features, in_features])?,
            Tensor::zeros(&[out_features])?,
        )
    }

    /// He-scaled Gaussian weights (`std = sqrt(2 / in_features)`), zero bias.
    pub fn he_init(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let std = (2.0 / in_features as f64).sqrt();
        let values = (0..in_features * out_features)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::new(
            in_features,
            out_features,
            Tensor::new(&[out_features, in_features], values)?,
            Tensor::zeros(&[out_features])?,
        )
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

/// Runs a dense layer over a batch, input `[batch, in]`, output
/// `[batch, out]`.
pub fn dense(params: &DenseParams, input: &Tensor) -> Result<Tensor> {
    let &[batch, n_in] = input.shape() else {
        return Err(Error::invalid(format!("dense input must be 2-D, got {:?}", input.shape())));
    };
    if n_in != params.in_features {
        return Err(Error::invalid(format!(
            "dense input has {n_in} features, layer expects {}",
            params.in_features
        )));
    }
    let n_out = params.out_features;
    let w = params.weights.values();
    let mut out = Tensor::zeros(&[batch, n_out])?;
    for b in 0..batch {
        let x = &input.values()[b * n_in..(b + 1) * n_in];
        let y = &mut out.values_mut()[b * n_out..(b + 1) * n_out];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            *yo = dot + params.bias.values()[o];
        }
    }
    Ok(out)
}

/// Backward pass of [`dense`]: gradients with respect to the input and the
/// parameters, given the upstream gradient `[batch, out]`.
pub fn dense_backward(
    params: &DenseParams,
    input: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, ParamGrads)> {
    let &[batch, n_in] = input.shape() else {
        return Err(Error::invalid(format!("dense input must be 2-D, got {:?}", input.shape())));
    };
    let n_out = params.out_features;
    if n_in != params.in_features || grad_out.shape() != [batch, n_out] {
        return Err(Error::invalid("dense backward shapes do not match layer geometry"));
    }
    let w = params.weights.values();
    let mut grad_in = Tensor::zeros(&[batch, n_in])?;
    let mut grad_w = Tensor::zeros(&[n_out, n_in])?;
    let mut grad_b = Tensor::zeros(&[n_out])?;
    for b in 0..batch {
        let x = &input.values()[b * n_in..(b + 1) * n_in];
        let g = &grad_out.values()[b * n_out..(b + 1) * n_out];
        let gx = &mut grad_in.values_mut()[b * n_in..(b + 1) * n_in];
        for (o, &go) in g.iter().enumerate() {
            grad_b.values_mut()[o] += go;
            let row = &w[o * n_in..(o + 1) * n_in];
            for (gxi, &wi) in gx.iter_mut().zip(row) {
                *gxi += go * wi;
            }
            let gw_row = &mut grad_w.values_mut()[o * n_in..(o + 1) * n_in];
            for (gwi, &xi) in gw_row.iter_mut().zip(x) {
                *gwi += go * xi;
            }
        }
    }
    Ok((grad_in, ParamGrads { weights: grad_w, bias: grad_b }))
}

/// A 2D transposed convolution (the gradient of a strided convolution),
/// weights stored as `[in_channels, out_channels, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv2dParams {
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    output_padding: (usize, usize),
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Deconv2dParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
        weights: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("deconv channel counts must be positive"));
        }
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("deconv kernel and stride must be positive"));
        }
        if output_padding.0 >= stride.0 || output_padding.1 >= stride.1 {
            return Err(Error::invalid("deconv output padding must be smaller than the stride"));
        }
        if weights.shape() != [in_channels, out_channels, kernel.0, kernel.1] {
            return Err(Error::invalid(format!(
                "deconv weights must be [{in_channels}, {out_channels}, {}, {}], got {:?}",
                kernel.0,
                kernel.1,
                weights.shape()
            )));
        }
        if bias.shape() != [out_channels] {
            return Err(Error::invalid(format!(
                "deconv bias must be [{out_channels}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Self { in_channels, out_channels, kernel, stride, padding, output_padding, weights, bias })
    }

    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
    ) -> Result<Self> {
        Self::new(
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
            Tensor::zeros(&[in_channels, out_channels, kernel.0, kernel.1])?,
            Tensor::zeros(&[out_channels])?,
        )
    }

    /// He-scaled Gaussian weights over the `in_channels * kh * kw` fan-in,
    /// zero bias.
    pub fn he_init(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let std = (2.0 / fan_in as f64).sqrt();
        let count = in_channels * out_channels * kernel.0 * kernel.1;
        let values = (0..count)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::new(
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
            Tensor::new(&[in_channels, out_channels, kernel.0, kernel.1], values)?,
            Tensor::zeros(&[out_channels])?,
        )
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Output height and width for a given input size.
    pub fn output_size(&self, h_in: usize, w_in: usize) -> Result<(usize, usize)> {
        let h = (h_in as i64 - 1) * self.stride.0 as i64 - 2 * self.padding.0 as i64
            + self.kernel.0 as i64
            + self.output_padding.0 as i64;
        let w = (w_in as i64 - 1) * self.stride.1 as i64 - 2 * self.padding.1 as i64
            + self.kernel.1 as i64
            + self.output_padding.1 as i64;
        if h < 1 || w < 1 {
            return Err(Error::invalid(format!(
                "deconv of {h_in}x{w_in} input would produce empty {h}x{w} output"
            )));
        }
        Ok((h as usize, w as usize))
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        let &[batch, c, h, w] = input.shape() else {
            return Err(Error::invalid(format!("deconv input must be 4-D, got {:?}", input.shape())));
        };
        if c != self.in_channels {
            return Err(Error::invalid(format!(
                "deconv input has {c} channels, layer expects {}",
                self.in_channels
            )));
        }
        Ok((batch, h, w))
    }
}

/// Transposed convolution over a batch, input `[batch, in_ch, h, w]`.
///
/// Each input element scatters a stride-spaced copy of the kernel into the
/// output; that is exactly the adjoint of a strided convolution.
pub fn deconv2d(params: &Deconv2dParams, input: &Tensor) -> Result<Tensor> {
    let (batch, h_in, w_in) = params.check_input(input)?;
    let (h_out, w_out) = params.output_size(h_in, w_in)?;
    let (kh, kw) = params.kernel;
    let (sh, sw) = params.stride;
    let (ph, pw) = params.padding;
    let (c_in, c_out) = (params.in_channels, params.out_channels);
    let w = params.weights.values();

    let mut out = Tensor::zeros(&[batch, c_out, h_out, w_out])?;
    for b in 0..batch {
        for oc in 0..c_out {
            let plane = &mut out.values_mut()
                [((b * c_out + oc) * h_out) * w_out..((b * c_out + oc + 1) * h_out) * w_out];
            plane.fill(params.bias.values()[oc]);
        }
        for ic in 0..c_in {
            let in_plane =
                &input.values()[((b * c_in + ic) * h_in) * w_in..((b * c_in + ic + 1) * h_in) * w_in];
            for oc in 0..c_out {
                let kernel = &w[((ic * c_out + oc) * kh) * kw..((ic * c_out + oc + 1) * kh) * kw];
                for ih in 0..h_in {
                    let in_row = &in_plane[ih * w_in..(ih + 1) * w_in];
                    for ki in 0..kh {
                        let oh = ih as i64 * sh as i64 - ph as i64 + ki as i64;
                        if oh < 0 || oh >= h_out as i64 {
                            continue;
                        }
                        let out_row_base = ((b * c_out + oc) * h_out + oh as usize) * w_out;
                        let out_row = &mut out.values_mut()[out_row_base..out_row_base + w_out];
                        let k_row = &kernel[ki * kw..(ki + 1) * kw];
                        for (iw, &v) in in_row.iter().enumerate() {
                            let base = iw as i64 * sw as i64 - pw as i64;
                            for (kj, &kv) in k_row.iter().enumerate() {
                                let ow = base + kj as i64;
                                if ow >= 0 && ow < w_out as i64 {
                                    out_row[ow as usize] += v * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`deconv2d`]: input and parameter gradients given the
/// upstream gradient `[batch, out_ch, h_out, w_out]`.
pub fn deconv2d_backward(
    params: &Deconv2dParams,
    input: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, ParamGrads)> {
    let (batch, h_in, w_in) = params.check_input(input)?;
    let (h_out, w_out) = params.output_size(h_in, w_in)?;
    let (c_in, c_out) = (params.in_channels, params.out_channels);
    if grad_out.shape() != [batch, c_out, h_out, w_out] {
        return Err(Error::invalid("deconv backward gradient shape does not match the output"));
    }
    let (kh, kw) = params.kernel;
    let (sh, sw) = params.stride;
    let (ph, pw) = params.padding;
    let w = params.weights.values();

    let mut grad_in = Tensor::zeros(input.shape())?;
    let mut grad_w = Tensor::zeros(params.weights.shape())?;
    let mut grad_b = Tensor::zeros(&[c_out])?;

    for oc in 0..c_out {
        let mut acc = 0.0;
        for b in 0..batch {
            let base = ((b * c_out + oc) * h_out) * w_out;
            acc += grad_out.values()[base..base + h_out * w_out].iter().sum::<f64>();
        }
        grad_b.values_mut()[oc] = acc;
    }

    for b in 0..batch {
        for ic in 0..c_in {
            let in_base = ((b * c_in + ic) * h_in) * w_in;
            for oc in 0..c_out {
                let k_base = ((ic * c_out + oc) * kh) * kw;
                for ih in 0..h_in {
                    for ki in 0..kh {
                        let oh = ih as i64 * sh as i64 - ph as i64 + ki as i64;
                        if oh < 0 || oh >= h_out as i64 {
                            continue;
                        }
                        let go_base = ((b * c_out + oc) * h_out + oh as usize) * w_out;
                        let go_row = &grad_out.values()[go_base..go_base + w_out];
                        for iw in 0..w_in {
                            let x = input.values()[in_base + ih * w_in + iw];
                            let base = iw as i64 * sw as i64 - pw as i64;
                            let mut gi = 0.0;
                            for kj in 0..kw {
                                let ow = base + kj as i64;
                                if ow >= 0 && ow < w_out as i64 {
                                    let g = go_row[ow as usize];
                                    gi += g * w[k_base + ki * kw + kj];
                                    grad_w.values_mut()[k_base + ki * kw + kj] += g * x;
                                }
                            }
                            grad_in.values_mut()[in_base + ih * w_in + iw] += gi;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_in, ParamGrads { weights: grad_w, bias: grad_b }))
}

/// A layer of either kind, tagged so a model can hold a uniform stack.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Dense(DenseParams),
    Deconv2d(Deconv2dParams),
}

impl LayerParams {
    pub fn weights(&self) -> &Tensor {
        match self {
            LayerParams::Dense(p) => &p.weights,
            LayerParams::Deconv2d(p) => &p.weights,
        }
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        match self {
            LayerParams::Dense(p) => &mut p.weights,
            LayerParams::Deconv2d(p) => &mut p.weights,
        }
    }

    pub fn bias(&self) -> &Tensor {
        match self {
            LayerParams::Dense(p) => &p.bias,
            LayerParams::Deconv2d(p) => &p.bias,
        }
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        match self {
            LayerParams::Dense(p) => &mut p.bias,
            LayerParams::Deconv2d(p) => &mut p.bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights().len() + self.bias().len()
    }
}

/// Seedable generator for layer initialization.
pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use approx::assert_relative_eq;
    use rand::RngExt;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let count = shape.iter().product();
        let values = (0..count).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, values).unwrap()
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let mut w = Tensor::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            w.values_mut()[i * 3 + i] = 1.0;
        }
        let params = DenseParams::new(3, 3, w, Tensor::zeros(&[3]).unwrap()).unwrap();
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -0.25]).unwrap();
        let y = dense(&params, &x).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn dense_weight_gradient_matches_outer_product() {
        let mut rng = init_rng(5);
        let params = DenseParams::he_init(4, 3, &mut rng).unwrap();
        let x = random_tensor(&[1, 4], &mut rng);
        let y = dense(&params, &x).unwrap();
        // For loss = 0.5 ||y||^2 the upstream gradient is y itself.
        let (_, grads) = dense_backward(&params, &x, &y).unwrap();
        for o in 0..3 {
            for i in 0..4 {
                assert_relative_eq!(
                    grads.weights.values()[o * 4 + i],
                    y.values()[o] * x.values()[i],
                    epsilon = 1e-12
                );
            }
        }
        assert_eq!(grads.bias.values(), y.values());
    }

    #[test]
    fn dense_shape_mismatches_are_rejected() {
        let params = DenseParams::zeros(4, 3).unwrap();
        let bad = Tensor::zeros(&[2, 5]).unwrap();
        assert!(dense(&params, &bad).is_err());
        let x = Tensor::zeros(&[2, 4]).unwrap();
        let bad_grad = Tensor::zeros(&[2, 4]).unwrap();
        assert!(dense_backward(&params, &x, &bad_grad).is_err());
    }

    /// Loss 0.5 sum(out^2) of a dense layer, as a pure function for finite
    /// differences.
    fn dense_loss(params: &DenseParams, x: &Tensor) -> f64 {
        let y = dense(params, x).unwrap();
        0.5 * y.values().iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = init_rng(17);
        let params = DenseParams::he_init(8, 5, &mut rng).unwrap();
        let x = random_tensor(&[3, 8], &mut rng);
        let y = dense(&params, &x).unwrap();
        let (grad_in, grads) = dense_backward(&params, &x, &y).unwrap();

        let mut p = params.clone();
        let err = gradient_check(
            grads.weights.values(),
            1e-4,
            200,
            99,
            |i, delta| {
                let old = p.weights.values()[i];
                p.weights.values_mut()[i] = old + delta;
                let loss = dense_loss(&p, &x);
                p.weights.values_mut()[i] = old;
                loss
            },
        );
        assert!(err < 1e-4, "weight gradient error {err}");

        let mut xp = x.clone();
        let err = gradient_check(
            grad_in.values(),
            1e-4,
            200,
            100,
            |i, delta| {
                let old = xp.values()[i];
                xp.values_mut()[i] = old + delta;
                let loss = dense_loss(&params, &xp);
                xp.values_mut()[i] = old;
                loss
            },
        );
        assert!(err < 1e-4, "input gradient error {err}");
    }

    #[test]
    fn deconv_single_element_scatters_kernel() {
        let kernel = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bias = Tensor::new(&[1], vec![0.5]).unwrap();
        let params = Deconv2dParams::new(1, 1, (2, 2), (2, 2), (0, 0), (0, 0), kernel, bias).unwrap();
        let x = Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let y = deconv2d(&params, &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.values(), &[3.5, 6.5, 9.5, 12.5]);
    }

    #[test]
    fn deconv_output_size_doubles_with_stride_two() {
        let params = Deconv2dParams::zeros(16, 8, (4, 4), (2, 2), (1, 1), (0, 0)).unwrap();
        assert_eq!(params.output_size(15, 30).unwrap(), (30, 60));
        let x = Tensor::zeros(&[1, 16, 15, 30]).unwrap();
        assert_eq!(deconv2d(&params, &x).unwrap().shape(), &[1, 8, 30, 60]);
    }

    /// Alternate definition: zero-insert upsampling followed by an ordinary
    /// convolution with the kernel flipped in both spatial dimensions.
    fn zero_insert_oracle(params: &Deconv2dParams, input: &Tensor) -> Tensor {
        let &[batch, c_in, h_in, w_in] = input.shape() else { unreachable!() };
        let (kh, kw) = params.kernel;
        let (sh, sw) = params.stride;
        let (ph, pw) = params.padding;
        let c_out = params.out_channels;
        let (h_out, w_out) = params.output_size(h_in, w_in).unwrap();

        // Upsampled, padded canvas per (batch, in-channel).
        let pad_h = kh - 1 - ph;
        let pad_w = kw - 1 - pw;
        let h_up = (h_in - 1) * sh + 1 + 2 * pad_h + params.output_padding.0;
        let w_up = (w_in - 1) * sw + 1 + 2 * pad_w + params.output_padding.1;
        let mut canvas = vec![0.0; batch * c_in * h_up * w_up];
        for b in 0..batch {
            for ic in 0..c_in {
                for ih in 0..h_in {
                    for iw in 0..w_in {
                        let v = input.values()[((b * c_in + ic) * h_in + ih) * w_in + iw];
                        let uh = pad_h + ih * sh;
                        let uw = pad_w + iw * sw;
                        canvas[((b * c_in + ic) * h_up + uh) * w_up + uw] = v;
                    }
                }
            }
        }

        let mut out = Tensor::zeros(&[batch, c_out, h_out, w_out]).unwrap();
        for b in 0..batch {
            for oc in 0..c_out {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let mut acc = params.bias.values()[oc];
                        for ic in 0..c_in {
                            for a in 0..kh {
                                for bb in 0..kw {
                                    let flipped = params.weights.values()
                                        [((ic * c_out + oc) * kh + (kh - 1 - a)) * kw + (kw - 1 - bb)];
                                    let v = canvas[((b * c_in + ic) * h_up + oh + a) * w_up + ow + bb];
                                    acc += v * flipped;
                                }
                            }
                        }
                        out.values_mut()[((b * c_out + oc) * h_out + oh) * w_out + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn deconv_matches_zero_insertion_oracle() {
        let mut rng = init_rng(23);
        for (kernel, stride, padding, output_padding) in [
            ((3, 3), (2, 2), (1, 1), (0, 0)),
            ((4, 4), (2, 2), (1, 1), (0, 0)),
            ((3, 3), (1, 1), (1, 1), (0, 0)),
            ((2, 3), (2, 1), (0, 1), (1, 0)),
        ] {
            let mut params =
                Deconv2dParams::he_init(3, 2, kernel, stride, padding, output_padding, &mut rng)
                    .unwrap();
            for b in params.bias.values_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
            let x = random_tensor(&[2, 3, 4, 5], &mut rng);
            let fast = deconv2d(&params, &x).unwrap();
            let oracle = zero_insert_oracle(&params, &x);
            assert_eq!(fast.shape(), oracle.shape());
            for (a, b) in fast.values().iter().zip(oracle.values()) {
                assert_relative_eq!(a, b, epsilon = 1e-12, max_relative = 1e-10);
            }
        }
    }

    fn deconv_loss(params: &Deconv2dParams, x: &Tensor) -> f64 {
        let y = deconv2d(params, x).unwrap();
        0.5 * y.values().iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn deconv_gradients_match_finite_differences() {
        let mut rng = init_rng(31);
        let mut params = Deconv2dParams::he_init(2, 3, (3, 3), (2, 2), (1, 1), (0, 0), &mut rng).unwrap();
        for b in params.bias.values_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = random_tensor(&[2, 2, 4, 4], &mut rng);
        let y = deconv2d(&params, &x).unwrap();
        let (grad_in, grads) = deconv2d_backward(&params, &x, &y).unwrap();

        let mut p = params.clone();
        let xc = x.clone();
        let err = gradient_check(
            grads.weights.values(),
            1e-4,
            200,
            7,
            |i, delta| {
                let old = p.weights.values()[i];
                p.weights.values_mut()[i] = old + delta;
                let loss = deconv_loss(&p, &xc);
                p.weights.values_mut()[i] = old;
                loss
            },
        );
        assert!(err < 1e-4, "weight gradient error {err}");

        let mut p = params.clone();
        let err = gradient_check(
            grads.bias.values(),
            1e-4,
            8,
            8,
            |i, delta| {
                let old = p.bias.values()[i];
                p.bias.values_mut()[i] = old + delta;
                let loss = deconv_loss(&p, &xc);
                p.bias.values_mut()[i] = old;
                loss
            },
        );
        assert!(err < 1e-4, "bias gradient error {err}");

        let mut xp = x.clone();
        let err = gradient_check(
            grad_in.values(),
            1e-4,
            64,
            9,
            |i, delta| {
                let old = xp.values()[i];
                xp.values_mut()[i] = old + delta;
                let loss = deconv_loss(&params, &xp);
                xp.values_mut()[i] = old;
                loss
            },
        );
        assert!(err < 1e-4, "input gradient error {err}");
    }

    #[test]
    fn deconv_geometry_validation() {
        assert!(Deconv2dParams::zeros(1, 1, (2, 2), (1, 1), (0, 0), (1, 0)).is_err());
        let params = Deconv2dParams::zeros(2, 1, (3, 3), (2, 2), (1, 1), (0, 0)).unwrap();
        let wrong_channels = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
        assert!(deconv2d(&params, &wrong_channels).is_err());
        let not_4d = Tensor::zeros(&[2, 3, 4]).unwrap();
        assert!(deconv2d(&params, &not_4d).is_err());
    }
}
