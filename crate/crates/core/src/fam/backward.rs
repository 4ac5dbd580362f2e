//! Analytic gradients of the binary cross-entropy loss through the fusion
//! network, for single eval-mode samples and for train-mode mini-batches
//! with batch-statistics normalization.

use super::{
    bce_logits_loss, bn_eval, excite_scales, hadamard_fuse, pooled_logit, spatial_mean,
    squeeze_excite_hidden, FamError, FamParams, HeadKind, HeadLayout, HeadParams, ParamLayout,
    TrainSample, BN_EPSILON,
};
use crate::geometry::OrientationLabel;
use crate::real::{logistic, Real};
use crate::tensor::Tensor;

/// Forward intermediates of the fused path up to the pre-normalization
/// logit, kept for the backward sweep.
struct FrontalTrace<F> {
    /// Weighted Hadamard product.
    xc: Tensor<F>,
    /// Per-channel spatial means of `xc`.
    g: Vec<F>,
    /// Bottleneck pre-activations.
    a: Vec<F>,
    /// Rectified bottleneck activations.
    h: Vec<F>,
    /// Logistic channel scales.
    s: Vec<F>,
    /// Pooled fused features.
    v: Vec<F>,
    /// Pre-normalization logit.
    z: F,
}

fn frontal_trace<F: Real>(
    x_body: &Tensor<F>,
    x_face: &Tensor<F>,
    params: &FamParams<F>,
) -> Result<FrontalTrace<F>, FamError> {
    params.expect_feature("x_body", x_body)?;
    let dims = params.dims();
    let xc = hadamard_fuse(x_body, x_face, &params.fusion)?;
    let g = spatial_mean(&xc, dims);
    let (a, h) = squeeze_excite_hidden(&g, params);
    let (_, s) = excite_scales(&h, params);
    let spatial = dims.height * dims.width;
    let fused: Vec<F> = xc
        .data()
        .iter()
        .zip(x_body.data())
        .enumerate()
        .map(|(i, (&x, &b))| x * s[i / spatial] + b)
        .collect();
    let fused = Tensor::new(dims.feature_shape(), fused)?;
    let v = spatial_mean(&fused, dims);
    let z = pooled_logit(&fused, params.head(HeadKind::Fused), dims);
    Ok(FrontalTrace { xc, g, a, h, s, v, z })
}

/// Accumulates the fused-path gradients for one sample, given the gradient
/// `dz` at its pre-normalization logit.
#[allow(clippy::too_many_arguments)]
fn frontal_backprop<F: Real>(
    trace: &FrontalTrace<F>,
    x_body: &Tensor<F>,
    x_face: &Tensor<F>,
    params: &FamParams<F>,
    layout: &ParamLayout,
    dz: F,
    flat: &mut [F],
    dx_body: &mut [F],
    dx_face: &mut [F],
) {
    let dims = params.dims();
    let channels = dims.channels;
    let bottleneck = dims.bottleneck();
    let spatial = dims.height * dims.width;
    let per_cell = F::cast(spatial as f64);
    let head = params.head(HeadKind::Fused);

    // Fully connected layer.
    flat[layout.fused.fc_b] += dz;
    let mut dv = Vec::with_capacity(channels);
    for c in 0..channels {
        flat[layout.fused.fc_w.start + c] += dz * trace.v[c];
        dv.push(dz * head.fc_w[c]);
    }

    // Average pool back onto the fused map: the residual branch feeds
    // x_body directly, the attention branch splits into the product term
    // and, later, the squeeze pathway.
    let mut ds = vec![F::zero(); channels];
    let mut dxc = vec![F::zero(); channels * spatial];
    for c in 0..channels {
        let dy = dv[c] / per_cell;
        for i in c * spatial..(c + 1) * spatial {
            ds[c] += dy * trace.xc.data()[i];
            dxc[i] = dy * trace.s[c];
            dx_body[i] += dy;
        }
    }

    // Excite layer through the logistic.
    let mut dh = vec![F::zero(); bottleneck];
    for c in 0..channels {
        let dt = ds[c] * trace.s[c] * (F::one() - trace.s[c]);
        flat[layout.se_b2.start + c] += dt;
        for j in 0..bottleneck {
            flat[layout.se_w2.start + c * bottleneck + j] += dt * trace.h[j];
            dh[j] += dt * params.se_w2[c * bottleneck + j];
        }
    }

    // Squeeze layer through the rectifier.
    let mut dg = vec![F::zero(); channels];
    for j in 0..bottleneck {
        let da = if trace.a[j] > F::zero() { dh[j] } else { F::zero() };
        flat[layout.se_b1.start + j] += da;
        for c in 0..channels {
            flat[layout.se_w1.start + j * channels + c] += da * trace.g[c];
            dg[c] += da * params.se_w1[j * channels + c];
        }
    }
    for (channel, &grad) in dxc.chunks_exact_mut(spatial).zip(&dg) {
        let spread = grad / per_cell;
        for cell in channel {
            *cell += spread;
        }
    }

    // Weighted Hadamard product.
    for i in 0..channels * spatial {
        let xb = x_body.data()[i];
        let xf = x_face.data()[i];
        let fw = params.fusion.data()[i];
        flat[layout.fusion.start + i] += dxc[i] * xb * xf;
        dx_body[i] += dxc[i] * fw * xf;
        dx_face[i] += dxc[i] * fw * xb;
    }
}

/// Accumulates the body-only-path gradients for one sample.
fn body_backprop<F: Real>(
    v: &[F],
    params: &FamParams<F>,
    layout: &ParamLayout,
    dz: F,
    flat: &mut [F],
    dx_body: &mut [F],
) {
    let dims = params.dims();
    let spatial = dims.height * dims.width;
    let per_cell = F::cast(spatial as f64);
    let head_layout = layout.head(HeadKind::Body);
    let head = params.head(HeadKind::Body);
    flat[head_layout.fc_b] += dz;
    for c in 0..dims.channels {
        flat[head_layout.fc_w.start + c] += dz * v[c];
        let spread = dz * head.fc_w[c] / per_cell;
        for cell in &mut dx_body[c * spatial..(c + 1) * spatial] {
            *cell += spread;
        }
    }
}

/// Running-statistics normalization backward: accumulates the gamma/beta
/// gradients and returns the gradient at the pre-normalization logit.
fn bn_eval_backward<F: Real>(
    z: F,
    head: &HeadParams<F>,
    head_layout: &HeadLayout,
    dlogit: F,
    flat: &mut [F],
) -> F {
    let denom = (head.bn_running_var + F::cast(BN_EPSILON)).sqrt();
    let normalized = (z - head.bn_running_mean) / denom;
    flat[head_layout.bn_gamma] += dlogit * normalized;
    flat[head_layout.bn_beta] += dlogit;
    dlogit * head.bn_gamma / denom
}

/// Loss and gradients of one eval-mode sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradients<F> {
    /// Gradient per trainable scalar, in flat layout order.
    pub params: Vec<F>,
    pub x_body: Tensor<F>,
    /// Present whenever a face map was supplied; exactly zero for gated-off
    /// orientations.
    pub x_face: Option<Tensor<F>>,
    pub loss: F,
}

/// Analytic gradients of `bce_logits_loss(predict(..), label)` for a single
/// sample with running-statistics normalization.
pub fn sample_gradients<F: Real>(
    x_body: &Tensor<F>,
    x_face: Option<&Tensor<F>>,
    orientation: OrientationLabel,
    label: u8,
    params: &FamParams<F>,
) -> Result<SampleGradients<F>, FamError> {
    if label > 1 {
        return Err(FamError::InvalidLabel { label });
    }
    params.expect_feature("x_body", x_body)?;
    let layout = params.layout();
    let mut flat = vec![F::zero(); layout.len];
    let mut dx_body = vec![F::zero(); x_body.len()];
    let mut dx_face = x_face.map(|x| vec![F::zero(); x.len()]);
    let y = F::cast(f64::from(label));

    let loss = match orientation {
        OrientationLabel::Frontal => {
            let x_face = x_face.ok_or(FamError::MissingFace)?;
            let trace = frontal_trace(x_body, x_face, params)?;
            let head = params.head(HeadKind::Fused);
            let logit = bn_eval(trace.z, head);
            let loss = bce_logits_loss(logit, label)?;
            let dlogit = logistic(logit) - y;
            let dz = bn_eval_backward(trace.z, head, &layout.fused, dlogit, &mut flat);
            frontal_backprop(
                &trace,
                x_body,
                x_face,
                params,
                &layout,
                dz,
                &mut flat,
                &mut dx_body,
                dx_face.as_mut().expect("face gradient buffer exists"),
            );
            loss
        }
        _ => {
            let dims = params.dims();
            let head = params.head(HeadKind::Body);
            let v = spatial_mean(x_body, dims);
            let z = pooled_logit(x_body, head, dims);
            let logit = bn_eval(z, head);
            let loss = bce_logits_loss(logit, label)?;
            let dlogit = logistic(logit) - y;
            let dz = bn_eval_backward(z, head, layout.head(HeadKind::Body), dlogit, &mut flat);
            body_backprop(&v, params, &layout, dz, &mut flat, &mut dx_body);
            loss
        }
    };
    if !loss.as_f64().is_finite() {
        return Err(FamError::NonFinite { context: "sample loss".into() });
    }

    let shape = params.dims().feature_shape();
    Ok(SampleGradients {
        params: flat,
        x_body: Tensor::new(shape, dx_body)?,
        x_face: dx_face.map(|d| Tensor::new(shape, d)).transpose()?,
        loss,
    })
}

/// Mean and population variance of a mini-batch of logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnBatchStats<F> {
    pub mean: F,
    /// Population variance (divided by the batch size).
    pub var: F,
    pub batch: usize,
}

impl<F: Real> BnBatchStats<F> {
    pub(crate) fn from_logits(logits: &[F]) -> Self {
        let count = F::cast(logits.len() as f64);
        let mean = logits.iter().copied().sum::<F>() / count;
        let var = logits.iter().map(|&z| (z - mean) * (z - mean)).sum::<F>() / count;
        BnBatchStats { mean, var, batch: logits.len() }
    }
}

/// Folds one batch's statistics into a head's running statistics with
/// momentum 0.1; the variance enters with the unbiased `B/(B-1)` correction.
pub fn apply_running_update<F: Real>(head: &mut HeadParams<F>, stats: &BnBatchStats<F>) {
    debug_assert!(stats.batch >= 2, "batch statistics need at least 2 samples");
    let momentum = F::cast(0.1);
    let keep = F::one() - momentum;
    let unbiased =
        stats.var * F::cast(stats.batch as f64) / F::cast((stats.batch - 1) as f64);
    head.bn_running_mean = keep * head.bn_running_mean + momentum * stats.mean;
    head.bn_running_var = keep * head.bn_running_var + momentum * unbiased;
}

/// Gradients and loss of one train-mode mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchBackward<F> {
    /// Gradient of the mean batch loss per trainable scalar.
    pub params: Vec<F>,
    pub mean_loss: F,
    /// Statistics of the fused head's sub-batch, when it had samples.
    pub fused_stats: Option<BnBatchStats<F>>,
    /// Statistics of the body head's sub-batch, when it had samples.
    pub body_stats: Option<BnBatchStats<F>>,
}

enum SubTrace<F> {
    Frontal(FrontalTrace<F>),
    Body { v: Vec<F>, z: F },
}

/// Analytic gradients of the mean batch loss with batch-statistics
/// normalization.
///
/// Frontal samples form the fused head's sub-batch, everything else the
/// body head's; each sub-batch is normalized by its own statistics, so each
/// needs at least two samples.
pub fn batch_gradients<F: Real>(
    samples: &[TrainSample<F>],
    params: &FamParams<F>,
) -> Result<BatchBackward<F>, FamError> {
    if samples.len() < 2 {
        return Err(FamError::DegenerateBatch { size: samples.len() });
    }
    for sample in samples {
        if sample.label > 1 {
            return Err(FamError::InvalidLabel { label: sample.label });
        }
    }
    let layout = params.layout();
    let mut flat = vec![F::zero(); layout.len];
    let total = F::cast(samples.len() as f64);
    let mut total_loss = F::zero();

    let frontal: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].orientation == OrientationLabel::Frontal)
        .collect();
    let body: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].orientation != OrientationLabel::Frontal)
        .collect();

    let mut run_head = |indices: &[usize], kind: HeadKind| -> Result<Option<BnBatchStats<F>>, FamError> {
        if indices.is_empty() {
            return Ok(None);
        }
        if indices.len() < 2 {
            return Err(FamError::DegenerateBatch { size: indices.len() });
        }
        let head = params.head(kind);
        let head_layout = layout.head(kind);
        let mut traces = Vec::with_capacity(indices.len());
        for &i in indices {
            let sample = &samples[i];
            let trace = match kind {
                HeadKind::Fused => {
                    let x_face = sample.x_face.as_ref().ok_or(FamError::MissingFace)?;
                    SubTrace::Frontal(frontal_trace(&sample.x_body, x_face, params)?)
                }
                HeadKind::Body => {
                    params.expect_feature("x_body", &sample.x_body)?;
                    let v = spatial_mean(&sample.x_body, params.dims());
                    let z = pooled_logit(&sample.x_body, head, params.dims());
                    SubTrace::Body { v, z }
                }
            };
            traces.push(trace);
        }
        let logits: Vec<F> = traces
            .iter()
            .map(|t| match t {
                SubTrace::Frontal(trace) => trace.z,
                SubTrace::Body { z, .. } => *z,
            })
            .collect();
        let stats = BnBatchStats::from_logits(&logits);
        let denom = (stats.var + F::cast(BN_EPSILON)).sqrt();
        let normalized: Vec<F> = logits.iter().map(|&z| (z - stats.mean) / denom).collect();

        // Loss and its gradient at each normalized output.
        let mut dout = Vec::with_capacity(indices.len());
        for (k, &i) in indices.iter().enumerate() {
            let out = head.bn_gamma * normalized[k] + head.bn_beta;
            total_loss += bce_logits_loss(out, samples[i].label)?;
            let y = F::cast(f64::from(samples[i].label));
            dout.push((logistic(out) - y) / total);
        }

        // Batch-statistics normalization backward.
        let m = F::cast(indices.len() as f64);
        let mut mean_du = F::zero();
        let mut mean_du_u = F::zero();
        for k in 0..indices.len() {
            flat[head_layout.bn_gamma] += dout[k] * normalized[k];
            flat[head_layout.bn_beta] += dout[k];
            let du = dout[k] * head.bn_gamma;
            mean_du += du;
            mean_du_u += du * normalized[k];
        }
        mean_du /= m;
        mean_du_u /= m;

        for (k, &i) in indices.iter().enumerate() {
            let du = dout[k] * head.bn_gamma;
            let dz = (du - mean_du - normalized[k] * mean_du_u) / denom;
            let sample = &samples[i];
            match &traces[k] {
                SubTrace::Frontal(trace) => {
                    let mut dx_body = vec![F::zero(); sample.x_body.len()];
                    let mut dx_face = vec![F::zero(); sample.x_body.len()];
                    frontal_backprop(
                        trace,
                        &sample.x_body,
                        sample.x_face.as_ref().expect("frontal sample has a face map"),
                        params,
                        &layout,
                        dz,
                        &mut flat,
                        &mut dx_body,
                        &mut dx_face,
                    );
                }
                SubTrace::Body { v, .. } => {
                    let mut dx_body = vec![F::zero(); sample.x_body.len()];
                    body_backprop(v, params, &layout, dz, &mut flat, &mut dx_body);
                }
            }
        }
        Ok(Some(stats))
    };

    let fused_stats = run_head(&frontal, HeadKind::Fused)?;
    let body_stats = run_head(&body, HeadKind::Body)?;

    let mean_loss = total_loss / total;
    if !mean_loss.as_f64().is_finite() {
        return Err(FamError::NonFinite { context: "batch loss".into() });
    }
    Ok(BatchBackward { params: flat, mean_loss, fused_stats, body_stats })
}

/// Mean batch loss under batch-statistics normalization, without mutating
/// anything; the forward side of [`batch_gradients`].
pub fn batch_loss<F: Real>(
    samples: &[TrainSample<F>],
    params: &FamParams<F>,
) -> Result<F, FamError> {
    Ok(batch_gradients(samples, params)?.mean_loss)
}
