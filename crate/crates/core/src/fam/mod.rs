//! Face-body fusion network: weighted Hadamard fusion of the two feature
//! maps, squeeze-and-excitation channel attention with a residual body link,
//! and an orientation-gated classifier head, plus analytic gradients and a
//! desk-scale trainer.

pub mod backward;
pub mod checkpoint;
pub mod gradcheck;
pub mod train;

use std::ops::Range;

use rand::{Rng, RngExt};
use thiserror::Error;

use crate::geometry::OrientationLabel;
use crate::real::{logistic, Real};
use crate::tensor::{Tensor, TensorError};

pub use backward::{
    apply_running_update, batch_gradients, batch_loss, sample_gradients, BatchBackward,
    BnBatchStats, SampleGradients,
};
pub use checkpoint::{load_params, save_params, CheckpointError};
pub use gradcheck::{grad_check, grad_check_corrupted, GradCheckConfig, GradReport, GroupReport};
pub use train::{
    evaluate_accuracy, separable_pairs, toy_train, PlateauScheduler, TrainConfig, TrainReport,
};

/// Batch-norm denominator guard.
pub const BN_EPSILON: f64 = 1e-5;

/// Errors from fusion-network construction, forward passes, and training.
#[derive(Debug, Error)]
pub enum FamError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("bad dimensions: {detail}")]
    BadDims { detail: String },
    #[error("frontal prediction needs a face feature map")]
    MissingFace,
    #[error("label {label} is not binary")]
    InvalidLabel { label: u8 },
    #[error("batch of {size} cannot provide batch statistics (need at least 2)")]
    DegenerateBatch { size: usize },
    #[error("{context} produced a non-finite value")]
    NonFinite { context: String },
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("dataset of {size} samples is too small: need at least {need}")]
    DatasetTooSmall { size: usize, need: usize },
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("bad config: {detail}")]
    BadConfig { detail: String },
}

/// Whether batch normalization uses running statistics or batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Which classifier head a forward pass goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// The head fed by the fused face-body features.
    Fused,
    /// The head fed by body features alone.
    Body,
}

/// Feature-map dimensions and the attention bottleneck ratio.
///
/// Feature maps are channels x height x width; `reduction` divides
/// `channels` and sets the attention bottleneck to `channels / reduction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FamDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub reduction: usize,
}

impl FamDims {
    /// Validates that all dimensions are positive and `reduction` divides
    /// `channels`.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        reduction: usize,
    ) -> Result<Self, FamError> {
        if channels == 0 || height == 0 || width == 0 || reduction == 0 {
            return Err(FamError::BadDims {
                detail: format!("{channels}x{height}x{width} r={reduction} has a zero dimension"),
            });
        }
        if !channels.is_multiple_of(reduction) {
            return Err(FamError::BadDims {
                detail: format!("reduction {reduction} does not divide {channels} channels"),
            });
        }
        Ok(FamDims { channels, height, width, reduction })
    }

    /// The widest standard bottleneck ratio (at most 16) dividing `channels`.
    pub fn auto_reduction(channels: usize) -> usize {
        (1..=16.min(channels)).rev().find(|r| channels.is_multiple_of(*r)).unwrap_or(1)
    }

    /// Small dimensions for desk-scale checks: 8x4x3 features with the
    /// widest dividing bottleneck ratio.
    pub fn desk_scale() -> Self {
        FamDims { channels: 8, height: 4, width: 3, reduction: Self::auto_reduction(8) }
    }

    /// Shape of one feature map.
    pub fn feature_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Attention bottleneck width, `channels / reduction`.
    pub fn bottleneck(&self) -> usize {
        self.channels / self.reduction
    }

    fn spatial(&self) -> usize {
        self.height * self.width
    }
}

/// One classifier head: average pool, fully connected layer, and batch
/// normalization over the resulting scalar logit.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<F> {
    /// Fully connected weights, one per channel.
    pub fc_w: Vec<F>,
    pub fc_b: F,
    pub bn_gamma: F,
    pub bn_beta: F,
    pub bn_running_mean: F,
    /// Running variance; must stay positive.
    pub bn_running_var: F,
}

impl<F: Real> HeadParams<F> {
    fn zeros(channels: usize) -> Self {
        HeadParams {
            fc_w: vec![F::zero(); channels],
            fc_b: F::zero(),
            bn_gamma: F::zero(),
            bn_beta: F::zero(),
            bn_running_mean: F::zero(),
            bn_running_var: F::one(),
        }
    }

    fn init(channels: usize, rng: &mut impl Rng) -> Self {
        HeadParams {
            fc_w: uniform_fan_in(channels, channels, rng),
            fc_b: F::zero(),
            bn_gamma: F::one(),
            bn_beta: F::zero(),
            bn_running_mean: F::zero(),
            bn_running_var: F::one(),
        }
    }
}

/// All parameters of the fusion network.
///
/// Fields are public for inspection and value tweaks; construct through
/// [`FamParams::init`] or [`FamParams::zeros`] and keep vector lengths
/// consistent with `dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct FamParams<F> {
    dims: FamDims,
    /// Learnable fusion matrix, same shape as a feature map.
    pub fusion: Tensor<F>,
    /// Attention squeeze layer, `bottleneck x channels` row-major.
    pub se_w1: Vec<F>,
    pub se_b1: Vec<F>,
    /// Attention excite layer, `channels x bottleneck` row-major.
    pub se_w2: Vec<F>,
    pub se_b2: Vec<F>,
    /// Head for the fused face-body path.
    pub fused_head: HeadParams<F>,
    /// Head for the body-only path; `None` when the paths share one head.
    pub body_head: Option<HeadParams<F>>,
}

fn uniform_fan_in<F: Real>(len: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| F::cast(rng.random_range(-bound..=bound))).collect()
}

impl<F: Real> FamParams<F> {
    /// All-zero weights and biases with identity-variance batch norm.
    pub fn zeros(dims: FamDims, shared_head: bool) -> Self {
        let c = dims.channels;
        let b = dims.bottleneck();
        FamParams {
            dims,
            fusion: Tensor::zeros(dims.feature_shape()),
            se_w1: vec![F::zero(); b * c],
            se_b1: vec![F::zero(); b],
            se_w2: vec![F::zero(); c * b],
            se_b2: vec![F::zero(); c],
            fused_head: HeadParams::zeros(c),
            body_head: (!shared_head).then(|| HeadParams::zeros(c)),
        }
    }

    /// Fresh trainable state: the fusion matrix starts at all-ones (plain
    /// Hadamard fusion), linear layers draw uniform +/-1/sqrt(fan-in),
    /// biases start at zero, and batch norm starts as the identity.
    pub fn init(dims: FamDims, shared_head: bool, rng: &mut impl Rng) -> Self {
        let c = dims.channels;
        let b = dims.bottleneck();
        FamParams {
            dims,
            fusion: Tensor::filled(dims.feature_shape(), F::one()),
            se_w1: uniform_fan_in(b * c, c, rng),
            se_b1: vec![F::zero(); b],
            se_w2: uniform_fan_in(c * b, b, rng),
            se_b2: vec![F::zero(); c],
            fused_head: HeadParams::init(c, rng),
            body_head: (!shared_head).then(|| HeadParams::init(c, rng)),
        }
    }

    pub fn dims(&self) -> &FamDims {
        &self.dims
    }

    /// Whether the body-only path reuses the fused head.
    pub fn shared_head(&self) -> bool {
        self.body_head.is_none()
    }

    /// The head parameters used for `kind`, honoring head sharing.
    pub fn head(&self, kind: HeadKind) -> &HeadParams<F> {
        match kind {
            HeadKind::Fused => &self.fused_head,
            HeadKind::Body => self.body_head.as_ref().unwrap_or(&self.fused_head),
        }
    }

    pub(crate) fn head_mut(&mut self, kind: HeadKind) -> &mut HeadParams<F> {
        match kind {
            HeadKind::Fused => &mut self.fused_head,
            HeadKind::Body => self.body_head.as_mut().unwrap_or(&mut self.fused_head),
        }
    }

    pub(crate) fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.dims, self.shared_head())
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn trainable_len(&self) -> usize {
        self.layout().len
    }

    /// Copies every trainable scalar into one flat vector, in the fixed
    /// order: fusion, attention weights and biases, fused head, body head.
    pub fn flatten_trainable(&self) -> Vec<F> {
        let mut flat = Vec::with_capacity(self.trainable_len());
        flat.extend_from_slice(self.fusion.data());
        flat.extend_from_slice(&self.se_w1);
        flat.extend_from_slice(&self.se_b1);
        flat.extend_from_slice(&self.se_w2);
        flat.extend_from_slice(&self.se_b2);
        for head in std::iter::once(&self.fused_head).chain(self.body_head.as_ref()) {
            flat.extend_from_slice(&head.fc_w);
            flat.push(head.fc_b);
            flat.push(head.bn_gamma);
            flat.push(head.bn_beta);
        }
        flat
    }

    /// Restores trainable scalars from [`FamParams::flatten_trainable`]'s
    /// layout; running statistics are left untouched.
    pub fn set_trainable(&mut self, flat: &[F]) -> Result<(), FamError> {
        let expected = self.trainable_len();
        if flat.len() != expected {
            return Err(FamError::BadDims {
                detail: format!("flat parameter vector has {} values, need {expected}", flat.len()),
            });
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let slice = &flat[at..at + n];
            at += n;
            slice
        };
        self.fusion.data_mut().copy_from_slice(take(self.dims.feature_shape().iter().product()));
        let w1 = self.se_w1.len();
        self.se_w1.copy_from_slice(take(w1));
        let b1 = self.se_b1.len();
        self.se_b1.copy_from_slice(take(b1));
        let w2 = self.se_w2.len();
        self.se_w2.copy_from_slice(take(w2));
        let b2 = self.se_b2.len();
        self.se_b2.copy_from_slice(take(b2));
        for head in std::iter::once(&mut self.fused_head).chain(self.body_head.as_mut()) {
            let c = head.fc_w.len();
            head.fc_w.copy_from_slice(take(c));
            head.fc_b = take(1)[0];
            head.bn_gamma = take(1)[0];
            head.bn_beta = take(1)[0];
        }
        Ok(())
    }

    fn expect_feature(&self, operand: &'static str, x: &Tensor<F>) -> Result<(), FamError> {
        let expected = self.dims.feature_shape();
        if x.shape() != expected {
            return Err(FamError::Tensor(TensorError::ShapeMismatch {
                operand,
                expected: expected.to_vec(),
                got: x.shape().to_vec(),
            }));
        }
        Ok(())
    }
}

/// Offsets of each parameter group inside the flat trainable vector.
#[derive(Debug, Clone)]
pub(crate) struct ParamLayout {
    pub fusion: Range<usize>,
    pub se_w1: Range<usize>,
    pub se_b1: Range<usize>,
    pub se_w2: Range<usize>,
    pub se_b2: Range<usize>,
    pub fused: HeadLayout,
    pub body: Option<HeadLayout>,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadLayout {
    pub fc_w: Range<usize>,
    pub fc_b: usize,
    pub bn_gamma: usize,
    pub bn_beta: usize,
}

impl HeadLayout {
    fn new(at: &mut usize, channels: usize) -> Self {
        let fc_w = *at..*at + channels;
        let layout =
            HeadLayout { fc_b: fc_w.end, bn_gamma: fc_w.end + 1, bn_beta: fc_w.end + 2, fc_w };
        *at = layout.bn_beta + 1;
        layout
    }
}

impl ParamLayout {
    pub fn new(dims: &FamDims, shared_head: bool) -> Self {
        let c = dims.channels;
        let b = dims.bottleneck();
        let mut at = 0;
        let mut range = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let fusion = range(c * dims.spatial());
        let se_w1 = range(b * c);
        let se_b1 = range(b);
        let se_w2 = range(c * b);
        let se_b2 = range(c);
        let fused = HeadLayout::new(&mut at, c);
        let body = if shared_head { None } else { Some(HeadLayout::new(&mut at, c)) };
        ParamLayout { fusion, se_w1, se_b1, se_w2, se_b2, fused, body, len: at }
    }

    pub fn head(&self, kind: HeadKind) -> &HeadLayout {
        match kind {
            HeadKind::Fused => &self.fused,
            HeadKind::Body => self.body.as_ref().unwrap_or(&self.fused),
        }
    }

    /// Group names with their flat ranges, in layout order.
    pub fn groups(&self) -> Vec<(&'static str, Range<usize>)> {
        let mut groups = vec![
            ("fusion", self.fusion.clone()),
            ("se_w1", self.se_w1.clone()),
            ("se_b1", self.se_b1.clone()),
            ("se_w2", self.se_w2.clone()),
            ("se_b2", self.se_b2.clone()),
            ("fc_w", self.fused.fc_w.clone()),
            ("fc_b", self.fused.fc_b..self.fused.fc_b + 1),
            ("bn_gamma", self.fused.bn_gamma..self.fused.bn_gamma + 1),
            ("bn_beta", self.fused.bn_beta..self.fused.bn_beta + 1),
        ];
        if let Some(body) = &self.body {
            groups.push(("body_fc_w", body.fc_w.clone()));
            groups.push(("body_fc_b", body.fc_b..body.fc_b + 1));
            groups.push(("body_bn_gamma", body.bn_gamma..body.bn_gamma + 1));
            groups.push(("body_bn_beta", body.bn_beta..body.bn_beta + 1));
        }
        groups
    }
}

/// Elementwise weighted fusion `x_body * fusion * x_face`.
pub fn hadamard_fuse<F: Real>(
    x_body: &Tensor<F>,
    x_face: &Tensor<F>,
    fusion: &Tensor<F>,
) -> Result<Tensor<F>, FamError> {
    let fused = x_body.zip_map("x_face", x_face, |b, f| b * f)?;
    Ok(fused.zip_map("fusion", fusion, |bf, w| bf * w)?)
}

/// Per-channel spatial mean of a `C x H x W` map.
fn spatial_mean<F: Real>(x: &Tensor<F>, dims: &FamDims) -> Vec<F> {
    let n = F::cast(dims.spatial() as f64);
    x.data()
        .chunks_exact(dims.spatial())
        .map(|channel| channel.iter().copied().sum::<F>() / n)
        .collect()
}

/// The attention scales for `x_c`: squeeze to per-channel means, pass
/// through the bottleneck with a rectifier, and squash with the logistic.
/// Every scale lies strictly inside (0, 1).
pub fn channel_scales<F: Real>(
    x_c: &Tensor<F>,
    params: &FamParams<F>,
) -> Result<Vec<F>, FamError> {
    params.expect_feature("x_c", x_c)?;
    let g = spatial_mean(x_c, &params.dims);
    let (_, h) = squeeze_excite_hidden(&g, params);
    Ok(excite_scales(&h, params).1)
}

/// Bottleneck pre-activations `a` and rectified activations `h`.
fn squeeze_excite_hidden<F: Real>(g: &[F], params: &FamParams<F>) -> (Vec<F>, Vec<F>) {
    let c = params.dims.channels;
    let b = params.dims.bottleneck();
    let mut a = Vec::with_capacity(b);
    for j in 0..b {
        let row = &params.se_w1[j * c..(j + 1) * c];
        let sum = row.iter().zip(g).map(|(&w, &x)| w * x).sum::<F>() + params.se_b1[j];
        a.push(sum);
    }
    let h = a.iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect();
    (a, h)
}

/// Excite pre-activations `t` and logistic scales `s`.
fn excite_scales<F: Real>(h: &[F], params: &FamParams<F>) -> (Vec<F>, Vec<F>) {
    let b = params.dims.bottleneck();
    let mut t = Vec::with_capacity(params.dims.channels);
    for c in 0..params.dims.channels {
        let row = &params.se_w2[c * b..(c + 1) * b];
        let sum = row.iter().zip(h).map(|(&w, &x)| w * x).sum::<F>() + params.se_b2[c];
        t.push(sum);
    }
    let s = t.iter().map(|&v| logistic(v)).collect();
    (t, s)
}

/// Rescales each channel of `x_c` by its attention scale.
pub fn channel_attention<F: Real>(
    x_c: &Tensor<F>,
    params: &FamParams<F>,
) -> Result<Tensor<F>, FamError> {
    let scales = channel_scales(x_c, params)?;
    Ok(scale_channels(x_c, &scales, &params.dims))
}

fn scale_channels<F: Real>(x: &Tensor<F>, scales: &[F], dims: &FamDims) -> Tensor<F> {
    let spatial = dims.spatial();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * scales[i / spatial])
        .collect();
    Tensor::new(dims.feature_shape(), data).expect("scaled map keeps its shape")
}

/// The fused feature map: channel attention over the weighted Hadamard
/// product, plus the body features as a residual.
pub fn fam_forward<F: Real>(
    x_body: &Tensor<F>,
    x_face: &Tensor<F>,
    params: &FamParams<F>,
) -> Result<Tensor<F>, FamError> {
    params.expect_feature("x_body", x_body)?;
    let x_c = hadamard_fuse(x_body, x_face, &params.fusion)?;
    let attended = channel_attention(&x_c, params)?;
    Ok(attended.zip_map("x_body", x_body, |a, b| a + b)?)
}

fn bn_eval<F: Real>(z: F, head: &HeadParams<F>) -> F {
    let eps = F::cast(BN_EPSILON);
    let normalized = (z - head.bn_running_mean) / (head.bn_running_var + eps).sqrt();
    head.bn_gamma * normalized + head.bn_beta
}

/// Pre-normalization logit: average pool, then the fully connected layer.
fn pooled_logit<F: Real>(features: &Tensor<F>, head: &HeadParams<F>, dims: &FamDims) -> F {
    let v = spatial_mean(features, dims);
    v.iter().zip(&head.fc_w).map(|(&x, &w)| x * w).sum::<F>() + head.fc_b
}

/// Classifier head over a mini-batch of feature maps.
///
/// Eval phase normalizes each logit with the running statistics; train phase
/// normalizes with the batch's own population statistics and therefore needs
/// at least two samples.
pub fn classifier_head<F: Real>(
    features: &[&Tensor<F>],
    kind: HeadKind,
    params: &FamParams<F>,
    phase: Phase,
) -> Result<Vec<F>, FamError> {
    for x in features {
        params.expect_feature("features", x)?;
    }
    let head = params.head(kind);
    let logits: Vec<F> =
        features.iter().map(|x| pooled_logit(x, head, &params.dims)).collect();
    match phase {
        Phase::Eval => Ok(logits.iter().map(|&z| bn_eval(z, head)).collect()),
        Phase::Train => {
            if logits.len() < 2 {
                return Err(FamError::DegenerateBatch { size: logits.len() });
            }
            let stats = BnBatchStats::from_logits(&logits);
            let eps = F::cast(BN_EPSILON);
            let denom = (stats.var + eps).sqrt();
            Ok(logits
                .iter()
                .map(|&z| head.bn_gamma * ((z - stats.mean) / denom) + head.bn_beta)
                .collect())
        }
    }
}

/// Orientation-gated prediction: frontal samples flow through the fusion
/// network into the fused head, everything else through the body-only head.
///
/// A single sample cannot provide batch statistics, so only [`Phase::Eval`]
/// is accepted here; training goes through [`batch_gradients`].
pub fn predict<F: Real>(
    x_body: &Tensor<F>,
    x_face: Option<&Tensor<F>>,
    orientation: OrientationLabel,
    params: &FamParams<F>,
    phase: Phase,
) -> Result<F, FamError> {
    if phase == Phase::Train {
        return Err(FamError::DegenerateBatch { size: 1 });
    }
    params.expect_feature("x_body", x_body)?;
    match orientation {
        OrientationLabel::Frontal => {
            let x_face = x_face.ok_or(FamError::MissingFace)?;
            let fused = fam_forward(x_body, x_face, params)?;
            Ok(bn_eval(pooled_logit(&fused, params.head(HeadKind::Fused), &params.dims), params.head(HeadKind::Fused)))
        }
        _ => Ok(bn_eval(
            pooled_logit(x_body, params.head(HeadKind::Body), &params.dims),
            params.head(HeadKind::Body),
        )),
    }
}

/// Numerically stable binary cross-entropy on a logit:
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
pub fn bce_logits_loss<F: Real>(logit: F, label: u8) -> Result<F, FamError> {
    if label > 1 {
        return Err(FamError::InvalidLabel { label });
    }
    let y = F::cast(f64::from(label));
    let zero = F::zero();
    let max_part = if logit > zero { logit } else { zero };
    Ok(max_part - logit * y + (-logit.abs()).exp().ln_1p())
}

/// A labeled training sample with its orientation gate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<F> {
    pub x_body: Tensor<F>,
    /// Present for frontal samples.
    pub x_face: Option<Tensor<F>>,
    pub orientation: OrientationLabel,
    /// Binary gender label.
    pub label: u8,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tensor(shape: [usize; 3], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    fn seeded_params(dims: FamDims, shared: bool, seed: u64) -> FamParams<f64> {
        FamParams::init(dims, shared, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn random_feature(dims: &FamDims, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let data = (0..dims.channels * dims.height * dims.width)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        tensor(dims.feature_shape(), data)
    }

    #[test]
    fn dims_validate_reduction_and_zero_sizes() {
        assert!(FamDims::new(8, 4, 3, 4).is_ok());
        assert!(matches!(FamDims::new(8, 4, 3, 3), Err(FamError::BadDims { .. })));
        assert!(matches!(FamDims::new(0, 4, 3, 1), Err(FamError::BadDims { .. })));
        assert_eq!(FamDims::auto_reduction(8), 8);
        assert_eq!(FamDims::auto_reduction(2048), 16);
        assert_eq!(FamDims::auto_reduction(7), 7);
        assert_eq!(FamDims::auto_reduction(13), 13);
        assert_eq!(FamDims::desk_scale().bottleneck(), 1);
    }

    #[test]
    fn hadamard_fuse_identity_annihilator_and_scalars() {
        let body = tensor([2, 1, 1], vec![2.0, -3.0]);
        let face = tensor([2, 1, 1], vec![5.0, 7.0]);
        let ones = Tensor::filled([2, 1, 1], 1.0);
        let fused = hadamard_fuse(&body, &face, &ones).unwrap();
        assert_eq!(fused.data(), &[10.0, -21.0]);

        let zeros = Tensor::zeros([2, 1, 1]);
        assert_eq!(hadamard_fuse(&body, &face, &zeros).unwrap().data(), &[0.0, 0.0]);

        let b = tensor([1, 1, 1], vec![2.0]);
        let f = tensor([1, 1, 1], vec![3.0]);
        let w = tensor([1, 1, 1], vec![0.5]);
        assert_eq!(hadamard_fuse(&b, &f, &w).unwrap().data(), &[3.0]);
    }

    #[test]
    fn hadamard_fuse_names_the_offending_operand() {
        let body = tensor([2, 1, 1], vec![1.0, 1.0]);
        let bad = tensor([1, 2, 1], vec![1.0, 1.0]);
        let ones = Tensor::filled([2, 1, 1], 1.0);
        let err = hadamard_fuse(&body, &bad, &ones).unwrap_err();
        assert!(err.to_string().contains("x_face"), "{err}");
        let err = hadamard_fuse(&body, &body, &bad).unwrap_err();
        assert!(err.to_string().contains("fusion"), "{err}");
    }

    #[test]
    fn attention_matches_the_two_channel_worked_example() {
        // 2 channels, 1x1 spatial, bottleneck 2, identity-patterned weights.
        let dims = FamDims::new(2, 1, 1, 1).unwrap();
        let mut params = FamParams::zeros(dims, true);
        params.se_w1 = vec![1.0, 0.0, 0.0, 1.0];
        params.se_w2 = vec![1.0, 0.0, 0.0, 1.0];
        let x = tensor([2, 1, 1], vec![1.0, 1.0]);
        let scales = channel_scales(&x, &params).unwrap();
        assert_eq!(scales, vec![0.7310585786300049, 0.7310585786300049]);
        let out = channel_attention(&x, &params).unwrap();
        assert_relative_eq!(out.data()[0], 0.73106, max_relative = 1e-4);
        assert_relative_eq!(out.data()[1], 0.73106, max_relative = 1e-4);
    }

    #[test]
    fn attention_of_zeros_is_zeros_and_scales_stay_in_unit_interval() {
        let dims = FamDims::new(4, 2, 3, 2).unwrap();
        let params = seeded_params(dims, false, 11);
        let zeros = Tensor::zeros(dims.feature_shape());
        assert_eq!(channel_attention(&zeros, &params).unwrap().data(), zeros.data());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = random_feature(&dims, &mut rng);
            for s in channel_scales(&x, &params).unwrap() {
                assert!(s > 0.0 && s < 1.0, "scale {s} outside (0,1)");
            }
        }
    }

    #[test]
    fn forward_reduces_to_body_when_fusion_is_zero() {
        let dims = FamDims::new(4, 2, 3, 2).unwrap();
        let mut params = seeded_params(dims, false, 3);
        params.fusion = Tensor::zeros(dims.feature_shape());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let body = random_feature(&dims, &mut rng);
            let face = random_feature(&dims, &mut rng);
            let out = fam_forward(&body, &face, &params).unwrap();
            assert_eq!(out.data(), body.data());
        }
    }

    #[test]
    fn forward_with_neutral_fusion_is_attention_of_body_plus_body() {
        let dims = FamDims::new(4, 2, 3, 4).unwrap();
        let params = seeded_params(dims, true, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let body = random_feature(&dims, &mut rng);
        let face = Tensor::filled(dims.feature_shape(), 1.0);
        let out = fam_forward(&body, &face, &params).unwrap();
        let expected = channel_attention(&body, &params)
            .unwrap()
            .zip_map("x_body", &body, |a, b| a + b)
            .unwrap();
        assert_eq!(out.data(), expected.data());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn forward_matches_an_independent_recomputation() {
        // Step-by-step recount with plain loops, no shared helpers.
        let dims = FamDims::new(4, 2, 3, 2).unwrap();
        let params = seeded_params(dims, false, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let body = random_feature(&dims, &mut rng);
        let face = random_feature(&dims, &mut rng);
        let out = fam_forward(&body, &face, &params).unwrap();

        let (c, hw) = (4, 6);
        let mut xc = vec![0.0; c * hw];
        for i in 0..c * hw {
            xc[i] = body.data()[i] * params.fusion.data()[i] * face.data()[i];
        }
        let mut g = vec![0.0; c];
        for ch in 0..c {
            g[ch] = xc[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64;
        }
        let bottleneck = 2;
        let mut h = vec![0.0; bottleneck];
        for j in 0..bottleneck {
            let mut a = params.se_b1[j];
            for ch in 0..c {
                a += params.se_w1[j * c + ch] * g[ch];
            }
            h[j] = a.max(0.0);
        }
        let mut s = vec![0.0; c];
        for ch in 0..c {
            let mut t = params.se_b2[ch];
            for j in 0..bottleneck {
                t += params.se_w2[ch * bottleneck + j] * h[j];
            }
            s[ch] = 1.0 / (1.0 + (-t).exp());
        }
        for i in 0..c * hw {
            let expected = xc[i] * s[i / hw] + body.data()[i];
            assert_relative_eq!(out.data()[i], expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn forward_preserves_shape_across_valid_dims() {
        for (c, h, w, r) in [(1, 1, 1, 1), (2, 3, 5, 2), (8, 4, 3, 8), (16, 2, 2, 4)] {
            let dims = FamDims::new(c, h, w, r).unwrap();
            let params = seeded_params(dims, false, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let body = random_feature(&dims, &mut rng);
            let face = random_feature(&dims, &mut rng);
            let out = fam_forward(&body, &face, &params).unwrap();
            assert_eq!(out.shape(), body.shape());
        }
    }

    #[test]
    fn classifier_head_worked_examples() {
        let dims = FamDims::new(3, 2, 2, 1).unwrap();
        let mut params = FamParams::zeros(dims, true);
        params.fused_head.bn_gamma = 1.0;

        // Zero features, zero bias, identity batch norm.
        let zeros = Tensor::zeros(dims.feature_shape());
        let logit = classifier_head(&[&zeros], HeadKind::Fused, &params, Phase::Eval).unwrap()[0];
        assert_relative_eq!(logit, 0.0, epsilon = 1e-12);

        // Constant features k with weights summing to w: logit ~ k*w + b.
        params.fused_head.fc_w = vec![0.25, -1.0, 2.0];
        params.fused_head.fc_b = 0.125;
        let k = 0.5;
        let constant = Tensor::filled(dims.feature_shape(), k);
        let logit =
            classifier_head(&[&constant], HeadKind::Fused, &params, Phase::Eval).unwrap()[0];
        let expected = k * (0.25 - 1.0 + 2.0) + 0.125;
        assert_relative_eq!(logit, expected, max_relative = 1e-5);

        // Gamma 0 pins the logit to beta.
        params.fused_head.bn_gamma = 0.0;
        params.fused_head.bn_beta = -3.5;
        let logit =
            classifier_head(&[&constant], HeadKind::Fused, &params, Phase::Eval).unwrap()[0];
        assert_eq!(logit, -3.5);
    }

    #[test]
    fn train_phase_normalizes_with_batch_statistics() {
        let dims = FamDims::new(2, 1, 1, 1).unwrap();
        let mut params = FamParams::zeros(dims, true);
        params.fused_head.bn_gamma = 1.0;
        params.fused_head.fc_w = vec![1.0, 1.0];
        // Pooled logits 2 and 6: mean 4, population variance 4.
        let a = tensor([2, 1, 1], vec![1.0, 1.0]);
        let b = tensor([2, 1, 1], vec![3.0, 3.0]);
        let out = classifier_head(&[&a, &b], HeadKind::Fused, &params, Phase::Train).unwrap();
        assert_relative_eq!(out[0], -1.0, max_relative = 1e-5);
        assert_relative_eq!(out[1], 1.0, max_relative = 1e-5);

        let err = classifier_head(&[&a], HeadKind::Fused, &params, Phase::Train).unwrap_err();
        assert!(matches!(err, FamError::DegenerateBatch { size: 1 }));
    }

    #[test]
    fn predict_gates_on_orientation() {
        let dims = FamDims::new(4, 2, 3, 2).unwrap();
        let params = seeded_params(dims, false, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let body = random_feature(&dims, &mut rng);
        let face_a = random_feature(&dims, &mut rng);
        let face_b = random_feature(&dims, &mut rng);

        // Non-frontal predictions are bitwise independent of the face map.
        for orientation in [OrientationLabel::Backside, OrientationLabel::Sideways] {
            let with_a =
                predict(&body, Some(&face_a), orientation, &params, Phase::Eval).unwrap();
            let with_b =
                predict(&body, Some(&face_b), orientation, &params, Phase::Eval).unwrap();
            let without = predict(&body, None, orientation, &params, Phase::Eval).unwrap();
            assert_eq!(with_a.to_bits(), with_b.to_bits());
            assert_eq!(with_a.to_bits(), without.to_bits());
            let direct =
                classifier_head(&[&body], HeadKind::Body, &params, Phase::Eval).unwrap()[0];
            assert_eq!(with_a.to_bits(), direct.to_bits());
        }

        // Frontal requires the face map.
        let err = predict(&body, None, OrientationLabel::Frontal, &params, Phase::Eval)
            .unwrap_err();
        assert!(matches!(err, FamError::MissingFace));

        // Frontal with zero fusion equals the body-only features pushed
        // through the fused head.
        let mut zero_fusion = params.clone();
        zero_fusion.fusion = Tensor::zeros(dims.feature_shape());
        let gated = predict(&body, Some(&face_a), OrientationLabel::Frontal, &zero_fusion, Phase::Eval)
            .unwrap();
        let body_through_fused =
            classifier_head(&[&body], HeadKind::Fused, &zero_fusion, Phase::Eval).unwrap()[0];
        assert_eq!(gated.to_bits(), body_through_fused.to_bits());

        // Frontal composition oracle.
        let fused = fam_forward(&body, &face_a, &params).unwrap();
        let via_ops = classifier_head(&[&fused], HeadKind::Fused, &params, Phase::Eval).unwrap()[0];
        let direct =
            predict(&body, Some(&face_a), OrientationLabel::Frontal, &params, Phase::Eval)
                .unwrap();
        assert_eq!(direct.to_bits(), via_ops.to_bits());

        // Single-sample train phase cannot form batch statistics.
        let err = predict(&body, Some(&face_a), OrientationLabel::Frontal, &params, Phase::Train)
            .unwrap_err();
        assert!(matches!(err, FamError::DegenerateBatch { size: 1 }));
    }

    #[test]
    fn shared_head_reuses_the_fused_parameters() {
        let dims = FamDims::new(4, 2, 3, 2).unwrap();
        let params = seeded_params(dims, true, 5);
        assert!(params.shared_head());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let body = random_feature(&dims, &mut rng);
        let body_logit = predict(&body, None, OrientationLabel::Backside, &params, Phase::Eval)
            .unwrap();
        let fused_head =
            classifier_head(&[&body], HeadKind::Fused, &params, Phase::Eval).unwrap()[0];
        assert_eq!(body_logit.to_bits(), fused_head.to_bits());
    }

    #[test]
    fn bce_closed_forms() {
        assert_eq!(bce_logits_loss(0.0, 1).unwrap(), std::f64::consts::LN_2);
        assert_eq!(bce_logits_loss(0.0, 0).unwrap(), std::f64::consts::LN_2);
        assert!(bce_logits_loss(40.0, 1).unwrap() < 1e-17);
        assert_eq!(bce_logits_loss(-40.0, 1).unwrap(), 40.0);
        assert_eq!(bce_logits_loss(40.0, 0).unwrap(), 40.0);
        assert!(matches!(bce_logits_loss(0.0, 2).unwrap_err(), FamError::InvalidLabel { label: 2 }));
    }

    #[test]
    fn bce_is_finite_and_nonnegative_over_the_stated_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..2000 {
            let z: f64 = rng.random_range(-1e3..=1e3);
            let label = u8::from(rng.random_range(0..2i32) == 1);
            let loss = bce_logits_loss(z, label).unwrap();
            assert!(loss.is_finite() && loss >= 0.0, "z={z} label={label} loss={loss}");
        }
        assert!(bce_logits_loss(1e3f64, 0).unwrap().is_finite());
        assert!(bce_logits_loss(-1e3f64, 1).unwrap().is_finite());
    }

    #[test]
    fn flatten_and_restore_round_trip() {
        let dims = FamDims::new(6, 2, 2, 3).unwrap();
        for shared in [false, true] {
            let params = seeded_params(dims, shared, 13);
            let flat = params.flatten_trainable();
            assert_eq!(flat.len(), params.trainable_len());
            let mut other = FamParams::zeros(dims, shared);
            other.fused_head.bn_running_mean = 0.25;
            other.fused_head.bn_running_var = 2.0;
            other.set_trainable(&flat).unwrap();
            assert_eq!(other.flatten_trainable(), flat);
            // Running statistics are untouched by the flat restore.
            assert_eq!(other.fused_head.bn_running_mean, 0.25);
            assert_eq!(other.fused_head.bn_running_var, 2.0);

            let err = other.set_trainable(&flat[1..]).unwrap_err();
            assert!(matches!(err, FamError::BadDims { .. }));
        }
    }

    #[test]
    fn layout_groups_tile_the_flat_vector() {
        for shared in [false, true] {
            let dims = FamDims::new(8, 4, 3, 4).unwrap();
            let layout = ParamLayout::new(&dims, shared);
            let groups = layout.groups();
            let mut at = 0;
            for (name, range) in &groups {
                assert_eq!(range.start, at, "group {name} starts at {}", range.start);
                assert!(!range.is_empty());
                at = range.end;
            }
            assert_eq!(at, layout.len);
            assert_eq!(groups.len(), if shared { 9 } else { 13 });
        }
    }

    #[test]
    fn f32_forward_agrees_with_f64_coarsely() {
        let dims = FamDims::new(4, 2, 2, 2).unwrap();
        let params64 = seeded_params(dims, false, 21);
        let mut params32: FamParams<f32> =
            FamParams::zeros(dims, false);
        let flat64 = params64.flatten_trainable();
        let flat32: Vec<f32> = flat64.iter().map(|&v| v as f32).collect();
        params32.set_trainable(&flat32).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let body64 = random_feature(&dims, &mut rng);
        let face64 = random_feature(&dims, &mut rng);
        let narrow = |t: &Tensor<f64>| {
            Tensor::<f32>::new(dims.feature_shape(), t.data().iter().map(|&v| v as f32).collect())
                .unwrap()
        };
        let out64 = predict(
            &body64,
            Some(&face64),
            OrientationLabel::Frontal,
            &params64,
            Phase::Eval,
        )
        .unwrap();
        let out32 = predict(
            &narrow(&body64),
            Some(&narrow(&face64)),
            OrientationLabel::Frontal,
            &params32,
            Phase::Eval,
        )
        .unwrap();
        assert_relative_eq!(out64, f64::from(out32), max_relative = 1e-4);
    }
}
