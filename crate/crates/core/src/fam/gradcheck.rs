//! Central-difference verification of the analytic gradients.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    bce_logits_loss, predict, sample_gradients, FamDims, FamError, FamParams, Phase,
};
use crate::geometry::OrientationLabel;
use crate::real::Real;
use crate::tensor::Tensor;

/// Pass threshold on the max relative error.
pub const GRAD_TOLERANCE: f64 = 1e-5;
const MIN_STEP: f64 = 1e-6;
const MAX_STEP: f64 = 1e-3;

/// How to build the randomized instance a gradient check runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub dims: FamDims,
    /// Share one classifier head between both paths.
    pub shared_head: bool,
    pub seed: u64,
    /// Central-difference step, within [1e-6, 1e-3].
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { dims: FamDims::desk_scale(), shared_head: false, seed: 7, step: 1e-4 }
    }
}

/// Worst relative error inside one parameter group (or input tensor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub reduction: usize,
    pub shared_head: bool,
    pub seed: u64,
    pub step: f64,
    /// The probe loss the gradients were taken of.
    pub loss: f64,
    pub groups: Vec<GroupReport>,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// The probe couples one frontal and one gated-off sample so every
/// parameter group receives gradient.
fn probe_loss<F: Real>(
    params: &FamParams<F>,
    x_body: &Tensor<F>,
    x_face: &Tensor<F>,
) -> Result<F, FamError> {
    let frontal = predict(x_body, Some(x_face), OrientationLabel::Frontal, params, Phase::Eval)?;
    let backside = predict(x_body, None, OrientationLabel::Backside, params, Phase::Eval)?;
    Ok(bce_logits_loss(frontal, 1)? + bce_logits_loss(backside, 0)?)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn finite_or<F: Real>(value: F, context: &str) -> Result<F, FamError> {
    if value.as_f64().is_finite() {
        Ok(value)
    } else {
        Err(FamError::NonFinite { context: context.into() })
    }
}

/// Checks the analytic gradients of the probe loss on explicit state.
///
/// Central differences `(f(x+h) - f(x-h)) / 2h` are taken coordinate by
/// coordinate over every trainable scalar and both input maps; relative
/// errors use the denominator `max(|analytic|, |numeric|, 1e-8)`, and the
/// check passes when the worst one stays below `1e-5`.
pub fn grad_check_with<F: Real>(
    params: &FamParams<F>,
    x_body: &Tensor<F>,
    x_face: &Tensor<F>,
    step: f64,
    seed: u64,
) -> Result<GradReport, FamError> {
    grad_check_inner(params, x_body, x_face, step, seed, false)
}

fn grad_check_inner<F: Real>(
    params: &FamParams<F>,
    x_body: &Tensor<F>,
    x_face: &Tensor<F>,
    step: f64,
    seed: u64,
    corrupt: bool,
) -> Result<GradReport, FamError> {
    if !(MIN_STEP..=MAX_STEP).contains(&step) {
        return Err(FamError::BadConfig {
            detail: format!("step {step} outside [{MIN_STEP}, {MAX_STEP}]"),
        });
    }
    let h = F::cast(step);
    let two_h = F::cast(2.0 * step);

    let frontal = sample_gradients(x_body, Some(x_face), OrientationLabel::Frontal, 1, params)?;
    let backside = sample_gradients(x_body, None, OrientationLabel::Backside, 0, params)?;
    let loss = finite_or(frontal.loss + backside.loss, "probe loss")?;

    let mut analytic_params: Vec<F> = frontal
        .params
        .iter()
        .zip(&backside.params)
        .map(|(&a, &b)| a + b)
        .collect();
    let analytic_body: Vec<F> = frontal
        .x_body
        .data()
        .iter()
        .zip(backside.x_body.data())
        .map(|(&a, &b)| a + b)
        .collect();
    let analytic_face = frontal.x_face.expect("frontal gradients carry a face map");

    if corrupt {
        let worst = (0..analytic_params.len())
            .max_by(|&i, &j| {
                analytic_params[i]
                    .abs()
                    .partial_cmp(&analytic_params[j].abs())
                    .expect("gradients are finite")
            })
            .expect("parameter vector is non-empty");
        analytic_params[worst] *= F::cast(2.0);
    }

    let mut groups = Vec::new();
    let mut overall: f64 = 0.0;

    // Parameter coordinates.
    let mut probe = params.clone();
    let mut flat = probe.flatten_trainable();
    let layout = params.layout();
    for (name, range) in layout.groups() {
        let mut worst: f64 = 0.0;
        for k in range.clone() {
            let original = flat[k];
            flat[k] = original + h;
            probe.set_trainable(&flat)?;
            let plus = finite_or(probe_loss(&probe, x_body, x_face)?, "perturbed loss")?;
            flat[k] = original - h;
            probe.set_trainable(&flat)?;
            let minus = finite_or(probe_loss(&probe, x_body, x_face)?, "perturbed loss")?;
            flat[k] = original;
            let numeric = (plus - minus) / two_h;
            worst = worst.max(relative_error(analytic_params[k].as_f64(), numeric.as_f64()));
        }
        overall = overall.max(worst);
        groups.push(GroupReport {
            group: name.to_string(),
            coordinates: range.len(),
            max_rel_error: worst,
        });
    }
    probe.set_trainable(&flat)?;

    // Input coordinates.
    let check_input = |x: &Tensor<F>,
                           which: InputSide,
                           analytic: &[F]|
     -> Result<GroupReport, FamError> {
        let mut perturbed = x.clone();
        let mut worst: f64 = 0.0;
        for (k, gradient) in analytic.iter().enumerate() {
            let original = perturbed.data()[k];
            perturbed.data_mut()[k] = original + h;
            let plus = eval_side(&probe, x_body, x_face, &perturbed, which)?;
            perturbed.data_mut()[k] = original - h;
            let minus = eval_side(&probe, x_body, x_face, &perturbed, which)?;
            perturbed.data_mut()[k] = original;
            let numeric = (plus - minus) / two_h;
            worst = worst.max(relative_error(gradient.as_f64(), numeric.as_f64()));
        }
        Ok(GroupReport {
            group: match which {
                InputSide::Body => "x_body".to_string(),
                InputSide::Face => "x_face".to_string(),
            },
            coordinates: perturbed.len(),
            max_rel_error: worst,
        })
    };
    let body_report = check_input(x_body, InputSide::Body, &analytic_body)?;
    overall = overall.max(body_report.max_rel_error);
    groups.push(body_report);
    let face_report = check_input(x_face, InputSide::Face, analytic_face.data())?;
    overall = overall.max(face_report.max_rel_error);
    groups.push(face_report);

    let dims = params.dims();
    Ok(GradReport {
        channels: dims.channels,
        height: dims.height,
        width: dims.width,
        reduction: dims.reduction,
        shared_head: params.shared_head(),
        seed,
        step,
        loss: loss.as_f64(),
        groups,
        max_rel_error: overall,
        pass: overall < GRAD_TOLERANCE,
    })
}

#[derive(Clone, Copy)]
enum InputSide {
    Body,
    Face,
}

fn eval_side<F: Real>(
    params: &FamParams<F>,
    x_body: &Tensor<F>,
    x_face: &Tensor<F>,
    perturbed: &Tensor<F>,
    which: InputSide,
) -> Result<F, FamError> {
    let loss = match which {
        InputSide::Body => probe_loss(params, perturbed, x_face)?,
        InputSide::Face => probe_loss(params, x_body, perturbed)?,
    };
    finite_or(loss, "perturbed loss")
}

fn random_state<F: Real>(
    config: &GradCheckConfig,
) -> (FamParams<F>, Tensor<F>, Tensor<F>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = FamParams::init(config.dims, config.shared_head, &mut rng);
    // Exercise non-identity running statistics.
    params.fused_head.bn_running_mean = F::cast(rng.random_range(-0.5..0.5));
    params.fused_head.bn_running_var = F::cast(rng.random_range(0.5..1.5));
    if let Some(body) = params.body_head.as_mut() {
        body.bn_running_mean = F::cast(rng.random_range(-0.5..0.5));
        body.bn_running_var = F::cast(rng.random_range(0.5..1.5));
    }
    let mut feature = || {
        let data: Vec<F> = (0..config.dims.channels * config.dims.height * config.dims.width)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                F::cast(v)
            })
            .collect();
        Tensor::new(config.dims.feature_shape(), data).expect("normal draws are finite")
    };
    let x_body = feature();
    let x_face = feature();
    (params, x_body, x_face)
}

/// Runs the gradient check on a seeded random instance.
pub fn grad_check<F: Real>(config: &GradCheckConfig) -> Result<GradReport, FamError> {
    let (params, x_body, x_face) = random_state::<F>(config);
    grad_check_inner(&params, &x_body, &x_face, config.step, config.seed, false)
}

/// Negative control: doubles the largest analytic parameter gradient before
/// comparing, which must trip the pass flag on any live instance.
pub fn grad_check_corrupted<F: Real>(config: &GradCheckConfig) -> Result<GradReport, FamError> {
    let (params, x_body, x_face) = random_state::<F>(config);
    grad_check_inner(&params, &x_body, &x_face, config.step, config.seed, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_instance_passes() {
        let report = grad_check::<f64>(&GradCheckConfig::default()).unwrap();
        assert!(
            report.pass,
            "max relative error {} at groups {:?}",
            report.max_rel_error,
            report.groups
        );
        assert!(report.max_rel_error < GRAD_TOLERANCE);
        // Every group and both inputs were checked.
        assert_eq!(report.groups.len(), 13 + 2);
        assert!(report.groups.iter().all(|g| g.max_rel_error >= 0.0));
        assert!(report.loss.is_finite());
    }

    #[test]
    fn shared_head_instance_passes() {
        let config = GradCheckConfig {
            dims: FamDims::new(6, 2, 2, 3).unwrap(),
            shared_head: true,
            seed: 21,
            step: 1e-4,
        };
        let report = grad_check::<f64>(&config).unwrap();
        assert!(report.pass, "max relative error {}", report.max_rel_error);
        assert_eq!(report.groups.len(), 9 + 2);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let report = grad_check_corrupted::<f64>(&GradCheckConfig::default()).unwrap();
        assert!(!report.pass, "corruption went unnoticed: {}", report.max_rel_error);
    }

    #[test]
    fn zero_state_passes() {
        let dims = FamDims::new(4, 2, 2, 2).unwrap();
        let params = FamParams::<f64>::zeros(dims, false);
        let zeros = Tensor::zeros(dims.feature_shape());
        let report = grad_check_with(&params, &zeros, &zeros, 1e-4, 0).unwrap();
        assert!(report.pass, "max relative error {}", report.max_rel_error);
    }

    #[test]
    fn step_outside_the_window_is_rejected() {
        let config = GradCheckConfig { step: 1e-2, ..GradCheckConfig::default() };
        assert!(matches!(grad_check::<f64>(&config).unwrap_err(), FamError::BadConfig { .. }));
        let config = GradCheckConfig { step: 1e-7, ..GradCheckConfig::default() };
        assert!(matches!(grad_check::<f64>(&config).unwrap_err(), FamError::BadConfig { .. }));
    }

    #[test]
    fn report_serializes_to_json_and_back() {
        let report = grad_check::<f64>(&GradCheckConfig {
            dims: FamDims::new(2, 1, 1, 1).unwrap(),
            ..GradCheckConfig::default()
        })
        .unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let parsed: GradReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn narrower_scalars_still_complete() {
        let config = GradCheckConfig {
            dims: FamDims::new(2, 1, 1, 1).unwrap(),
            ..GradCheckConfig::default()
        };
        let report = grad_check::<f32>(&config).unwrap();
        assert!(report.max_rel_error.is_finite());
    }
}
