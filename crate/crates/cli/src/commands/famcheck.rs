//! `wildface famcheck` — analytic-gradient verification plus a sweep of the
//! model invariants. Exits 0 only when every check passes.

use std::path::Path;

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wildface_core::fam::{
    channel_scales, fam_forward, grad_check, grad_check_corrupted, predict, FamDims, FamParams,
    GradCheckConfig, Phase,
};
use wildface_core::geometry::OrientationLabel;
use wildface_core::tensor::Tensor;

use super::write_output;
use crate::{CmdResult, Failure};

const INVARIANT_CASES: u64 = 25;

pub fn run(
    dims: &str,
    reduction: Option<usize>,
    seed: u64,
    step: f64,
    shared_head: bool,
    corrupt: bool,
    out: Option<&Path>,
) -> CmdResult {
    let (channels, height, width) = parse_dims(dims)?;
    let reduction = reduction.unwrap_or_else(|| FamDims::auto_reduction(channels));
    let dims = FamDims::new(channels, height, width, reduction)
        .context("invalid feature dimensions")?;

    let config = GradCheckConfig { dims, shared_head, seed, step };
    let grad = if corrupt {
        grad_check_corrupted::<f64>(&config)
    } else {
        grad_check::<f64>(&config)
    }
    .context("running the gradient check")?;

    let invariants = invariant_sweep(&dims, shared_head, seed).context("invariant sweep")?;
    let pass = grad.pass && invariants.pass();

    let report = serde_json::json!({
        "grad": grad,
        "invariants": {
            "cases": INVARIANT_CASES,
            "fusion_zero_identity": invariants.fusion_zero_identity,
            "gating_ignores_face": invariants.gating_ignores_face,
            "scales_in_unit_interval": invariants.scales_in_unit_interval,
            "shape_preserved": invariants.shape_preserved,
        },
        "pass": pass,
    });
    let mut text = serde_json::to_string_pretty(&report).context("encoding the report")?;
    text.push('\n');
    write_output(out, &text)?;

    if pass {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "verification failed: gradients {} (max relative error {:.3e}), invariants {}",
            if grad.pass { "pass" } else { "FAIL" },
            grad.max_rel_error,
            if invariants.pass() { "pass" } else { "FAIL" },
        )))
    }
}

fn parse_dims(text: &str) -> Result<(usize, usize, usize), Failure> {
    let parts: Vec<&str> = text.split('x').collect();
    let parsed: Option<Vec<usize>> =
        parts.iter().map(|p| p.parse().ok().filter(|&n: &usize| n > 0)).collect();
    match parsed.as_deref() {
        Some([c, h, w]) if parts.len() == 3 => Ok((*c, *h, *w)),
        _ => Err(Failure::Usage(anyhow::anyhow!(
            "--dims must look like CxHxW with positive integers, got `{text}`"
        ))),
    }
}

struct InvariantSweep {
    fusion_zero_identity: bool,
    gating_ignores_face: bool,
    scales_in_unit_interval: bool,
    shape_preserved: bool,
}

impl InvariantSweep {
    fn pass(&self) -> bool {
        self.fusion_zero_identity
            && self.gating_ignores_face
            && self.scales_in_unit_interval
            && self.shape_preserved
    }
}

/// Exercises the structural invariants on randomized parameters and inputs.
fn invariant_sweep(
    dims: &FamDims,
    shared_head: bool,
    seed: u64,
) -> anyhow::Result<InvariantSweep> {
    let mut sweep = InvariantSweep {
        fusion_zero_identity: true,
        gating_ignores_face: true,
        scales_in_unit_interval: true,
        shape_preserved: true,
    };
    for case in 0..INVARIANT_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9 + case));
        let params = FamParams::<f64>::init(*dims, shared_head, &mut rng);
        let x_body = random_feature(dims, &mut rng);
        let x_face = random_feature(dims, &mut rng);
        let other_face = random_feature(dims, &mut rng);

        let fused = fam_forward(&x_body, &x_face, &params)?;
        sweep.shape_preserved &= fused.shape() == x_body.shape();

        let scales = channel_scales(&fused, &params)?;
        sweep.scales_in_unit_interval &= scales.iter().all(|&s| s > 0.0 && s < 1.0);

        let mut zero_fusion = params.clone();
        zero_fusion.fusion = Tensor::zeros(x_body.shape().to_vec());
        let identity = fam_forward(&x_body, &x_face, &zero_fusion)?;
        sweep.fusion_zero_identity &= identity.data() == x_body.data();

        for orientation in [OrientationLabel::Backside, OrientationLabel::Sideways] {
            let with_face =
                predict(&x_body, Some(&x_face), orientation, &params, Phase::Eval)?;
            let with_other =
                predict(&x_body, Some(&other_face), orientation, &params, Phase::Eval)?;
            let without = predict(&x_body, None, orientation, &params, Phase::Eval)?;
            sweep.gating_ignores_face &=
                with_face.to_bits() == with_other.to_bits() && with_face.to_bits() == without.to_bits();
        }
    }
    Ok(sweep)
}

fn random_feature(dims: &FamDims, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::RngExt;
    let len = dims.channels * dims.height * dims.width;
    let data = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(dims.feature_shape(), data).expect("finite values of the right length")
}
