//! Gating and re-association loops around [`optimize`].

use log::info;

use super::lm::{block_names, optimize};
use super::{gate_outliers, Problem, SingularPolicy, SolveReport, SolverConfig, SolverError};

/// Runs `reassociation_rounds` association rounds (at least one). Round one
/// uses the LiDAR observations already in `prob`; later rounds re-extract them
/// from `prob.scans` at the current estimate and reset their weights. Within a
/// round, optimization and gating alternate until no new outlier is found.
/// Camera gates persist across rounds.
pub fn solve_joint(prob: &mut Problem, config: &SolverConfig) -> Result<SolveReport, SolverError> {
    prob.validate()?;
    let rounds = config.reassociation_rounds.max(1);
    // the singularity check is deferred to the final state
    let inner = SolverConfig {
        singular: SingularPolicy::Report,
        ..config.clone()
    };
    let initial_cost = super::total_cost(prob);
    let mut iterations = 0;
    let mut last: Option<SolveReport> = None;
    let mut rounds_done = 0;

    for round in 0..rounds {
        if round > 0 {
            let Some(scans) = prob.scans.as_mut() else { break };
            if scans.config.resample_keypoints {
                scans.resample(round as u64)?;
            }
            let scans = prob.scans.as_ref().unwrap();
            prob.lidar_obs = scans.extract(&prob.poses, &prob.extrinsic)?;
        }
        rounds_done += 1;
        for pass in 0..config.max_gating_passes.max(1) {
            let report = optimize(prob, &inner)?;
            iterations += report.iterations;
            last = Some(report);
            let gated = gate_outliers(prob, &config.thresholds, config.gating)?;
            info!(
                "round {} pass {}: cost {:.6e}, gated {} camera / {} lidar",
                round + 1,
                pass + 1,
                last.as_ref().unwrap().final_cost,
                gated.camera,
                gated.lidar
            );
            if gated.total() == 0 {
                break;
            }
        }
    }

    // final fit on the surviving observations
    let mut report = optimize(prob, &inner)?;
    iterations += report.iterations;
    if last.is_none() {
        rounds_done = 1;
    }
    if !report.unconstrained.is_empty() && config.singular == SingularPolicy::Error {
        return Err(SolverError::SingularNormalEquations {
            blocks: block_names(&report.unconstrained),
        });
    }
    report.initial_cost = initial_cost;
    report.iterations = iterations;
    report.reassociation_rounds = rounds_done;
    Ok(report)
}
