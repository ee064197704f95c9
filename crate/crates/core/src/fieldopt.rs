//! Network-free baseline: Adam directly on the voxel displacements of both
//! flows under the same objective the network is trained with.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{evaluate, CycleNorm, LossConfig, LossReport, PairView};
use crate::train::{adam_step, AdamConfig, AdamState};
use crate::volume::{FlowField3, Volume3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldOptConfig {
    pub lr: f64,
    pub steps: usize,
    pub window: usize,
    pub eps: f64,
    pub cycle_weight: f64,
    pub cycle_norm: CycleNorm,
    /// Extension, off by default.
    pub smoothness_weight: f64,
    /// Recorded for provenance; the optimization itself draws no randomness.
    pub seed: u64,
}

impl Default for FieldOptConfig {
    fn default() -> Self {
        FieldOptConfig {
            lr: 1e-2,
            steps: 200,
            window: crate::loss::DEFAULT_WINDOW,
            eps: crate::loss::CC_EPS,
            cycle_weight: 1.0,
            cycle_norm: CycleNorm::Mean,
            smoothness_weight: 0.0,
            seed: 0,
        }
    }
}

impl FieldOptConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            window: self.window,
            eps: self.eps,
            cycle_weight: self.cycle_weight,
            cycle_norm: self.cycle_norm,
            smoothness_weight: self.smoothness_weight,
            ..LossConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct FieldOptResult {
    pub flow_st: FlowField3,
    pub flow_ts: FlowField3,
    /// `steps + 1` entries: the loss before each update, then the final loss.
    pub trace: Vec<LossReport>,
}

pub const TRACE_HEADER: &str = "step,sim_fwd,sim_bwd,cycle,total";

impl FieldOptResult {
    pub fn trace_csv(&self) -> String {
        let mut s = format!("{TRACE_HEADER}\n");
        for (i, r) in self.trace.iter().enumerate() {
            s += &format!(
                "{i},{},{},{},{}\n",
                r.similarity_forward, r.similarity_backward, r.cycle, r.total
            );
        }
        s
    }
}

/// Starts both flows at zero and runs `steps` Adam updates.
pub fn optimize_fields(source: &Volume3, target: &Volume3, cfg: &FieldOptConfig) -> Result<FieldOptResult> {
    let shape = source.shape();
    let loss = cfg.loss_config();
    let n = 3 * shape.voxels();
    let mut flows = vec![0.0; 2 * n];
    let mut adam = AdamState::new(2 * n);
    let adam_cfg = AdamConfig {
        learning_rate: cfg.lr,
        ..AdamConfig::default()
    };
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut grad = vec![0.0; 2 * n];
    let zero = FlowField3::zeros(shape);
    // validates shapes up front
    PairView::new(source, target, &zero, &zero)?;
    for step in 0..=cfg.steps {
        let pair = PairView {
            shape,
            source: source.data(),
            target: target.data(),
            flow_st: &flows[..n],
            flow_ts: &flows[n..],
        };
        let last = step == cfg.steps;
        let (report, g) = evaluate(pair, &loss, !last)?;
        trace.push(report);
        if let Some((gs, gt)) = g {
            grad[..n].copy_from_slice(&gs);
            grad[n..].copy_from_slice(&gt);
            adam_step(&mut adam, &mut flows, &grad, &adam_cfg)?;
        }
    }
    let flow_ts = FlowField3::new(shape, flows.split_off(n))?;
    let flow_st = FlowField3::new(shape, flows)?;
    Ok(FieldOptResult {
        flow_st,
        flow_ts,
        trace,
    })
}
