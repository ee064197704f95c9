//! Pairwise training: every ordered `(source, target)` pair of distinct
//! subjects once per epoch, one pair per Adam step.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{evaluate, CycleNorm, LossConfig, LossReport, PairView};
use crate::net::{save_checkpoint, CheckpointInfo, Network, NetworkConfig, UpsampleMode};
use crate::volume::Volume3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// All ordered pairs of distinct indices, `n * (n - 1)` of them, row-major.
pub fn make_pairs(n_subjects: usize) -> Result<Vec<(usize, usize)>> {
    if n_subjects < 2 {
        return Err(Error::InvalidArgument(format!(
            "pairwise training needs at least 2 subjects, got {n_subjects}"
        )));
    }
    Ok((0..n_subjects)
        .flat_map(|s| (0..n_subjects).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect())
}

/// Pair order for one epoch: a seeded shuffle of [`make_pairs`].
pub fn epoch_pairs(n_subjects: usize, seed: u64, epoch: usize) -> Result<Vec<(usize, usize)>> {
    let mut pairs = make_pairs(n_subjects)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub upsample: UpsampleMode,
    pub epochs: usize,
    pub window: usize,
    pub cycle_weight: f64,
    pub cycle_norm: CycleNorm,
    pub smoothness_weight: f64,
    pub seed: u64,
    /// Single-decoder ablation: no backward decoder, no backward similarity,
    /// no round-trip term.
    pub ablate_backward: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            levels: 4,
            base_channels: 32,
            upsample: UpsampleMode::Nearest,
            epochs: 1,
            window: crate::loss::DEFAULT_WINDOW,
            cycle_weight: 1.0,
            cycle_norm: CycleNorm::Mean,
            smoothness_weight: 0.0,
            seed: 0,
            ablate_backward: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            window: self.window,
            cycle_weight: self.cycle_weight,
            cycle_norm: self.cycle_norm,
            bidirectional: !self.ablate_backward,
            smoothness_weight: self.smoothness_weight,
            ..LossConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        self.loss_config().validate()
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub pair_src: usize,
    pub pair_dst: usize,
    pub report: LossReport,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,pair_src,pair_dst,sim_fwd,sim_bwd,cycle,total";

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.pair_src,
            self.pair_dst,
            self.report.similarity_forward,
            self.report.similarity_backward,
            self.report.cycle,
            self.report.total
        )
    }
}

pub fn write_train_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mean of a field over the rows of each epoch, in epoch order.
pub fn epoch_means(rows: &[LogRow], field: impl Fn(&LossReport) -> f64) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if sums.len() <= r.epoch {
            sums.resize(r.epoch + 1, (0.0, 0));
        }
        sums[r.epoch].0 += field(&r.report);
        sums[r.epoch].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

pub struct Trainer {
    pub net: Network,
    pub adam: AdamState,
    pub config: TrainConfig,
    loss: LossConfig,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_shape: crate::grid::Shape3) -> Result<Self> {
        config.validate()?;
        let mut nc = NetworkConfig::new(config.levels, config.base_channels, input_shape);
        nc.upsample = config.upsample;
        let net = Network::build(nc, config.seed)?;
        Ok(Self::with_network(net, config))
    }

    pub fn with_network(net: Network, config: TrainConfig) -> Self {
        let adam = AdamState::new(net.param_count());
        let loss = config.loss_config();
        Trainer {
            net,
            adam,
            config,
            loss,
        }
    }

    /// Forward, loss, backward and one Adam step on a single pair. Returns the
    /// loss at the pre-step parameters.
    pub fn step(&mut self, source: &Volume3, target: &Volume3) -> Result<LossReport> {
        let bidirectional = !self.config.ablate_backward;
        let (flow_st, flow_ts, tape) = self.net.forward_with(source, target, bidirectional)?;
        let pair = PairView::new(source, target, &flow_st, &flow_ts)?;
        let (report, grads) = evaluate(pair, &self.loss, true)?;
        let (g_st, g_ts) = grads.expect("gradient requested");
        self.net.zero_grads();
        self.net
            .backward(&tape, &g_st, bidirectional.then_some(g_ts.as_slice()))?;
        let (params, grads) = self.net.params_and_grads_mut();
        adam_step(&mut self.adam, params, grads, &self.config.adam)?;
        Ok(report)
    }

    pub fn run_epoch(&mut self, subjects: &[Volume3], epoch: usize) -> Result<Vec<LogRow>> {
        let pairs = epoch_pairs(subjects.len(), self.config.seed, epoch)?;
        let mut rows = Vec::with_capacity(pairs.len());
        for (s, t) in pairs {
            let report = self.step(&subjects[s], &subjects[t])?;
            rows.push(LogRow {
                epoch,
                pair_src: s,
                pair_dst: t,
                report,
            });
        }
        Ok(rows)
    }

    pub fn checkpoint_info(&self, epoch: usize) -> CheckpointInfo {
        CheckpointInfo {
            window: self.config.window,
            cycle_weight: self.config.cycle_weight,
            seed: self.config.seed,
            epoch,
        }
    }
}

pub struct TrainOutcome {
    pub net: Network,
    pub log: Vec<LogRow>,
    /// Checkpoints written, one per epoch, when an output directory was given.
    pub checkpoints: Vec<PathBuf>,
}

fn check_subjects(subjects: &[Volume3]) -> Result<()> {
    if subjects.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    let shape = subjects[0].shape();
    if let Some((i, v)) = subjects
        .iter()
        .enumerate()
        .find(|(_, v)| v.shape() != shape || v.channels() != 1)
    {
        return Err(Error::ShapeMismatch(format!(
            "subject {i} is {}x{}, subject 0 is {shape}x1",
            v.shape(),
            v.channels()
        )));
    }
    Ok(())
}

/// Trains from scratch. With `out`, writes `epoch_NNNN.ckpt` and
/// `model.ckpt` after every epoch and `train_log.csv` as rows accumulate.
pub fn train(
    subjects: &[Volume3],
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(usize, &[LogRow]),
) -> Result<TrainOutcome> {
    check_subjects(subjects)?;
    let mut trainer = Trainer::new(cfg.clone(), subjects[0].shape())?;
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut csv = match out {
        Some(dir) => {
            let p = dir.join("train_log.csv");
            let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "{TRAIN_LOG_HEADER}").map_err(|e| Error::io(&p, e))?;
            Some((p, f))
        }
        None => None,
    };
    for epoch in 0..cfg.epochs {
        let rows = trainer.run_epoch(subjects, epoch)?;
        if let Some((p, f)) = csv.as_mut() {
            for r in &rows {
                writeln!(f, "{}", r.csv_line()).map_err(|e| Error::io(&*p, e))?;
            }
        }
        if let Some(dir) = out {
            let info = trainer.checkpoint_info(epoch);
            let path = dir.join(format!("epoch_{epoch:04}.ckpt"));
            save_checkpoint(&trainer.net, &info, &path)?;
            save_checkpoint(&trainer.net, &info, dir.join("model.ckpt"))?;
            checkpoints.push(path);
        }
        on_epoch(epoch, &rows);
        log.extend(rows);
    }
    Ok(TrainOutcome {
        net: trainer.net,
        log,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape3;
    use crate::loss::total_loss;
    use crate::net::Branch;

    #[test]
    fn pair_counts() {
        assert_eq!(make_pairs(40).unwrap().len(), 1560);
        assert_eq!(make_pairs(10).unwrap().len(), 90);
        assert_eq!(make_pairs(2).unwrap(), vec![(0, 1), (1, 0)]);
        assert!(make_pairs(1).is_err());
    }

    #[test]
    fn epoch_pairs_cover_each_ordered_pair_once() {
        for epoch in 0..3 {
            let mut p = epoch_pairs(7, 42, epoch).unwrap();
            assert_eq!(p.len(), 42);
            p.sort();
            assert_eq!(p, make_pairs(7).unwrap());
        }
        assert_ne!(epoch_pairs(7, 42, 0).unwrap(), epoch_pairs(7, 42, 1).unwrap());
        assert_eq!(epoch_pairs(7, 42, 1).unwrap(), epoch_pairs(7, 42, 1).unwrap());
    }

    #[test]
    fn adam_first_step() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(1);
        let mut w = [1.0];
        adam_step(&mut st, &mut w, &[2.0], &cfg).unwrap();
        // t = 1: m_hat = g, v_hat = g^2
        assert!((w[0] - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-8);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut st = AdamState::new(3);
        let mut w = [1.0, -2.0, 0.5];
        for _ in 0..20 {
            adam_step(&mut st, &mut w, &[0.0; 3], &AdamConfig::default()).unwrap();
        }
        assert_eq!(w, [1.0, -2.0, 0.5]);
        assert!(st.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_descends_quadratic() {
        // scalar reference: plain loop over the textbook update
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let (mut m, mut v, mut w_ref) = (0.0f64, 0.0f64, 0.0f64);
        let mut st = AdamState::new(1);
        let mut w = [0.0];
        for t in 1..=50 {
            let g = 2.0 * (w[0] - 3.0);
            adam_step(&mut st, &mut w, &[g], &cfg).unwrap();
            let g_ref = 2.0 * (w_ref - 3.0);
            m = 0.9 * m + 0.1 * g_ref;
            v = 0.999 * v + 0.001 * g_ref * g_ref;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w_ref -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w[0] - w_ref).abs() < 1e-12);
        assert!((w[0] - 3.0).abs() < 3.0);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut st, &mut [0.0; 2], &[0.0; 3], &AdamConfig::default()).is_err());
    }

    fn blobs(n: usize, shape: Shape3) -> Vec<Volume3> {
        (0..n)
            .map(|k| {
                Volume3::from_fn(shape, |x, y, z| {
                    let c = 3.5 + k as f64 * 0.5;
                    let d2 = (x as f64 - c).powi(2) + (y as f64 - 3.5).powi(2) + (z as f64 - 3.5).powi(2);
                    (-d2 / 6.0).exp()
                })
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            levels: 2,
            base_channels: 4,
            epochs: 2,
            window: 3,
            seed: 3,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn logged_total_matches_pre_step_recompute() {
        let shape = Shape3::cube(8);
        let subjects = blobs(3, shape);
        let cfg = small_config();
        let mut trainer = Trainer::new(cfg.clone(), shape).unwrap();
        for _ in 0..3 {
            let before = trainer.net.clone();
            let report = trainer.step(&subjects[0], &subjects[2]).unwrap();
            let (f, b, _) = before.forward(&subjects[0], &subjects[2]).unwrap();
            let again = total_loss(&subjects[0], &subjects[2], &f, &b, &cfg.loss_config()).unwrap();
            assert!((again.total - report.total).abs() <= 1e-6 * report.total.abs());
            assert!((report.total - (report.similarity() + report.cycle_weight * report.cycle)).abs() < 1e-12);
        }
    }

    #[test]
    fn ablation_leaves_backward_decoder_alone() {
        let shape = Shape3::cube(8);
        let subjects = blobs(3, shape);
        let cfg = TrainConfig {
            ablate_backward: true,
            ..small_config()
        };
        let init = Network::build(
            NetworkConfig::new(cfg.levels, cfg.base_channels, shape),
            cfg.seed,
        )
        .unwrap();
        let out = train(&subjects, &cfg, None, |_, _| {}).unwrap();
        assert!(out.log.iter().all(|r| r.report.cycle == 0.0 && r.report.similarity_backward == 0.0));
        let range = out.net.decoder_param_range(Branch::Backward);
        assert_eq!(&out.net.params()[range.clone()], &init.params()[range]);
        let fr = out.net.decoder_param_range(Branch::Forward);
        assert_ne!(&out.net.params()[fr.clone()], &init.params()[fr]);
    }

    #[test]
    fn identical_subjects_start_near_minus_two() {
        let shape = Shape3::cube(8);
        let s = Volume3::from_fn(shape, |x, y, z| ((x * 7 + y * 3 + z * 5) % 11) as f64 / 10.0);
        let cfg = TrainConfig { epochs: 1, ..small_config() };
        let out = train(&[s.clone(), s], &cfg, None, |_, _| {}).unwrap();
        let first = out.log[0].report;
        assert!((first.similarity() + 2.0).abs() < 1e-3);
        assert_eq!(first.cycle, 0.0);
    }

    #[test]
    fn training_is_deterministic_and_writes_outputs() {
        let shape = Shape3::cube(8);
        let subjects = blobs(3, shape);
        let cfg = small_config();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        train(&subjects, &cfg, Some(d1.path()), |_, _| {}).unwrap();
        train(&subjects, &cfg, Some(d2.path()), |_, _| {}).unwrap();
        for name in ["model.ckpt", "epoch_0000.ckpt", "epoch_0001.ckpt", "train_log.csv"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        let log = fs::read_to_string(d1.path().join("train_log.csv")).unwrap();
        assert_eq!(log.lines().next().unwrap(), TRAIN_LOG_HEADER);
        assert_eq!(log.lines().count(), 1 + 2 * 6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let shape = Shape3::cube(8);
        let mut subjects = blobs(2, shape);
        assert!(train(&subjects[..1], &small_config(), None, |_, _| {}).is_err());
        subjects.push(Volume3::zeros(Shape3::cube(4)));
        assert!(train(&subjects, &small_config(), None, |_, _| {}).is_err());
        let bad = TrainConfig { epochs: 0, ..small_config() };
        assert!(bad.validate().is_err());
    }
}
