//! The pretraining loop.
//!
//! Epoch `t` (1-based) proceeds as:
//! 1. record the similarity sweep taken with the current parameters into
//!    the speed tracker, and recompute `π` if `t` is an update epoch
//!    (learning-speed mode only);
//! 2. draw `batches_per_epoch` batches from the active sampler, optimize
//!    InfoNCE on two augmented views of each, one SGD step per batch;
//! 3. sweep again with the updated parameters; that sweep is logged for
//!    epoch `t` and feeds the tracker at epoch `t + 1`.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentPolicy, ViewStream};
use crate::error::{Error, Result};
use crate::numeric::{
    decode_params, encode_params, sgd_step, write_atomic, Architecture, LrSchedule, Matrix, ParamSet,
    Reader, Tape, Writer,
};
use crate::sampler::{SamplingState, ScalingParams, SpeedTracker, UpdateSchedule};
use crate::seeds::{self, domain};
use crate::ssl::{ConditionalSampler, SslConfig};
use crate::synthdata::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Uniform,
    LearningSpeed,
    ConditionalOracle,
}

impl SamplerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::Uniform => "uniform",
            SamplerMode::LearningSpeed => "learning_speed",
            SamplerMode::ConditionalOracle => "conditional_oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerMode::Uniform),
            "learning_speed" => Ok(SamplerMode::LearningSpeed),
            "conditional_oracle" => Ok(SamplerMode::ConditionalOracle),
            other => Err(Error::Config(format!("unknown sampler mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` means `ceil(n / b)`.
    pub batches_per_epoch: Option<usize>,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub lr_warmup_epochs: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub ssl: SslConfig,
    pub augment: AugmentPolicy,
    pub scaling: ScalingParams,
    pub schedule: UpdateSchedule,
    /// EMA weight `η`.
    pub ema_weight: f64,
    pub mode: SamplerMode,
    /// Confound the conditional oracle groups batches by.
    pub oracle_confound: usize,
    pub seed: u64,
    /// Worker threads for similarity sweeps. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batches_per_epoch: None,
            lr_max: 0.5,
            weight_decay: 1e-4,
            lr_warmup_epochs: 10,
            encoder_hidden: vec![64],
            head_hidden: vec![32],
            ssl: SslConfig::default(),
            augment: AugmentPolicy::default(),
            scaling: ScalingParams::default(),
            schedule: UpdateSchedule::default(),
            ema_weight: 0.1,
            mode: SamplerMode::LearningSpeed,
            oracle_confound: 0,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ssl.validate()?;
        self.augment.validate()?;
        self.scaling.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::Config("batches_per_epoch must be at least 1".into()));
        }
        if self.mode == SamplerMode::LearningSpeed && self.epochs <= self.schedule.warmup_epochs {
            return Err(Error::Config(format!(
                "learning_speed mode needs epochs ({}) > warmup epochs ({})",
                self.epochs, self.schedule.warmup_epochs
            )));
        }
        if self.schedule.update_every == 0 {
            return Err(Error::Config("update_every must be at least 1".into()));
        }
        if !(self.lr_max >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        if !(self.ema_weight > 0.0 && self.ema_weight <= 1.0) {
            return Err(Error::Config("ema_weight must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Result<Architecture> {
        let mut encoder = vec![input_dim];
        encoder.extend(&self.encoder_hidden);
        encoder.push(self.ssl.representation_dim);
        let mut head = vec![self.ssl.representation_dim];
        head.extend(&self.head_hidden);
        head.push(self.ssl.projection_dim);
        Architecture::new(encoder, head)
    }

    pub fn batches_for(&self, n: usize) -> usize {
        self.batches_per_epoch.unwrap_or_else(|| n.div_ceil(self.ssl.batch_size))
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            lr_max: self.lr_max,
            weight_decay: self.weight_decay,
            warmup_epochs: self.lr_warmup_epochs as f64,
            total_epochs: self.epochs as f64,
        }
    }

    fn policy(&self) -> AugmentPolicy {
        AugmentPolicy { seed: self.seed, ..self.augment.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub sim_aligned_mean: f64,
    pub sim_conflicting_mean: f64,
    pub lr: f64,
    pub pi_entropy: f64,
    pub pi_min: f64,
    pub pi_max: f64,
}

impl EpochRecord {
    pub fn gap(&self) -> f64 {
        self.sim_aligned_mean - self.sim_conflicting_mean
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

pub const RUNLOG_HEADER: &str =
    "epoch,loss,sim_aligned_mean,sim_conflicting_mean,lr,pi_entropy,pi_min,pi_max";

impl RunLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, r.loss, r.sim_aligned_mean, r.sim_conflicting_mean, r.lr, r.pi_entropy, r.pi_min, r.pi_max
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(RUNLOG_HEADER) {
            return Err(Error::Format("run log header mismatch".into()));
        }
        let mut records = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Format(format!("run log line {}: {} fields", ln + 2, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{s}'")));
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| Error::Format(format!("bad epoch '{}'", f[0])))?,
                loss: num(f[1])?,
                sim_aligned_mean: num(f[2])?,
                sim_conflicting_mean: num(f[3])?,
                lr: num(f[4])?,
                pi_entropy: num(f[5])?,
                pi_min: num(f[6])?,
                pi_max: num(f[7])?,
            });
        }
        Ok(Self { records })
    }
}

/// Two-view cosine for every example under `epoch`'s sweep augmentations.
pub fn similarity_sweep(dataset: &Dataset, params: &ParamSet, policy: &AugmentPolicy, epoch: usize) -> Result<Vec<f64>> {
    similarity_sweep_threads(dataset, params, policy, epoch, 1)
}

const SWEEP_CHUNK: usize = 256;

pub fn similarity_sweep_threads(
    dataset: &Dataset,
    params: &ParamSet,
    policy: &AugmentPolicy,
    epoch: usize,
    threads: usize,
) -> Result<Vec<f64>> {
    let n = dataset.len();
    let starts: Vec<usize> = (0..n).step_by(SWEEP_CHUNK).collect();
    let run = |&start: &usize| sweep_chunk(dataset, params, policy, epoch, start, (start + SWEEP_CHUNK).min(n));
    let chunks: Vec<Result<Vec<f64>>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::State(format!("thread pool: {e}")))?;
        pool.install(|| starts.par_iter().map(run).collect())
    } else {
        starts.iter().map(run).collect()
    };
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn sweep_chunk(
    dataset: &Dataset,
    params: &ParamSet,
    policy: &AugmentPolicy,
    epoch: usize,
    start: usize,
    end: usize,
) -> Result<Vec<f64>> {
    let m = dataset.input_dim();
    let rows = end - start;
    let mut data = vec![0.0; 2 * rows * m];
    let (first, second) = data.split_at_mut(rows * m);
    for (k, i) in (start..end).enumerate() {
        let x = dataset.features_f64(i);
        policy.view_into(&x, ViewStream::Sweep, epoch as u64, i as u64, 0, &mut first[k * m..(k + 1) * m]);
        policy.view_into(&x, ViewStream::Sweep, epoch as u64, i as u64, 1, &mut second[k * m..(k + 1) * m]);
    }
    let views = Matrix::from_vec(2 * rows, m, data)?;
    let proj = params.project(&params.represent(&views)?)?;
    Ok((0..rows).map(|k| crate::numeric::dot(proj.row(k), proj.row(rows + k))).collect())
}

/// Mean of `values` over the aligned and conflicting index sets.
fn subgroup_means(values: &[f64], aligned: &[bool]) -> (f64, f64) {
    let (mut sa, mut na, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &a) in values.iter().zip(aligned) {
        if a {
            sa += v;
            na += 1;
        } else {
            sc += v;
            nc += 1;
        }
    }
    let mean = |s: f64, c: usize| if c == 0 { f64::NAN } else { s / c as f64 };
    (mean(sa, na), mean(sc, nc))
}

/// Pretraining state that can be stepped epoch by epoch and checkpointed.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    params: ParamSet,
    tracker: SpeedTracker,
    state: SamplingState,
    log: RunLog,
    /// Next epoch to run, 1-based.
    next_epoch: usize,
    /// Sweep taken with the current parameters, keyed to `next_epoch`.
    pending_sweep: Vec<f64>,
    aligned: Vec<bool>,
    conditional: Option<ConditionalSampler>,
}

/// Final products of a run.
#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub params: ParamSet,
    pub log: RunLog,
    pub state: SamplingState,
    pub tracker: SpeedTracker,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        let arch = config.architecture(dataset.input_dim())?;
        let params = ParamSet::init(arch, seeds::derive(&[config.seed, domain::INIT]))?;
        let tracker = SpeedTracker::new(dataset.len(), config.ema_weight)?;
        let state = SamplingState::uniform(dataset.len(), config.schedule.clone());
        Self::assemble(dataset, config, params, tracker, state, RunLog::default(), 1)
    }

    fn assemble(
        dataset: &'a Dataset,
        config: TrainConfig,
        params: ParamSet,
        tracker: SpeedTracker,
        state: SamplingState,
        log: RunLog,
        next_epoch: usize,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Empty("pretraining dataset"));
        }
        if dataset.num_confounds() == 0 {
            return Err(Error::Config("dataset has no confound to split aligned/conflicting examples".into()));
        }
        let conditional = if config.mode == SamplerMode::ConditionalOracle {
            let column = dataset.confound_column(config.oracle_confound)?;
            let sampler = ConditionalSampler::new(&column, dataset.cardinality())?;
            sampler.check(config.ssl.batch_size)?;
            Some(sampler)
        } else {
            None
        };
        let aligned = (0..dataset.len()).map(|i| dataset.is_aligned(i, 0)).collect();
        let pending_sweep =
            similarity_sweep_threads(dataset, &params, &config.policy(), next_epoch, config.threads)?;
        Ok(Self { dataset, config, params, tracker, state, log, next_epoch, pending_sweep, aligned, conditional })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn state(&self) -> &SamplingState {
        &self.state
    }

    pub fn tracker(&self) -> &SpeedTracker {
        &self.tracker
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.next_epoch > self.config.epochs
    }

    /// Runs one epoch and returns its log record.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        if self.is_finished() {
            return Err(Error::State("all epochs already run".into()));
        }
        let epoch = self.next_epoch;
        self.tracker.record_all(&self.pending_sweep)?;
        if self.config.mode == SamplerMode::LearningSpeed {
            self.state.update(&self.tracker, &self.config.scaling, epoch)?;
        }

        let n_batches = self.config.batches_for(self.dataset.len());
        let b = self.config.ssl.batch_size;
        let schedule = self.config.lr_schedule();
        let policy = self.config.policy();
        let mut rng = seeds::rng(&[self.config.seed, domain::BATCHES, epoch as u64]);
        let mut loss_sum = 0.0;
        let mut last_lr = 0.0;
        for batch in 0..n_batches {
            let indices = match &self.conditional {
                Some(sampler) => sampler.draw(b, &mut rng)?.1,
                None => self.state.sample_batch(b, &mut rng),
            };
            let slot0 = (batch * b) as u64;
            let (loss, grads) = batch_gradient(self.dataset, &self.params, &policy, &self.config.ssl, &indices, epoch, slot0)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            let progress = (epoch - 1) as f64 + (batch + 1) as f64 / n_batches as f64;
            last_lr = sgd_step(&mut self.params, &grads, progress, &schedule)?;
            if !self.params.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            loss_sum += loss;
        }

        self.pending_sweep =
            similarity_sweep_threads(self.dataset, &self.params, &policy, epoch + 1, self.config.threads)?;
        let (sim_aligned_mean, sim_conflicting_mean) = subgroup_means(&self.pending_sweep, &self.aligned);
        self.log.records.push(EpochRecord {
            epoch,
            loss: loss_sum / n_batches as f64,
            sim_aligned_mean,
            sim_conflicting_mean,
            lr: last_lr,
            pi_entropy: self.state.entropy(),
            pi_min: self.state.min(),
            pi_max: self.state.max(),
        });
        self.next_epoch += 1;
        Ok(self.log.records.last().expect("record just pushed"))
    }

    pub fn run_to_end(mut self) -> Result<PretrainOutput> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(self.into_output())
    }

    pub fn into_output(self) -> PretrainOutput {
        PretrainOutput { params: self.params, log: self.log, state: self.state, tracker: self.tracker }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            next_epoch: self.next_epoch,
            params: self.params.clone(),
            tracker: self.tracker.clone(),
            state: self.state.clone(),
            log: self.log.clone(),
        }
    }

    /// Continues a checkpointed run on `dataset` with `config`.
    pub fn resume(dataset: &'a Dataset, config: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        let n = dataset.len();
        if ckpt.tracker.len() != n || ckpt.state.len() != n {
            return Err(Error::Consistency(format!(
                "checkpoint covers {} examples, dataset has {n}",
                ckpt.state.len()
            )));
        }
        if ckpt.params.architecture() != &config.architecture(dataset.input_dim())? {
            return Err(Error::Consistency("checkpoint architecture differs from the config".into()));
        }
        if ckpt.log.records.len() + 1 != ckpt.next_epoch {
            return Err(Error::Consistency("checkpoint log length disagrees with its epoch".into()));
        }
        let mut state = ckpt.state;
        state.schedule = config.schedule.clone();
        Self::assemble(dataset, config, ckpt.params, ckpt.tracker, state, ckpt.log, ckpt.next_epoch)
    }
}

/// InfoNCE loss and parameter gradients for one batch of examples.
pub fn batch_gradient(
    dataset: &Dataset,
    params: &ParamSet,
    policy: &AugmentPolicy,
    ssl: &SslConfig,
    indices: &[usize],
    epoch: usize,
    slot0: u64,
) -> Result<(f64, crate::numeric::GradientRecord)> {
    let m = dataset.input_dim();
    let b = indices.len();
    let mut data = vec![0.0; 2 * b * m];
    let (first, second) = data.split_at_mut(b * m);
    for (k, &i) in indices.iter().enumerate() {
        let x = dataset.features_f64(i);
        let slot = slot0 + k as u64;
        policy.view_into(&x, ViewStream::Train, epoch as u64, slot, 0, &mut first[k * m..(k + 1) * m]);
        policy.view_into(&x, ViewStream::Train, epoch as u64, slot, 1, &mut second[k * m..(k + 1) * m]);
    }
    let views = Matrix::from_vec(2 * b, m, data)?;
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let x = tape.leaf(views);
    let (_, proj) = params.forward_on_tape(&mut tape, &vars, x)?;
    let loss = tape.info_nce(proj, ssl.temperature, ssl.symmetrize)?;
    let mut adj = tape.backward(loss)?;
    Ok((tape.scalar(loss), params.gradients(&vars, &mut adj)))
}

/// Runs `config.epochs` epochs from scratch.
pub fn pretrain(dataset: &Dataset, config: &TrainConfig) -> Result<PretrainOutput> {
    Trainer::new(dataset, config.clone())?.run_to_end()
}

/// JSON run summary written next to the run log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_epoch: usize,
    pub final_loss: f64,
    pub final_sim_aligned_mean: f64,
    pub final_sim_conflicting_mean: f64,
    pub final_gap: f64,
    pub pi_entropy: f64,
    pub config: TrainConfig,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn new(log: &RunLog, config: &TrainConfig, started: Instant) -> Self {
        let last = log.last();
        Self {
            final_epoch: last.map_or(0, |r| r.epoch),
            final_loss: last.map_or(f64::NAN, |r| r.loss),
            final_sim_aligned_mean: last.map_or(f64::NAN, |r| r.sim_aligned_mean),
            final_sim_conflicting_mean: last.map_or(f64::NAN, |r| r.sim_conflicting_mean),
            final_gap: last.map_or(f64::NAN, EpochRecord::gap),
            pi_entropy: last.map_or(f64::NAN, |r| r.pi_entropy),
            config: config.clone(),
            wall_seconds: started.elapsed().as_secs_f64(),
        }
    }
}

const CKPT_MAGIC: &[u8; 4] = b"LACP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a run bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub next_epoch: usize,
    pub params: ParamSet,
    pub tracker: SpeedTracker,
    pub state: SamplingState,
    pub log: RunLog,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CKPT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.next_epoch as u64);
        encode_params(&self.params, &mut w);

        w.f64(self.tracker.eta());
        w.len_prefixed(self.tracker.len());
        w.f64s(self.tracker.speeds());
        w.bytes(&self.tracker.seen().iter().map(|&s| s as u8).collect::<Vec<_>>());

        w.len_prefixed(self.state.len());
        w.f64s(self.state.probabilities());
        w.u64(self.state.schedule.warmup_epochs as u64);
        w.u64(self.state.schedule.update_every as u64);
        w.u64(self.state.last_update_epoch as u64);

        w.len_prefixed(self.log.records.len());
        for r in &self.log.records {
            w.u64(r.epoch as u64);
            w.f64s(&[r.loss, r.sim_aligned_mean, r.sim_conflicting_mean, r.lr, r.pi_entropy, r.pi_min, r.pi_max]);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(CKPT_MAGIC)?;
        r.expect_version(CHECKPOINT_VERSION)?;
        let next_epoch = r.u64()? as usize;
        let params = decode_params(&mut r)?;

        let eta = r.f64()?;
        let n = r.len_prefixed(9)?;
        let ema = r.f64s(n)?;
        let seen = r.take(n)?.iter().map(|&b| b != 0).collect();
        let tracker = SpeedTracker::from_parts(ema, seen, eta).map_err(|e| Error::Format(e.to_string()))?;

        let n_pi = r.len_prefixed(8)?;
        let pi = r.f64s(n_pi)?;
        let schedule = UpdateSchedule { warmup_epochs: r.u64()? as usize, update_every: r.u64()? as usize };
        let last_update_epoch = r.u64()? as usize;
        let state = SamplingState::from_probabilities(pi, schedule, last_update_epoch)
            .map_err(|e| Error::Format(e.to_string()))?;

        let n_rec = r.len_prefixed(64)?;
        let mut records = Vec::with_capacity(n_rec);
        for _ in 0..n_rec {
            let epoch = r.u64()? as usize;
            let v = r.f64s(7)?;
            records.push(EpochRecord {
                epoch,
                loss: v[0],
                sim_aligned_mean: v[1],
                sim_conflicting_mean: v[2],
                lr: v[3],
                pi_entropy: v[4],
                pi_min: v[5],
                pi_max: v[6],
            });
        }
        r.finish()?;
        Ok(Self { next_epoch, params, tracker, state, log: RunLog { records } })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
