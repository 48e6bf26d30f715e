//! Adam, the step learning-rate schedule, and the training loop.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use crate::autograd::Tape;
use crate::checkpoint;
use crate::data::{pairs_to_tensors, PatchSampler, HR_PATCH};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

const STATE_MAGIC: &[u8; 4] = b"DBDA";
const STATE_VERSION: u32 = 1;

/// First and second moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f32>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState { v: m.clone(), m, t: 0 }
    }

    pub fn for_network(net: &Network<f32>) -> Self {
        Self::new(net.params().iter().map(|(_, t)| t.numel()))
    }

    pub fn to_bytes(&self, step: u64) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&step.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u32).to_le_bytes());
        for (m, v) in self.m.iter().zip(&self.v) {
            out.extend_from_slice(&(m.len() as u32).to_le_bytes());
            for x in m.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Returns the state and the step it was saved at.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, u64)> {
        let bad = |what: &str| Error::Checkpoint(format!("optimizer state: {what}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != STATE_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        if u32_at(take(4)?) != STATE_VERSION {
            return Err(bad("unsupported version"));
        }
        let step = u64_at(take(8)?);
        let t = u64_at(take(8)?);
        let count = u32_at(take(4)?) as usize;
        let mut state = AdamState { m: Vec::with_capacity(count), v: Vec::with_capacity(count), t };
        for _ in 0..count {
            let n = u32_at(take(4)?) as usize;
            let floats: Vec<f32> =
                take(n * 8)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            state.m.push(floats[..n].to_vec());
            state.v.push(floats[n..].to_vec());
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok((state, step))
    }
}

/// One Adam update using each tensor's gradient buffer (absent means zero).
/// The step count advances before bias correction; `lr == 0` leaves the
/// parameters untouched.
pub fn adam_step(params: &mut [&mut Tensor<f32>], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape("adam_step", format!("{} params vs {} moment buffers", params.len(), state.m.len())));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.numel() != m.len() {
            return Err(Error::shape("adam_step", format!("param of {} elements vs buffer of {}", p.numel(), m.len())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad().map(<[f32]>::to_vec);
        let update = lr != 0.0;
        let data = p.data_mut();
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i] as f64);
            let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * g;
            let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            if update {
                data[i] -= (lr * (mi / c1) / ((vi / c2).sqrt() + EPSILON)) as f32;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSchedule {
    pub lr0: f64,
    pub halve_every: u64,
    pub total: u64,
    pub batch: usize,
    /// Side of the square HR patch.
    pub patch: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule { lr0: 1e-4, halve_every: 200_000, total: 1_000_000, batch: 16, patch: HR_PATCH }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || self.halve_every == 0 || self.batch == 0 || self.patch == 0 {
            return Err(Error::InvalidConfig("lr0, halve_every, batch and patch must be positive".into()));
        }
        Ok(())
    }

    /// lr0 · 0.5^⌊step / halve_every⌋
    pub fn lr_at(&self, step: u64) -> f64 {
        let halvings = (step / self.halve_every).min(i32::MAX as u64) as i32;
        self.lr0 * 0.5f64.powi(halvings)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f32,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.step, self.lr, self.loss)
    }
}

/// Network, optimizer state and position in the schedule.
pub struct Trainer {
    pub net: Network<f32>,
    pub adam: AdamState,
    pub schedule: TrainSchedule,
    pub seed: u64,
    /// Number of updates applied so far; the next step has this index.
    pub step: u64,
}

impl Trainer {
    /// Fresh network initialised from `seed`.
    pub fn new(config: ModelConfig, schedule: TrainSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        let net = Network::build(config, seed)?;
        Ok(Self::from_parts(net, schedule, seed))
    }

    pub fn from_parts(net: Network<f32>, schedule: TrainSchedule, seed: u64) -> Self {
        let adam = AdamState::for_network(&net);
        Trainer { net, adam, schedule, seed, step: 0 }
    }

    /// Restores a run from a checkpoint and its optimizer sidecar.
    pub fn resume(checkpoint_path: &Path, schedule: TrainSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        let net = checkpoint::load(checkpoint_path)?;
        let (adam, step) = AdamState::from_bytes(&fs::read(state_path(checkpoint_path))?)?;
        if adam.m.len() != net.params().len() {
            return Err(Error::Checkpoint("optimizer state does not match the network".into()));
        }
        Ok(Trainer { net, adam, schedule, seed, step })
    }

    /// One update: sample, forward, L1 loss, backward, Adam.
    pub fn train_step(&mut self, sampler: &PatchSampler) -> Result<StepRecord> {
        let step = self.step;
        let lr = self.schedule.lr_at(step);
        let mut rng = PatchSampler::step_rng(self.seed, step);
        let pairs = sampler.sample_batch(self.schedule.batch, &mut rng);
        let (lr_batch, hr_batch) = pairs_to_tensors(&pairs)?;
        let (loss, mut grads, binding) = {
            let mut tape = Tape::new();
            let binding = self.net.bind(&mut tape);
            let x = tape.leaf(lr_batch, false);
            let y = tape.leaf(hr_batch, false);
            let pred = self.net.forward_on_tape(&mut tape, &binding, x)?;
            let loss_var = tape.l1_loss(pred, y)?;
            let loss = tape.value(loss_var).data()[0];
            if !loss.is_finite() {
                return Err(Error::NonFinite { step, loss });
            }
            (loss, tape.backward(loss_var)?, binding)
        };
        self.net.store_gradients(&binding, &mut grads)?;
        let mut params: Vec<&mut Tensor<f32>> = self.net.params_mut().into_iter().map(|(_, t)| t).collect();
        adam_step(&mut params, &mut self.adam, lr)?;
        self.net.clear_grads();
        self.step += 1;
        Ok(StepRecord { step, lr, loss })
    }

    pub fn save(&self, checkpoint_path: &Path) -> Result<()> {
        checkpoint::save(&self.net, checkpoint_path)?;
        fs::write(state_path(checkpoint_path), self.adam.to_bytes(self.step))?;
        Ok(())
    }
}

/// Optimizer sidecar stored next to a checkpoint.
pub fn state_path(checkpoint_path: &Path) -> PathBuf {
    checkpoint_path.with_extension("adam")
}

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint-{step:07}.dbdn")
}

/// Where a run writes its loss log and checkpoints.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    /// Checkpoint after every this many updates; 0 keeps only the initial
    /// and final ones.
    pub checkpoint_every: u64,
}

pub const LOSS_LOG: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.dbdn";

/// Runs until `schedule.total` updates have been applied, appending to
/// `loss.csv` and writing checkpoints into `out.dir`. A run starting at step 0
/// first writes the initial checkpoint; `final.dbdn` is written once any step ran.
pub fn run_training(trainer: &mut Trainer, sampler: &PatchSampler, out: &RunOutput) -> Result<Vec<StepRecord>> {
    fs::create_dir_all(&out.dir)?;
    let log_path = out.dir.join(LOSS_LOG);
    let mut log = if trainer.step == 0 {
        let mut f = BufWriter::new(File::create(&log_path)?);
        writeln!(f, "step,lr,loss")?;
        trainer.save(&out.dir.join(checkpoint_name(0)))?;
        f
    } else {
        BufWriter::new(OpenOptions::new().append(true).create(true).open(&log_path)?)
    };
    let mut records = Vec::new();
    while trainer.step < trainer.schedule.total {
        let rec = match trainer.train_step(sampler) {
            Ok(rec) => rec,
            Err(e) => {
                log.flush()?;
                return Err(e);
            }
        };
        writeln!(log, "{}", rec.csv_row())?;
        if rec.step % 100 == 0 {
            info!("step {} lr {} loss {}", rec.step, rec.lr, rec.loss);
        }
        records.push(rec);
        if out.checkpoint_every > 0 && trainer.step % out.checkpoint_every == 0 {
            log.flush()?;
            trainer.save(&out.dir.join(checkpoint_name(trainer.step)))?;
        }
    }
    log.flush()?;
    if !records.is_empty() {
        trainer.save(&out.dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(records)
}
