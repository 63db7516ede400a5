//! Teacher-student distillation: policy evaluation, success harvesting,
//! student cloning, dataset mixing, and the dataset-size scaling study.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Trajectory};
use crate::env::{rollout, Controller, EnvConfig};
use crate::error::{Error, Result};
use crate::policy::{bc_train, BasePolicy, BcConfig, BcRow, ChunkExecutor, PolicyKind};
use crate::rng::named_rng_indexed;
use crate::threads::run_indexed;

const WILSON_Z95: f64 = 1.959_963_984_540_054;

/// Success-rate estimate over sequential evaluation seeds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub successes: u32,
    pub episodes: u32,
    pub success_rate: f64,
    pub wilson_ci_95: (f64, f64),
    pub seed_base: u64,
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: u32, episodes: u32, z: f64) -> (f64, f64) {
    assert!(episodes > 0, "wilson interval needs at least one trial");
    let n = episodes as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Rolls `episodes` controllers over sequential seeds `seed_base..` and
/// counts successes. `make(i)` builds the controller for episode `i`; the
/// episodes are independent, so they run on the worker pool.
pub fn eval_policy<C, F>(
    make: F,
    cfg: &EnvConfig,
    episodes: usize,
    seed_base: u64,
) -> Result<EvalReport>
where
    C: Controller,
    F: Fn(usize) -> C + Sync,
{
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let results = run_indexed(episodes, |i| {
        let mut ctl = make(i);
        rollout(&mut ctl, cfg, seed_base + i as u64, None).map(|t| t.success)
    });
    let mut successes = 0u32;
    for r in results {
        if r? {
            successes += 1;
        }
    }
    let rate = successes as f64 / episodes as f64;
    Ok(EvalReport {
        successes,
        episodes: episodes as u32,
        success_rate: rate,
        wilson_ci_95: wilson_ci(successes, episodes as u32, WILSON_Z95),
        seed_base,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HarvestStats {
    pub attempts: usize,
    pub successes: usize,
}

/// Attempt cap multiplier before harvesting gives up.
pub const HARVEST_ATTEMPT_FACTOR: usize = 50;

/// Collects `n` successful trajectories by rolling the teacher over
/// sequential seeds from `seed_base`. Keeps only successes, in seed order;
/// refuses after `50 * n` attempts so a broken teacher fails loudly.
pub fn collect_successes<C, F>(
    make: F,
    cfg: &EnvConfig,
    n: usize,
    seed_base: u64,
) -> Result<(Dataset, HarvestStats)>
where
    C: Controller,
    F: Fn(usize) -> C + Sync,
{
    if n == 0 {
        return Err(Error::Config("harvest target must be positive".into()));
    }
    let cap = HARVEST_ATTEMPT_FACTOR * n;
    let mut kept: Vec<Trajectory> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while kept.len() < n && attempts < cap {
        // First wave assumes a reliable teacher; later waves double the
        // remaining need so a weak one does not spin one episode at a time.
        // The attempt cap always wins, even when fewer than 8 attempts are
        // left in it.
        let want = if attempts == 0 { n } else { 2 * (n - kept.len()) };
        let wave = want.max(8).min(cap - attempts);
        let results = run_indexed(wave, |i| {
            let idx = attempts + i;
            let mut ctl = make(idx);
            rollout(&mut ctl, cfg, seed_base + idx as u64, None)
        });
        attempts += wave;
        for r in results {
            let t = r?;
            if t.success && kept.len() < n {
                let reward_sum: f32 = t.rewards.iter().sum();
                assert_eq!(reward_sum, 1.0, "successful trajectory must carry exactly one reward");
                kept.push(t);
            }
        }
    }
    let stats = HarvestStats {
        attempts,
        successes: kept.len(),
    };
    if kept.len() < n {
        return Err(Error::Dependency(format!(
            "harvest exhausted: {} successes in {} attempts (target {n}, cap {cap}); \
             the teacher's success rate is too low to distill from",
            stats.successes, stats.attempts
        )));
    }
    Ok((Dataset::new(kept), stats))
}

/// Student behavior cloning on a harvested dataset. The student's
/// normalizer is refit on this dataset inside `bc_train`.
pub fn distill_student(
    dataset: &Dataset,
    kind: PolicyKind,
    cfg: &BcConfig,
    seed: u64,
) -> Result<(BasePolicy, Vec<BcRow>)> {
    if dataset.is_empty() {
        return Err(Error::Config("distillation dataset is empty".into()));
    }
    bc_train(kind, dataset, cfg, seed)
}

/// Concatenates two datasets, tagging provenance per trajectory. Refuses
/// mismatched env-config digests unless `allow_mismatch`.
pub fn mix_datasets(d1: &Dataset, d2: &Dataset, allow_mismatch: bool) -> Result<Dataset> {
    if !allow_mismatch {
        if let (Some(a), Some(b)) = (d1.trajectories.first(), d2.trajectories.first()) {
            if a.config_digest != b.config_digest {
                return Err(Error::Dependency(format!(
                    "datasets come from different env configs (digest {}.. vs {}..); \
                     pass the override to mix anyway",
                    &a.config_digest[..12.min(a.config_digest.len())],
                    &b.config_digest[..12.min(b.config_digest.len())]
                )));
            }
        }
    }
    let mut out = Vec::with_capacity(d1.len() + d2.len());
    for t in &d1.trajectories {
        let mut t = t.clone();
        t.origin = Some("d1".into());
        out.push(t);
    }
    for t in &d2.trajectories {
        let mut t = t.clone();
        t.origin = Some("d2".into());
        out.push(t);
    }
    Ok(Dataset::new(out))
}

/// One scaling-study measurement.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub size: usize,
    pub rep: u64,
    pub success_rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl ScalingRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.size, self.rep, self.success_rate, self.ci_lo, self.ci_hi
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Harvest target for a single distillation run.
    pub n_trajectories: usize,
    /// Dataset sizes for the scaling study; students for larger sizes train
    /// on supersets (prefixes of one harvest).
    pub sizes: Vec<usize>,
    /// Independent student-training repetitions per size.
    pub reps: u64,
    pub student: PolicyKind,
    pub bc: BcConfig,
    pub eval_episodes: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            n_trajectories: 200,
            sizes: vec![50, 200, 1000],
            reps: 3,
            student: PolicyKind::Diffusion,
            bc: BcConfig::default(),
            eval_episodes: 200,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(Error::Config("n_trajectories must be positive".into()));
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) || self.sizes[0] == 0
        {
            return Err(Error::Config(format!(
                "scaling sizes must be positive and strictly increasing, got {:?}",
                self.sizes
            )));
        }
        if self.reps == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("reps and eval_episodes must be positive".into()));
        }
        self.bc.validate()
    }
}

/// Trains and evaluates one student per (size, rep) over prefixes of a
/// single harvest. Student seeds derive from `seed` and the rep index, so
/// reps are independent repetitions of the same recipe.
pub fn run_scaling_study(
    harvest: &Dataset,
    cfg: &DistillConfig,
    env: &EnvConfig,
    seed: u64,
    eval_seed_base: u64,
    mut on_row: impl FnMut(&ScalingRow) -> Result<()>,
) -> Result<Vec<ScalingRow>> {
    cfg.validate()?;
    let max_size = *cfg.sizes.last().expect("validated non-empty");
    if harvest.len() < max_size {
        return Err(Error::Dependency(format!(
            "harvest holds {} trajectories but the scaling study needs {max_size}",
            harvest.len()
        )));
    }
    let mut rows = Vec::new();
    for &size in &cfg.sizes {
        let subset = Dataset::new(harvest.trajectories[..size].to_vec());
        for rep in 0..cfg.reps {
            use rand::RngCore;
            let student_seed = named_rng_indexed(seed, "distill-student", rep).next_u64();
            let (student, _) = distill_student(&subset, cfg.student, &cfg.bc, student_seed)?;
            let report = eval_policy(
                |_| ChunkExecutor::new(&student),
                env,
                cfg.eval_episodes,
                eval_seed_base,
            )?;
            let row = ScalingRow {
                size,
                rep,
                success_rate: report.success_rate,
                ci_lo: report.wilson_ci_95.0,
                ci_hi: report.wilson_ci_95.1,
            };
            on_row(&row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}
