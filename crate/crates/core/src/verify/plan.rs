//! Annealing-run planning: step counts and the candidate/default token schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VerifyError;

pub const CANONICAL_STEPS: [u64; 5] = [100, 500, 1000, 2500, 5000];
pub const MIN_STEPS: u64 = 5000;
pub const BASIS_POINTS: u32 = 10_000;
/// Allowed gap between realized and requested candidate share, as a
/// fraction of total plan tokens.
pub const SHARE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    /// `max(raw_steps, 5000)`.
    #[default]
    AsWrittenMax,
    /// Closest of 100, 500, 1000, 2500, 5000; ties go to the larger.
    NearestCanonical,
}

/// Planning knobs. The candidate weight is held in basis points so the two
/// weights sum to one exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub candidate_weight_bp: u32,
    pub global_batch_size: u64,
    pub sequence_length: u64,
    pub n_epoch: u32,
    pub rounding_mode: RoundingMode,
    pub warmup_fraction: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub exponential_decay: bool,
    pub seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            candidate_weight_bp: 3000,
            global_batch_size: 512,
            sequence_length: 4096,
            n_epoch: 3,
            rounding_mode: RoundingMode::AsWrittenMax,
            warmup_fraction: 0.1,
            lr_max: 1e-3,
            lr_min: 5e-5,
            exponential_decay: true,
            seed: 0,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        if !(3..=5).contains(&self.n_epoch) {
            return Err(VerifyError::InvalidEpochs(self.n_epoch));
        }
        if self.candidate_weight_bp == 0 || self.candidate_weight_bp >= BASIS_POINTS {
            return Err(VerifyError::InvalidConfig(format!(
                "candidate weight must be within (0, 1), got {} bp",
                self.candidate_weight_bp
            )));
        }
        if self.global_batch_size == 0 || self.sequence_length == 0 {
            return Err(VerifyError::InvalidConfig(
                "batch size and sequence length must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(VerifyError::InvalidConfig(format!(
                "warmup fraction must be within [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(VerifyError::InvalidConfig("need 0 < lr_min <= lr_max".into()));
        }
        Ok(())
    }

    pub fn tokens_per_step(&self) -> u64 {
        self.global_batch_size * self.sequence_length
    }

    pub fn candidate_weight(&self) -> f64 {
        f64::from(self.candidate_weight_bp) / f64::from(BASIS_POINTS)
    }

    pub fn default_weight(&self) -> f64 {
        f64::from(BASIS_POINTS - self.candidate_weight_bp) / f64::from(BASIS_POINTS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCount {
    pub total_tokens: u64,
    pub raw_steps: u64,
    pub steps: u64,
}

fn div_ceil_u128(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

/// Step count for the given candidate size at the default 30% weight.
pub fn plan_steps(
    candidate_tokens: u64,
    n_epoch: u32,
    global_bs: u64,
    seq_len: u64,
    rounding_mode: RoundingMode,
) -> Result<u64, VerifyError> {
    let config = PlanConfig {
        n_epoch,
        global_batch_size: global_bs,
        sequence_length: seq_len,
        rounding_mode,
        ..PlanConfig::default()
    };
    Ok(step_count(candidate_tokens, &config)?.steps)
}

/// `total = ceil(tokens * n_epoch / weight)`, `raw = ceil(total / tokens_per_step)`,
/// then rounded per the mode.
pub fn step_count(candidate_tokens: u64, config: &PlanConfig) -> Result<StepCount, VerifyError> {
    if candidate_tokens == 0 {
        return Err(VerifyError::NonPositiveTokens);
    }
    config.validate()?;
    let total = div_ceil_u128(
        u128::from(candidate_tokens) * u128::from(config.n_epoch) * u128::from(BASIS_POINTS),
        u128::from(config.candidate_weight_bp),
    );
    let raw = div_ceil_u128(total, u128::from(config.tokens_per_step()));
    let total_tokens = u64::try_from(total).map_err(|_| VerifyError::Overflow)?;
    let raw_steps = u64::try_from(raw).map_err(|_| VerifyError::Overflow)?;
    Ok(StepCount {
        total_tokens,
        raw_steps,
        steps: round_steps(raw_steps, config.rounding_mode),
    })
}

pub fn round_steps(raw_steps: u64, mode: RoundingMode) -> u64 {
    match mode {
        RoundingMode::AsWrittenMax => raw_steps.max(MIN_STEPS),
        RoundingMode::NearestCanonical => CANONICAL_STEPS
            .iter()
            .copied()
            .min_by_key(|&c| (c.abs_diff(raw_steps), std::cmp::Reverse(c)))
            .expect("non-empty"),
    }
}

/// A shard and its token count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardTokens {
    pub shard: String,
    pub tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Candidate,
    Default,
}

/// A contiguous token range of one shard consumed during one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub step: u64,
    pub source: Source,
    pub shard: String,
    /// Zero-based pass over the shard; always 0 for default data.
    pub pass: u32,
    pub offset: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSchedule {
    pub steps: u64,
    pub tokens_per_step: u64,
    pub candidate_tokens: u64,
    pub default_tokens: u64,
    pub entries: Vec<ScheduleEntry>,
}

impl MixtureSchedule {
    pub fn total_tokens(&self) -> u64 {
        self.steps * self.tokens_per_step
    }

    pub fn candidate_fraction(&self) -> f64 {
        self.candidate_tokens as f64 / self.total_tokens() as f64
    }

    /// Candidate and total tokens per step, recomputed from the entries.
    pub fn replay(&self) -> Vec<(u64, u64)> {
        let mut per_step = vec![(0u64, 0u64); self.steps as usize];
        for e in &self.entries {
            let slot = &mut per_step[e.step as usize];
            if e.source == Source::Candidate {
                slot.0 += e.tokens;
            }
            slot.1 += e.tokens;
        }
        per_step
    }
}

/// Sequential reader over a list of shards, optionally repeated.
struct Stream<'a> {
    source: Source,
    passes: Vec<Vec<&'a ShardTokens>>,
    pass: usize,
    index: usize,
    offset: u64,
}

impl<'a> Stream<'a> {
    fn take(&mut self, step: u64, mut want: u64, out: &mut Vec<ScheduleEntry>) {
        while want > 0 {
            let shard = self.passes[self.pass][self.index];
            let n = want.min(shard.tokens - self.offset);
            out.push(ScheduleEntry {
                step,
                source: self.source,
                shard: shard.shard.clone(),
                pass: self.pass as u32,
                offset: self.offset,
                tokens: n,
            });
            want -= n;
            self.offset += n;
            if self.offset == shard.tokens {
                self.offset = 0;
                self.index += 1;
                if self.index == self.passes[self.pass].len() {
                    self.index = 0;
                    self.pass += 1;
                }
            }
        }
    }
}

fn shuffled<'a>(shards: &'a [ShardTokens], rng: &mut ChaCha8Rng) -> Vec<&'a ShardTokens> {
    let mut order: Vec<&ShardTokens> = shards.iter().filter(|s| s.tokens > 0).collect();
    order.shuffle(rng);
    order
}

/// Interleaves candidate and default tokens over `steps` steps. Each step
/// receives its share of candidate tokens by exact integer spreading, so the
/// candidate fraction is flat across the run. Candidate shards are read in a
/// fresh seeded order on each pass, at most `n_epoch` passes; default shards
/// are read once.
pub fn compose_mixture(
    candidate: &[ShardTokens],
    default: &[ShardTokens],
    steps: u64,
    config: &PlanConfig,
) -> Result<MixtureSchedule, VerifyError> {
    config.validate()?;
    if steps == 0 {
        return Err(VerifyError::InvalidConfig("steps must be positive".into()));
    }
    let tps = config.tokens_per_step();
    let total = u128::from(steps) * u128::from(tps);
    let total_u64 = u64::try_from(total).map_err(|_| VerifyError::Overflow)?;
    let wanted = total * u128::from(config.candidate_weight_bp) / u128::from(BASIS_POINTS);
    let cand_avail: u128 = candidate.iter().map(|s| u128::from(s.tokens)).sum();
    let cand_cap = cand_avail * u128::from(config.n_epoch);
    // Ceiling effects in the step count can ask for slightly more than
    // n_epoch passes; the shortfall is accepted within the share tolerance.
    let cand_tokens = wanted.min(cand_cap);
    let shortfall = (wanted - cand_tokens) as f64 / total as f64;
    if cand_avail == 0 || shortfall > SHARE_TOLERANCE {
        return Err(VerifyError::CandidateEpochOverflow {
            needed: wanted as u64,
            available: cand_avail as u64,
            n_epoch: config.n_epoch,
        });
    }
    let cand_tokens = cand_tokens as u64;
    let default_tokens = total_u64 - cand_tokens;
    let default_avail: u64 = default.iter().map(|s| s.tokens).sum();
    if default_tokens > default_avail {
        return Err(VerifyError::InsufficientDefaultTokens {
            needed: default_tokens,
            available: default_avail,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let passes_needed = u64::try_from(u128::from(cand_tokens).div_ceil(cand_avail))
        .unwrap_or(1)
        .max(1);
    let mut candidate_stream = Stream {
        source: Source::Candidate,
        passes: (0..passes_needed)
            .map(|_| shuffled(candidate, &mut rng))
            .collect(),
        pass: 0,
        index: 0,
        offset: 0,
    };
    let mut default_stream = Stream {
        source: Source::Default,
        passes: vec![shuffled(default, &mut rng)],
        pass: 0,
        index: 0,
        offset: 0,
    };

    let mut entries = Vec::new();
    let spread = |i: u64| (u128::from(i) * u128::from(cand_tokens) / u128::from(steps)) as u64;
    for step in 0..steps {
        let c = spread(step + 1) - spread(step);
        candidate_stream.take(step, c, &mut entries);
        default_stream.take(step, tps - c, &mut entries);
    }
    Ok(MixtureSchedule {
        steps,
        tokens_per_step: tps,
        candidate_tokens: cand_tokens,
        default_tokens,
        entries,
    })
}

/// Planner output: hyperparameters, manifests and the token schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealPlan {
    pub candidate_weight: f64,
    pub default_weight: f64,
    pub candidate_weight_bp: u32,
    pub global_batch_size: u64,
    pub sequence_length: u64,
    pub n_epoch: u32,
    pub rounding_mode: RoundingMode,
    pub canonical_steps: Vec<u64>,
    pub raw_steps: u64,
    pub computed_steps: u64,
    pub warmup_fraction: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub exponential_decay: bool,
    pub seed: u64,
    pub candidate_manifest: Vec<ShardTokens>,
    pub default_manifest: Vec<ShardTokens>,
    /// Named fingerprints of the inputs the plan was derived from.
    pub fingerprints: std::collections::BTreeMap<String, String>,
    pub schedule: MixtureSchedule,
}

pub fn plan_anneal(
    candidate: Vec<ShardTokens>,
    default: Vec<ShardTokens>,
    config: &PlanConfig,
    fingerprints: std::collections::BTreeMap<String, String>,
) -> Result<AnnealPlan, VerifyError> {
    let tokens: u64 = candidate.iter().map(|s| s.tokens).sum();
    let count = step_count(tokens, config)?;
    let schedule = compose_mixture(&candidate, &default, count.steps, config)?;
    Ok(AnnealPlan {
        candidate_weight: config.candidate_weight(),
        default_weight: config.default_weight(),
        candidate_weight_bp: config.candidate_weight_bp,
        global_batch_size: config.global_batch_size,
        sequence_length: config.sequence_length,
        n_epoch: config.n_epoch,
        rounding_mode: config.rounding_mode,
        canonical_steps: CANONICAL_STEPS.to_vec(),
        raw_steps: count.raw_steps,
        computed_steps: count.steps,
        warmup_fraction: config.warmup_fraction,
        lr_max: config.lr_max,
        lr_min: config.lr_min,
        exponential_decay: config.exponential_decay,
        seed: config.seed,
        candidate_manifest: candidate,
        default_manifest: default,
        fingerprints,
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shards(prefix: &str, sizes: &[u64]) -> Vec<ShardTokens> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &tokens)| ShardTokens {
                shard: format!("{prefix}{i}"),
                tokens,
            })
            .collect()
    }

    #[test]
    fn appendix_constants() {
        assert_eq!(PlanConfig::default().tokens_per_step(), 2_097_152);
        let c = step_count(1_000_000_000, &PlanConfig::default()).unwrap();
        assert_eq!(
            (c.total_tokens, c.raw_steps, c.steps),
            (10_000_000_000, 4769, 5000)
        );
        let nc = PlanConfig {
            rounding_mode: RoundingMode::NearestCanonical,
            ..Default::default()
        };
        let c = step_count(120_000_000, &nc).unwrap();
        assert_eq!((c.total_tokens, c.raw_steps, c.steps), (1_200_000_000, 573, 500));
        assert!(matches!(
            plan_steps(0, 3, 512, 4096, RoundingMode::AsWrittenMax),
            Err(VerifyError::NonPositiveTokens)
        ));
        assert!(matches!(
            plan_steps(1, 6, 512, 4096, RoundingMode::AsWrittenMax),
            Err(VerifyError::InvalidEpochs(6))
        ));
    }

    #[test]
    fn canonical_ties_go_up() {
        assert_eq!(round_steps(300, RoundingMode::NearestCanonical), 500);
        assert_eq!(round_steps(750, RoundingMode::NearestCanonical), 1000);
        assert_eq!(round_steps(1, RoundingMode::NearestCanonical), 100);
        assert_eq!(round_steps(90_000, RoundingMode::NearestCanonical), 5000);
        assert_eq!(round_steps(6000, RoundingMode::AsWrittenMax), 6000);
    }

    #[test]
    fn exact_three_in_ten() {
        let config = PlanConfig {
            global_batch_size: 1,
            sequence_length: 1,
            ..Default::default()
        };
        let s = compose_mixture(&shards("c", &[1]), &shards("d", &[7]), 10, &config).unwrap();
        assert_eq!((s.candidate_tokens, s.default_tokens), (3, 7));
        assert_eq!(s.candidate_fraction(), 0.3);
        let passes: Vec<u32> = s
            .entries
            .iter()
            .filter(|e| e.source == Source::Candidate)
            .map(|e| e.pass)
            .collect();
        assert_eq!(passes, vec![0, 1, 2]);
    }

    #[test]
    fn error_paths() {
        let config = PlanConfig {
            global_batch_size: 1,
            sequence_length: 100,
            n_epoch: 5,
            ..Default::default()
        };
        assert!(matches!(
            compose_mixture(&shards("c", &[10]), &shards("d", &[10_000]), 10, &config),
            Err(VerifyError::CandidateEpochOverflow { .. })
        ));
        assert!(matches!(
            compose_mixture(&shards("c", &[1000]), &shards("d", &[10]), 10, &config),
            Err(VerifyError::InsufficientDefaultTokens { .. })
        ));
    }

    #[test]
    fn as_written_plan_uses_every_raw_step() {
        let config = PlanConfig {
            global_batch_size: 4,
            sequence_length: 8,
            ..Default::default()
        };
        let cand = shards("c", &[20_000, 33_001]);
        let default = shards("d", &[400_000]);
        let plan = plan_anneal(cand, default, &config, Default::default()).unwrap();
        assert_eq!(plan.computed_steps, 16_563);
        assert_eq!(plan.candidate_weight + plan.default_weight, 1.0);
        let replay = plan.schedule.replay();
        assert!(replay.iter().all(|&(_, t)| t == 32));
        assert!((plan.schedule.candidate_fraction() - 0.3).abs() <= SHARE_TOLERANCE);
        let max_pass = plan.schedule.entries.iter().map(|e| e.pass).max().unwrap();
        assert!(max_pass < 3);
    }
}
