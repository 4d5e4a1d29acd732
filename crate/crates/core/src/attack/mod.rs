//! Query-budgeted attack search.
//!
//! The generic search walks a parameter schedule from the worst-sounding
//! point to the mildest and stops at the first sample the transcriber
//! accepts. The improved search perturbs words independently and tries
//! their concatenations.

mod remote;

pub use remote::{phrase_matches, RemoteConfig, RemoteTranscriber};

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::error::{param_err, Error, Result};
use crate::features::{feature_distance, FeatureConfig, FeatureExtractor, FeatureMatrix};
use crate::perturb::{self, PerturbationParams};

pub const DEFAULT_BUDGET: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriberVerdict {
    pub accepted: bool,
    pub transcript: String,
    /// 1-based position of this query within the backend session.
    pub query_index: usize,
}

pub trait TranscriberBackend {
    /// Issues one query. Fails with [`Error::BudgetExhausted`] once the budget
    /// is spent, and with [`Error::Backend`] on transport problems (which do
    /// not consume budget).
    fn transcribe(&mut self, audio: &AudioBuffer) -> Result<TranscriberVerdict>;

    fn budget(&self) -> usize;

    fn queries_used(&self) -> usize;

    fn remaining(&self) -> usize {
        self.budget().saturating_sub(self.queries_used())
    }
}

/// Single-writer query counter shared by the backends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryBudget {
    limit: usize,
    used: usize,
}

impl QueryBudget {
    pub fn new(limit: usize) -> Self {
        Self { limit, used: 0 }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn ensure_available(&self) -> Result<()> {
        if self.used >= self.limit {
            Err(Error::BudgetExhausted(self.limit))
        } else {
            Ok(())
        }
    }

    /// Records one completed query and returns its 1-based index.
    pub fn consume(&mut self) -> Result<usize> {
        self.ensure_available()?;
        self.used += 1;
        Ok(self.used)
    }
}

/// Offline transcriber: accepts audio whose features lie within `threshold`
/// of a reference recording.
#[derive(Debug, Clone)]
pub struct MockOracle {
    extractor: FeatureExtractor,
    reference: FeatureMatrix,
    transcript: String,
    threshold: f64,
    budget: QueryBudget,
}

impl MockOracle {
    pub fn new(
        reference: &AudioBuffer,
        transcript: impl Into<String>,
        threshold: f64,
    ) -> Result<Self> {
        Self::with_config(reference, transcript, threshold, FeatureConfig::default())
    }

    pub fn with_config(
        reference: &AudioBuffer,
        transcript: impl Into<String>,
        threshold: f64,
        config: FeatureConfig,
    ) -> Result<Self> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(param_err(format!("threshold {threshold} must be >= 0")));
        }
        let extractor = FeatureExtractor::new(config, reference.sample_rate)?;
        let reference = extractor.extract(reference)?;
        Ok(Self {
            extractor,
            reference,
            transcript: transcript.into(),
            threshold,
            budget: QueryBudget::new(DEFAULT_BUDGET),
        })
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = QueryBudget::new(budget);
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Feature distance to the reference; does not count as a query.
    pub fn distance(&self, audio: &AudioBuffer) -> Result<f64> {
        feature_distance(&self.extractor.extract(audio)?, &self.reference)
    }
}

impl TranscriberBackend for MockOracle {
    fn transcribe(&mut self, audio: &AudioBuffer) -> Result<TranscriberVerdict> {
        self.budget.ensure_available()?;
        let d = self.distance(audio)?;
        let query_index = self.budget.consume()?;
        let accepted = d <= self.threshold;
        Ok(TranscriberVerdict {
            accepted,
            transcript: if accepted {
                self.transcript.clone()
            } else {
                String::new()
            },
            query_index,
        })
    }

    fn budget(&self) -> usize {
        self.budget.limit()
    }

    fn queries_used(&self) -> usize {
        self.budget.used()
    }
}

/// Result of the default-threshold calibration for the mock oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Largest distance from a fixture to its own aligned-RPG perturbations.
    pub max_perturbed_distance: f64,
    /// Smallest distance from a fixture to seeded white noise of equal length and RMS.
    pub min_noise_distance: f64,
    pub threshold: f64,
}

/// Seeded white noise with the same length and RMS as `like`.
pub fn matched_white_noise(like: &AudioBuffer, seed: u64) -> AudioBuffer {
    let rms = crate::dsp::power(&like.samples).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Uniform on [-a, a] has RMS a/sqrt(3).
    let a = (rms * 3f64.sqrt()).min(1.0);
    let samples = (0..like.len())
        .map(|_| a * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    AudioBuffer::new(samples, like.sample_rate)
}

/// Default threshold: midpoint between the worst aligned-RPG distance and
/// the closest white-noise distance over the fixture set. RPG windows are
/// the feature frame length so each window lines up with a frame start.
pub fn calibrate_threshold(
    fixtures: &[AudioBuffer],
    config: &FeatureConfig,
    rpg_seeds: &[u64],
    noise_seed: u64,
) -> Result<Calibration> {
    if fixtures.is_empty() || rpg_seeds.is_empty() {
        return Err(param_err("calibration needs fixtures and seeds"));
    }
    let mut max_perturbed = 0.0f64;
    let mut min_noise = f64::INFINITY;
    for (i, fx) in fixtures.iter().enumerate() {
        let extractor = FeatureExtractor::new(config.clone(), fx.sample_rate)?;
        let reference = extractor.extract(fx)?;
        let window = extractor.frame_len();
        for &seed in rpg_seeds {
            let p = perturb::rpg_samples(fx, window, seed)?.audio;
            max_perturbed =
                max_perturbed.max(feature_distance(&extractor.extract(&p)?, &reference)?);
        }
        let noise = matched_white_noise(fx, noise_seed.wrapping_add(i as u64));
        min_noise = min_noise.min(feature_distance(&extractor.extract(&noise)?, &reference)?);
    }
    if max_perturbed >= min_noise {
        return Err(param_err(format!(
            "fixtures are not separable: perturbed distance {max_perturbed} >= noise distance {min_noise}"
        )));
    }
    Ok(Calibration {
        max_perturbed_distance: max_perturbed,
        min_noise_distance: min_noise,
        threshold: 0.5 * (max_perturbed + min_noise),
    })
}

/// Oracle distance of every ranked schedule point, without spending budget.
pub fn distance_profile(
    oracle: &MockOracle,
    source: &AudioBuffer,
    ranked_schedule: &[PerturbationParams],
) -> Result<Vec<f64>> {
    ranked_schedule
        .iter()
        .map(|p| oracle.distance(&perturb::generate(source, p)?))
        .collect()
}

/// Threshold under which a ranked search first accepts at `index` and keeps
/// accepting every later point: the midpoint of the gap between the largest
/// distance from `index` on and the smallest distance before it. `None`
/// when no such gap exists (the profile is not monotone enough there).
pub fn tune_threshold(profile: &[f64], index: usize) -> Option<f64> {
    let accept_max = profile
        .get(index..)?
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let reject_min = profile[..index]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    (accept_max < reject_min).then(|| {
        if reject_min.is_infinite() {
            accept_max
        } else {
            0.5 * (accept_max + reject_min)
        }
    })
}

/// Schedule indices accepted under `threshold`.
pub fn accepted_indices(profile: &[f64], threshold: f64) -> Vec<usize> {
    profile
        .iter()
        .enumerate()
        .filter(|(_, d)| **d <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// True when the accepted indices form a suffix of the schedule.
pub fn is_upward_closed(accepted: &[usize], schedule_len: usize) -> bool {
    match accepted.first() {
        None => true,
        Some(&first) => accepted.len() == schedule_len - first,
    }
}

/// Sort key: smaller windows, then larger TS factor, then more HFA energy
/// sound worse.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DistortionKey {
    min_window_ms: f64,
    ts_percent: f64,
    hfa_amplitude: f64,
}

impl DistortionKey {
    fn of<'a>(params: impl IntoIterator<Item = &'a PerturbationParams>) -> Self {
        let mut key = DistortionKey {
            min_window_ms: f64::INFINITY,
            ts_percent: 100.0,
            hfa_amplitude: 0.0,
        };
        for p in params {
            for w in [p.tdi_window_ms, p.rpg_window_ms].into_iter().flatten() {
                key.min_window_ms = key.min_window_ms.min(w);
            }
            key.ts_percent = key.ts_percent.max(p.ts_factor_percent.unwrap_or(100.0));
            key.hfa_amplitude = key.hfa_amplitude.max(p.total_hfa_amplitude());
        }
        key
    }

    /// `Less` means `self` sounds worse.
    fn worse_first(&self, other: &Self) -> Ordering {
        self.min_window_ms
            .total_cmp(&other.min_window_ms)
            .then(other.ts_percent.total_cmp(&self.ts_percent))
            .then(other.hfa_amplitude.total_cmp(&self.hfa_amplitude))
    }
}

/// Stable worst-sounding-first ordering of a parameter schedule.
pub fn rank_params(schedule: &[PerturbationParams]) -> Vec<PerturbationParams> {
    let mut ranked = schedule.to_vec();
    ranked.sort_by(|a, b| DistortionKey::of([a]).worse_first(&DistortionKey::of([b])));
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackCandidate {
    /// One entry per word; a single entry for whole-utterance attacks.
    pub params: Vec<PerturbationParams>,
    pub audio: AudioBuffer,
    /// 0 = worst sounding.
    pub distortion_rank: usize,
    pub verdict: Option<TranscriberVerdict>,
}

/// Stable sort, worst sounding first; `distortion_rank` is rewritten to the
/// new positions.
pub fn rank_by_distortion(candidates: Vec<AttackCandidate>) -> Vec<AttackCandidate> {
    let mut ranked = candidates;
    ranked.sort_by(|a, b| DistortionKey::of(&a.params).worse_first(&DistortionKey::of(&b.params)));
    for (i, c) in ranked.iter_mut().enumerate() {
        c.distortion_rank = i;
    }
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub params: Vec<PerturbationParams>,
    pub verdict: TranscriberVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExhaustionReason {
    BudgetSpent,
    ScheduleExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustionReport {
    pub reason: ExhaustionReason,
    pub verdicts: Vec<QueryRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackOutcome {
    Accepted {
        candidate: AttackCandidate,
        history: Vec<QueryRecord>,
    },
    Exhausted(ExhaustionReport),
}

impl AttackOutcome {
    pub fn queries(&self) -> usize {
        match self {
            AttackOutcome::Accepted { history, .. } => history.len(),
            AttackOutcome::Exhausted(r) => r.verdicts.len(),
        }
    }

    pub fn candidate(&self) -> Option<&AttackCandidate> {
        match self {
            AttackOutcome::Accepted { candidate, .. } => Some(candidate),
            AttackOutcome::Exhausted(_) => None,
        }
    }
}

/// Queries candidates in the given order until one is accepted, the
/// candidates run out, or the budget is spent.
fn run_queries<I>(backend: &mut dyn TranscriberBackend, candidates: I) -> Result<AttackOutcome>
where
    I: Iterator<Item = Result<(Vec<PerturbationParams>, AudioBuffer)>>,
{
    let mut history = Vec::new();
    for (rank, item) in candidates.enumerate() {
        if backend.remaining() == 0 {
            return Ok(AttackOutcome::Exhausted(ExhaustionReport {
                reason: ExhaustionReason::BudgetSpent,
                verdicts: history,
            }));
        }
        let (params, audio) = item?;
        let verdict = match backend.transcribe(&audio) {
            Ok(v) => v,
            Err(Error::BudgetExhausted(_)) => {
                return Ok(AttackOutcome::Exhausted(ExhaustionReport {
                    reason: ExhaustionReason::BudgetSpent,
                    verdicts: history,
                }))
            }
            Err(e) => return Err(e),
        };
        history.push(QueryRecord {
            params: params.clone(),
            verdict: verdict.clone(),
        });
        if verdict.accepted {
            return Ok(AttackOutcome::Accepted {
                candidate: AttackCandidate {
                    params,
                    audio,
                    distortion_rank: rank,
                    verdict: Some(verdict),
                },
                history,
            });
        }
    }
    Ok(AttackOutcome::Exhausted(ExhaustionReport {
        reason: ExhaustionReason::ScheduleExhausted,
        verdicts: history,
    }))
}

/// Whole-utterance search over `schedule`, worst-sounding point first.
pub fn generic_attack(
    source: &AudioBuffer,
    backend: &mut dyn TranscriberBackend,
    schedule: &[PerturbationParams],
) -> Result<AttackOutcome> {
    if schedule.is_empty() {
        return Err(param_err("attack schedule is empty"));
    }
    for p in schedule {
        p.validate(source.sample_rate)?;
    }
    let ranked = rank_params(schedule);
    let candidates = ranked
        .into_iter()
        .map(|p| perturb::generate(source, &p).map(|audio| (vec![p], audio)));
    run_queries(backend, candidates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovedOptions {
    /// How many settings to keep per word (`k`).
    pub per_word_variants: usize,
    /// Local screen: a setting is kept for a word only if the perturbed word
    /// stays within this feature distance of the clean word. Infinity
    /// disables the screen and keeps the `k` most distorted settings.
    pub word_feature_threshold: f64,
    pub feature_config: FeatureConfig,
}

impl Default for ImprovedOptions {
    fn default() -> Self {
        Self {
            per_word_variants: 3,
            word_feature_threshold: f64::INFINITY,
            feature_config: FeatureConfig::default(),
        }
    }
}

/// Per-word settings chosen for the improved attack, most distorted first.
pub fn select_word_variants(
    word: &AudioBuffer,
    ranked_schedule: &[PerturbationParams],
    options: &ImprovedOptions,
) -> Result<Vec<(PerturbationParams, AudioBuffer)>> {
    let screen = if options.word_feature_threshold.is_finite() {
        let extractor = FeatureExtractor::new(options.feature_config.clone(), word.sample_rate)?;
        let reference = extractor.extract(word)?;
        Some((extractor, reference))
    } else {
        None
    };
    let mut chosen = Vec::with_capacity(options.per_word_variants);
    for p in ranked_schedule {
        if chosen.len() == options.per_word_variants {
            break;
        }
        let audio = perturb::generate(word, p)?;
        if let Some((extractor, reference)) = &screen {
            let d = feature_distance(&extractor.extract(&audio)?, reference)?;
            if d > options.word_feature_threshold {
                continue;
            }
        }
        chosen.push((p.clone(), audio));
    }
    Ok(chosen)
}

/// Mixed-radix counter over per-word choices; the first word is the most
/// significant digit, so combinations come out in lexicographic order.
fn combinations(radices: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = radices.iter().product();
    (0..total).map(move |mut n| {
        let mut digits = vec![0; radices.len()];
        for (d, &r) in digits.iter_mut().zip(radices).rev() {
            *d = n % r;
            n /= r;
        }
        digits
    })
}

/// Per-word perturbation and recombination. Each word gets up to `k`
/// settings; all concatenations are queried lexicographically by per-word
/// distortion rank under the backend's budget.
pub fn improved_attack(
    words: &[AudioBuffer],
    options: &ImprovedOptions,
    backend: &mut dyn TranscriberBackend,
    schedule: &[PerturbationParams],
) -> Result<AttackOutcome> {
    if words.is_empty() {
        return Err(param_err("improved attack needs at least one word"));
    }
    if options.per_word_variants == 0 {
        return Err(param_err("per-word variant count must be at least 1"));
    }
    if schedule.is_empty() {
        return Err(param_err("attack schedule is empty"));
    }
    let ranked = rank_params(schedule);
    let variants = words
        .iter()
        .map(|w| select_word_variants(w, &ranked, options))
        .collect::<Result<Vec<_>>>()?;
    // A word with no surviving setting leaves nothing to concatenate.
    if variants.iter().any(Vec::is_empty) {
        return Ok(AttackOutcome::Exhausted(ExhaustionReport {
            reason: ExhaustionReason::ScheduleExhausted,
            verdicts: Vec::new(),
        }));
    }
    let radices: Vec<usize> = variants.iter().map(Vec::len).collect();
    let candidates = combinations(&radices).map(|digits| {
        let params = digits
            .iter()
            .zip(&variants)
            .map(|(&d, v)| v[d].0.clone())
            .collect();
        let parts: Vec<AudioBuffer> = digits
            .iter()
            .zip(&variants)
            .map(|(&d, v)| v[d].1.clone())
            .collect();
        AudioBuffer::concat(&parts).map(|audio| (params, audio))
    });
    run_queries(backend, candidates)
}

/// Count of candidates the improved attack would enumerate.
pub fn improved_candidate_count(words: usize, per_word_variants: usize) -> usize {
    per_word_variants.pow(words as u32)
}
