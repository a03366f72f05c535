//! Strong-feature-set search.
//!
//! Round `n` probes every `n`-subset of the surviving features (sampled when
//! there are too many) in every trial mode, scores each feature by the mean
//! success over the trials whose probe contains it, and prunes. The search
//! ends after `max_n` rounds or when fewer than `n` features survive.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::SceneFormat;
use super::trial::{instantiate_trial, run_trial, TrialMode, TrialSpec};
use super::{FeatureCatalog, SfsError};
use crate::gateway::Gateway;
use crate::par::{self, Execution};
use crate::prompt::PromptTemplate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub max_n: usize,
    pub formats_per_combination: usize,
    /// Cap on probed subsets per round; larger rounds are sampled.
    pub max_combinations: usize,
    pub extras_min: usize,
    pub extras_max: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            max_n: 4,
            formats_per_combination: 5,
            max_combinations: 120,
            extras_min: 4,
            extras_max: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneRule {
    /// Features whose base score is at or below this quantile of the
    /// surviving base scores are dropped, unless all scores tie.
    pub base_quantile: f64,
    /// Features whose mixture score trails their base score by more than
    /// this margin are dropped.
    pub mixture_margin: f64,
}

impl Default for PruneRule {
    fn default() -> Self {
        Self {
            base_quantile: 0.25,
            mixture_margin: 0.15,
        }
    }
}

/// One completed trial. The trace of these is enough to recompute every
/// aggregate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub spec_hash: String,
    pub mode: TrialMode,
    pub probe: Vec<String>,
    pub expected_same: bool,
    pub judged_same: bool,
}

impl TraceEntry {
    pub fn success(&self) -> bool {
        self.expected_same == self.judged_same
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureScores {
    pub base: Option<f64>,
    pub contrast: Option<f64>,
    /// Mixture-first and mixture-last trials together.
    pub mixture: Option<f64>,
    pub mixture_contrast: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub round: usize,
    pub feature: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub n: usize,
    pub m: usize,
    pub combinations_total: u128,
    pub combinations_probed: usize,
    pub scores: BTreeMap<String, FeatureScores>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    /// Next round to run.
    pub n: usize,
    pub survivors: Vec<String>,
    pub rounds: Vec<RoundSummary>,
    pub pruned: Vec<PruneEvent>,
    pub trace: Vec<TraceEntry>,
    /// Trials left out of the aggregates, with the reason.
    pub excluded: Vec<(String, String)>,
    pub finished: bool,
}

impl SearchState {
    pub fn new(catalog: &FeatureCatalog) -> Self {
        Self {
            n: 1,
            survivors: catalog.names().map(str::to_string).collect(),
            ..Self::default()
        }
    }

    /// Hash over the `(spec hash, verdict)` sequence of the trace.
    pub fn trace_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.trace {
            h.update(e.spec_hash.as_bytes());
            h.update(if e.judged_same { b" same\n" } else { b" diff\n" });
        }
        hex::encode(h.finalize())
    }
}

/// Per-feature mean success over `round`'s trials whose probe contains it.
pub fn recompute_scores(
    trace: &[TraceEntry],
    round: usize,
    features: &[String],
) -> BTreeMap<String, FeatureScores> {
    let mut tallies: BTreeMap<&str, [(u32, u32); 4]> = BTreeMap::new();
    for e in trace.iter().filter(|e| e.round == round) {
        let slot = match e.mode {
            TrialMode::Base => 0,
            TrialMode::Contrast => 1,
            TrialMode::MixtureFirst | TrialMode::MixtureLast => 2,
            TrialMode::MixtureContrast => 3,
        };
        for f in &e.probe {
            let t = &mut tallies.entry(f.as_str()).or_default()[slot];
            t.0 += u32::from(e.success());
            t.1 += 1;
        }
    }
    let mean = |(ok, n): (u32, u32)| (n > 0).then(|| f64::from(ok) / f64::from(n));
    features
        .iter()
        .map(|f| {
            let t = tallies.get(f.as_str()).copied().unwrap_or_default();
            (
                f.clone(),
                FeatureScores {
                    base: mean(t[0]),
                    contrast: mean(t[1]),
                    mixture: mean(t[2]),
                    mixture_contrast: mean(t[3]),
                },
            )
        })
        .collect()
}

fn binomial(m: usize, n: usize) -> u128 {
    if n > m {
        return 0;
    }
    (0..n as u128).fold(1u128, |acc, i| acc * (m as u128 - i) / (i + 1))
}

/// The `rank`-th `n`-subset of `0..m` in lexicographic order.
fn unrank(mut rank: u128, m: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for k in (1..=n).rev() {
        let mut i = start;
        loop {
            let c = binomial(m - i - 1, k - 1);
            if rank < c {
                break;
            }
            rank -= c;
            i += 1;
        }
        out.push(i);
        start = i + 1;
    }
    out
}

fn combinations(m: usize, n: usize, cap: usize, rng: &mut ChaCha8Rng) -> (u128, Vec<Vec<usize>>) {
    let total = binomial(m, n);
    let ranks: Vec<u128> = if total <= cap as u128 {
        (0..total).collect()
    } else if total <= usize::MAX as u128 {
        let mut r: Vec<u128> = sample(rng, total as usize, cap)
            .into_iter()
            .map(|x| x as u128)
            .collect();
        r.sort_unstable();
        r
    } else {
        let mut set = BTreeSet::new();
        while set.len() < cap {
            set.insert(rng.random_range(0..total));
        }
        set.into_iter().collect()
    };
    (total, ranks.into_iter().map(|r| unrank(r, m, n)).collect())
}

/// The trial specs of round `n`, in a fixed order.
pub fn plan_round(
    state: &SearchState,
    catalog: &FeatureCatalog,
    formats: &[SceneFormat],
    budget: &SearchBudget,
) -> (u128, Vec<TrialSpec>) {
    let n = state.n;
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (total, combos) = combinations(state.survivors.len(), n, budget.max_combinations, &mut rng);
    let all: Vec<&str> = catalog.names().collect();
    let per = budget.formats_per_combination.clamp(1, formats.len());
    let mut specs = Vec::new();
    for combo in combos {
        let probe: Vec<String> = combo.iter().map(|&i| state.survivors[i].clone()).collect();
        let mut order: Vec<&SceneFormat> = formats.iter().collect();
        order.shuffle(&mut rng);
        let pool: Vec<&str> = all.iter().copied().filter(|f| !probe.iter().any(|p| p == f)).collect();
        for format in order.into_iter().take(per) {
            let hi = budget.extras_max.min(pool.len());
            let lo = budget.extras_min.min(hi);
            let k = rng.random_range(lo..=hi);
            let mut extras: Vec<String> = pool
                .choose_multiple(&mut rng, k)
                .map(|s| s.to_string())
                .collect();
            extras.sort_by_key(|e| catalog.features.iter().position(|f| &f.name == e));
            for mode in TrialMode::ALL {
                if mode.uses_extras() && extras.is_empty() {
                    continue;
                }
                specs.push(TrialSpec {
                    format_id: format.id.clone(),
                    mode,
                    probe_features: probe.clone(),
                    extra_features: if mode.uses_extras() { extras.clone() } else { Vec::new() },
                    seed: rng.random(),
                });
            }
        }
    }
    (total, specs)
}

/// Survivors after applying `rule` to one round's scores, with the drops.
pub fn prune(
    survivors: &[String],
    scores: &BTreeMap<String, FeatureScores>,
    rule: &PruneRule,
    round: usize,
) -> (Vec<String>, Vec<PruneEvent>) {
    let base = |f: &str| scores.get(f).and_then(|s| s.base);
    let mut base_scores: Vec<f64> = survivors.iter().filter_map(|f| base(f)).collect();
    base_scores.sort_by(f64::total_cmp);
    let cut = match (base_scores.first(), base_scores.last()) {
        (Some(lo), Some(hi)) if lo < hi => {
            let idx = ((base_scores.len() - 1) as f64 * rule.base_quantile).floor() as usize;
            Some(base_scores[idx])
        }
        _ => None,
    };
    let mut keep = Vec::new();
    let mut events = Vec::new();
    for f in survivors {
        let s = scores.get(f).cloned().unwrap_or_default();
        let reason = match (cut, s.base) {
            (Some(c), Some(b)) if b <= c => Some(format!("base score {b:.3} at or below quantile {c:.3}")),
            _ => match (s.base, s.mixture) {
                (Some(b), Some(mx)) if mx < b - rule.mixture_margin => Some(format!(
                    "mixture score {mx:.3} trails base {b:.3} by more than {}",
                    rule.mixture_margin
                )),
                _ => None,
            },
        };
        match reason {
            Some(reason) => events.push(PruneEvent {
                round,
                feature: f.clone(),
                reason,
            }),
            None => keep.push(f.clone()),
        }
    }
    if keep.is_empty() {
        log::warn!("round {round}: pruning would remove every feature; skipped");
        return (survivors.to_vec(), Vec::new());
    }
    (keep, events)
}

pub struct SearchConfig<'a> {
    pub catalog: &'a FeatureCatalog,
    pub formats: &'a [SceneFormat],
    pub budget: SearchBudget,
    pub prune: PruneRule,
    pub judge_prompt: &'a PromptTemplate,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub sfs: Vec<String>,
    pub state: SearchState,
}

enum TrialResult {
    Verdict(bool),
    Excluded(String),
    Fatal(SfsError),
}

/// Runs the search from scratch.
pub fn search_sfs(config: &SearchConfig<'_>, gateway: &Gateway) -> Result<SearchOutcome, SfsError> {
    resume_search(config, gateway, SearchState::new(config.catalog))
}

/// Continues from a checkpoint. Trials already in the trace are not re-run.
/// On a gateway failure the error carries the checkpoint.
pub fn resume_search(
    config: &SearchConfig<'_>,
    gateway: &Gateway,
    mut state: SearchState,
) -> Result<SearchOutcome, SfsError> {
    if config.formats.is_empty() {
        return Err(SfsError::Spec("no scene formats".into()));
    }
    while !state.finished {
        let n = state.n;
        if n > config.budget.max_n || state.survivors.len() < n {
            state.finished = true;
            break;
        }
        let (total, specs) = plan_round(&state, config.catalog, config.formats, &config.budget);
        let done: BTreeSet<&str> = state
            .trace
            .iter()
            .map(|e| e.spec_hash.as_str())
            .chain(state.excluded.iter().map(|(h, _)| h.as_str()))
            .collect();
        let todo: Vec<&TrialSpec> = specs.iter().filter(|s| !done.contains(s.hash().as_str())).collect();
        let results = par::map(config.execution, &todo, |spec| {
            let Some(format) = config.formats.iter().find(|f| f.id == spec.format_id) else {
                return TrialResult::Fatal(SfsError::Spec(format!("unknown format '{}'", spec.format_id)));
            };
            let filled = match instantiate_trial(format, spec, config.catalog) {
                Ok(t) => t,
                Err(e) => return TrialResult::Fatal(e),
            };
            match run_trial(&filled, gateway, config.judge_prompt) {
                Ok(v) => TrialResult::Verdict(v),
                Err(SfsError::Unparseable { raw }) => TrialResult::Excluded(format!("unparseable verdict {raw:?}")),
                Err(e) => TrialResult::Fatal(e),
            }
        });
        // Completed trials are committed in plan order even when a later one
        // failed, so a resumed run skips them.
        let mut fatal = None;
        for (spec, r) in todo.iter().zip(results) {
            match r {
                TrialResult::Verdict(v) => state.trace.push(TraceEntry {
                    round: n,
                    spec_hash: spec.hash(),
                    mode: spec.mode,
                    probe: spec.probe_features.clone(),
                    expected_same: spec.mode.expected_same(),
                    judged_same: v,
                }),
                TrialResult::Excluded(reason) => {
                    log::warn!("trial {} excluded: {reason}", spec.hash());
                    state.excluded.push((spec.hash(), reason));
                }
                TrialResult::Fatal(e) => {
                    fatal.get_or_insert(e);
                }
            }
        }
        if let Some(e) = fatal {
            return Err(match e {
                SfsError::Gateway(g) => SfsError::Interrupted {
                    source: g,
                    state: Box::new(state),
                },
                other => other,
            });
        }
        let scores = recompute_scores(&state.trace, n, &state.survivors);
        let (keep, events) = prune(&state.survivors, &scores, &config.prune, n);
        state.rounds.push(RoundSummary {
            n,
            m: state.survivors.len(),
            combinations_total: total,
            combinations_probed: specs
                .iter()
                .map(|s| &s.probe_features)
                .collect::<BTreeSet<_>>()
                .len(),
            scores,
        });
        for e in &events {
            log::info!("round {n}: dropped '{}': {}", e.feature, e.reason);
        }
        state.pruned.extend(events);
        state.survivors = keep;
        state.n += 1;
    }
    Ok(SearchOutcome {
        sfs: state.survivors.clone(),
        state,
    })
}
