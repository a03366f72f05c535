//! The three-mode battery run on a fixed feature set.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::SceneFormat;
use super::trial::{instantiate_trial, run_trial, TrialMode, TrialSpec};
use super::{FeatureCatalog, SfsError};
use crate::gateway::Gateway;
use crate::par::{self, Execution};
use crate::prompt::PromptTemplate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrengthConfig {
    pub trials_per_format: usize,
    pub extras_min: usize,
    pub extras_max: usize,
    pub seed: u64,
}

impl Default for StrengthConfig {
    fn default() -> Self {
        Self {
            trials_per_format: 2,
            extras_min: 4,
            extras_max: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthScores {
    pub base: f64,
    /// Mixture-first and mixture-last trials together.
    pub mixture: f64,
    pub mixture_contrast: f64,
    pub trials: usize,
    pub excluded: usize,
}

/// Mean success per mode with the whole `sfs` as the probe.
pub fn evaluate_sfs_strength(
    sfs: &[String],
    catalog: &FeatureCatalog,
    formats: &[SceneFormat],
    config: &StrengthConfig,
    judge_prompt: &PromptTemplate,
    gateway: &Gateway,
    exec: Execution,
) -> Result<StrengthScores, SfsError> {
    if sfs.is_empty() {
        return Err(SfsError::Spec("empty feature set".into()));
    }
    if formats.is_empty() {
        return Err(SfsError::Spec("no scene formats".into()));
    }
    let pool: Vec<&str> = catalog.names().filter(|n| !sfs.iter().any(|s| s == n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let modes = [
        TrialMode::Base,
        TrialMode::MixtureFirst,
        TrialMode::MixtureLast,
        TrialMode::MixtureContrast,
    ];
    let mut jobs = Vec::new();
    for format in formats {
        for _ in 0..config.trials_per_format {
            let hi = config.extras_max.min(pool.len());
            let k = rng.random_range(config.extras_min.min(hi)..=hi);
            let extras: Vec<String> = pool.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect();
            for mode in modes {
                if mode.uses_extras() && extras.is_empty() {
                    continue;
                }
                let spec = TrialSpec {
                    format_id: format.id.clone(),
                    mode,
                    probe_features: sfs.to_vec(),
                    extra_features: if mode.uses_extras() { extras.clone() } else { Vec::new() },
                    seed: rng.random(),
                };
                jobs.push((format, spec));
            }
        }
    }
    let results = par::map(exec, &jobs, |(format, spec)| {
        let trial = instantiate_trial(format, spec, catalog)?;
        match run_trial(&trial, gateway, judge_prompt) {
            Ok(v) => Ok(Some(v == trial.expected_same)),
            Err(SfsError::Unparseable { raw }) => {
                log::warn!("trial {} excluded: unparseable verdict {raw:?}", spec.hash());
                Ok(None)
            }
            Err(e) => Err(e),
        }
    });
    let mut tally = [(0u32, 0u32); 3];
    let mut excluded = 0;
    for ((_, spec), r) in jobs.iter().zip(results) {
        let Some(ok) = r? else {
            excluded += 1;
            continue;
        };
        let slot = match spec.mode {
            TrialMode::Base => 0,
            TrialMode::MixtureContrast => 2,
            _ => 1,
        };
        tally[slot].0 += u32::from(ok);
        tally[slot].1 += 1;
    }
    let mean = |(ok, n): (u32, u32)| if n == 0 { 0.0 } else { f64::from(ok) / f64::from(n) };
    Ok(StrengthScores {
        base: mean(tally[0]),
        mixture: mean(tally[1]),
        mixture_contrast: mean(tally[2]),
        trials: jobs.len() - excluded,
        excluded,
    })
}
