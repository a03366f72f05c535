//! Same-person judgments under different stated criteria, on labeled pairs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parse_verdict, FeatureCatalog, SfsError};
use crate::extraction::Criterion;
use crate::gateway::{Gateway, Message};
use crate::par::{self, Execution};
use crate::prompt::PromptSet;
use crate::render;
use crate::types::FeatureProfile;

pub const ACTIONS: [&str; 8] = [
    "walking",
    "sitting on a bench",
    "talking on the phone",
    "reading a book",
    "waiting",
    "carrying a box",
    "eating",
    "looking at a map",
];

pub const SCENES: [&str; 6] = [
    "park",
    "train station",
    "office lobby",
    "market",
    "library",
    "parking lot",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: String,
    pub b: String,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairGenConfig {
    pub n_pairs: usize,
    pub n_identities: usize,
    pub same_rate: f64,
    pub seed: u64,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        Self {
            n_pairs: 200,
            n_identities: 40,
            same_rate: 0.5,
            seed: 0,
        }
    }
}

/// Pairs of `a person (...) is <action> in the <scene>.` descriptions.
/// Profiles use the catalog's SFS; actions and scenes are drawn
/// independently of identity, so they carry no signal.
pub fn generate_pairs(catalog: &FeatureCatalog, config: &PairGenConfig) -> Result<Vec<LabeledPair>, SfsError> {
    if config.n_identities < 2 {
        return Err(SfsError::Spec("need at least two identities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names: Vec<&str> = if catalog.sfs.is_empty() {
        catalog.names().collect()
    } else {
        catalog.sfs.iter().map(String::as_str).collect()
    };
    let mut identities: Vec<FeatureProfile> = Vec::with_capacity(config.n_identities);
    let mut attempts = 0;
    while identities.len() < config.n_identities {
        let mut p = FeatureProfile::new();
        for n in &names {
            let spec = catalog.get(n).ok_or_else(|| SfsError::Catalog(format!("unknown feature '{n}'")))?;
            p.insert(*n, spec.values.choose(&mut rng).expect("non-empty values").as_str());
        }
        if !identities.contains(&p) {
            identities.push(p);
        }
        attempts += 1;
        if attempts > config.n_identities * 100 {
            return Err(SfsError::Spec("catalog too small for the requested identities".into()));
        }
    }
    let describe = |p: &FeatureProfile, rng: &mut ChaCha8Rng| {
        format!(
            "{} is {} in the {}.",
            render::describe(p),
            ACTIONS.choose(rng).expect("non-empty"),
            SCENES.choose(rng).expect("non-empty")
        )
    };
    let mut pairs = Vec::with_capacity(config.n_pairs);
    for _ in 0..config.n_pairs {
        let same = rng.random_bool(config.same_rate.clamp(0.0, 1.0));
        let i = rng.random_range(0..identities.len());
        let j = if same {
            i
        } else {
            (i + rng.random_range(1..identities.len())) % identities.len()
        };
        pairs.push(LabeledPair {
            a: describe(&identities[i], &mut rng),
            b: describe(&identities[j], &mut rng),
            same,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub criterion: String,
    pub precision: f64,
    pub recall: f64,
    pub true_positive: usize,
    pub predicted_same: usize,
    pub actual_same: usize,
    pub excluded: usize,
}

/// Precision and recall of the "same" verdicts under `criterion`.
/// Precision is 0 when nothing is predicted same; recall is 0 when no
/// pair is actually the same.
pub fn judge_criterion_bench(
    pairs: &[LabeledPair],
    criterion: Criterion,
    prompts: &PromptSet,
    gateway: &Gateway,
    exec: Execution,
) -> Result<BenchResult, SfsError> {
    let template = prompts.get("judge_pair")?;
    let instruction = prompts.get(&criterion.instruction_prompt())?.text.trim().to_string();
    let verdicts = par::map(exec, pairs, |pair| -> Result<Option<bool>, SfsError> {
        let (task, text) = template.task(&[
            ("a", pair.a.clone()),
            ("b", pair.b.clone()),
            ("criterion", criterion.as_str().to_string()),
            ("criterion_instruction", instruction.clone()),
        ])?;
        let mut messages = vec![Message::user(text)];
        let reply = gateway.chat(&gateway.request(task.clone(), messages.clone()))?;
        if let Some(v) = parse_verdict(&reply.text) {
            return Ok(Some(v));
        }
        messages.push(Message::assistant(reply.text));
        messages.push(Message::user("Answer with one word: yes or no."));
        let retry = gateway.chat(&gateway.request(task, messages))?;
        let v = parse_verdict(&retry.text);
        if v.is_none() {
            log::warn!("pair excluded: unparseable verdict {:?}", retry.text);
        }
        Ok(v)
    });
    let (mut tp, mut predicted, mut actual, mut excluded) = (0, 0, 0, 0);
    for (pair, v) in pairs.iter().zip(verdicts) {
        let Some(v) = v? else {
            excluded += 1;
            continue;
        };
        predicted += usize::from(v);
        actual += usize::from(pair.same);
        tp += usize::from(v && pair.same);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(BenchResult {
        criterion: criterion.as_str().to_string(),
        precision: ratio(tp, predicted),
        recall: ratio(tp, actual),
        true_positive: tp,
        predicted_same: predicted,
        actual_same: actual,
        excluded,
    })
}
