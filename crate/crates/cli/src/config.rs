//! File-first run configuration with flag overrides.
//!
//! ```toml
//! execution = "parallel"
//!
//! [gateway]
//! backend = "mock:vision"
//! cache_dir = "fixtures"
//!
//! [pipeline]
//! mode = "rice"
//! window_len = 4
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use idtrace_core::captioner::PipelineConfig;
use idtrace_core::dataset::MissingImagePolicy;
use idtrace_core::gateway::{BackendKind, GatewayConfig};
use idtrace_core::sfslab::{PairGenConfig, PruneRule, SearchBudget, StrengthConfig};
use idtrace_core::Execution;
use serde::{Deserialize, Serialize};

use crate::args::{Command, GlobalArgs, JudgeOptions};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub execution: Execution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    pub missing_images: MissingImagePolicy,
    pub gateway: GatewayConfig,
    pub pipeline: PipelineConfig,
    pub search: SearchBudget,
    pub prune: PruneRule,
    pub strength: StrengthConfig,
    pub pairs: PairGenConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply_globals(&mut self, g: &GlobalArgs) {
        self.gateway.apply_env();
        if let Some(b) = &g.backend {
            self.gateway.backend = b.clone();
        }
        if let Some(m) = &g.model {
            self.gateway.model = m.clone();
        }
        if let Some(e) = &g.endpoint {
            self.gateway.endpoint = e.clone();
        }
        if let Some(d) = &g.cache_dir {
            self.gateway.cache_dir = Some(d.clone());
        }
        if let Some(n) = g.in_flight {
            self.gateway.in_flight = n;
        }
        if let Some(x) = g.execution {
            self.execution = x;
        }
        if let Some(p) = &g.prompts {
            self.prompts = Some(p.clone());
        }
        // Mock backends answer under their own model name unless told
        // otherwise, so their fixtures never collide with a real model's.
        if let BackendKind::Mock(name) = &self.gateway.backend {
            let defaults = GatewayConfig::default();
            let mock = GatewayConfig::mock(name);
            if self.gateway.model == defaults.model {
                self.gateway.model = mock.model;
            }
            if self.gateway.embed_model == defaults.embed_model {
                self.gateway.embed_model = mock.embed_model;
            }
            if self.gateway.retry == defaults.retry {
                self.gateway.retry = mock.retry;
            }
        }
    }

    /// Folds the command's own flags into the snapshot.
    pub fn apply_command(&mut self, command: &Command) {
        match command {
            Command::Extract(a) => self.apply_judge(&a.judge),
            Command::Caption(a) => {
                self.apply_judge(&a.judge);
                if let Some(m) = a.mode {
                    self.pipeline.mode = m;
                }
                if let Some(w) = a.window {
                    self.pipeline.window_len = w;
                }
                if let Some(s) = &a.sfs {
                    self.pipeline.sfs = s.clone();
                }
            }
            Command::SfsSearch(a) => {
                if let Some(n) = a.max_n {
                    self.search.max_n = n;
                }
                if let Some(s) = a.lab.seed {
                    self.search.seed = s;
                }
            }
            Command::SfsEval(a) => {
                if let Some(n) = a.trials {
                    self.strength.trials_per_format = n;
                }
                if let Some(s) = a.lab.seed {
                    self.strength.seed = s;
                }
            }
            Command::JudgeBench(a) => {
                if let Some(n) = a.pairs {
                    self.pairs.n_pairs = n;
                }
                if let Some(s) = a.lab.seed {
                    self.pairs.seed = s;
                }
            }
            _ => {}
        }
    }

    fn apply_judge(&mut self, j: &JudgeOptions) {
        if let Some(name) = &j.judge {
            self.pipeline.judge = name.clone();
        }
        if let Some(t) = j.threshold {
            self.pipeline.threshold = t;
        }
        if let Some(c) = j.criterion {
            self.pipeline.judge_criterion = c;
        }
    }
}
