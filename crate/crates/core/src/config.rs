//! One JSON configuration document with per-subsystem sections; every field
//! falls back to its default when absent.

use crate::align::AlignCfg;
use crate::corpus::SynthFamilySpec;
use crate::embed::EmbedCfg;
use crate::error::Result;
use crate::lexicon::InductionCfg;
use crate::model::{MaskCfg, ModelCfg, NoiseCfg, OptimCfg};
use crate::pipeline::{
    BpeTrainCfg, ExperimentCfg, LangRoles, ScheduleCfg, StepBudgets, StepSpec, TrainRunCfg,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CorpusSection {
    /// Directory holding (or receiving) the corpus family files.
    pub dir: PathBuf,
    pub synth: SynthFamilySpec,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            dir: PathBuf::from("runs/family"),
            synth: SynthFamilySpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ScheduleSection {
    pub seed: u64,
    pub langs: LangRoles,
    pub budgets: StepBudgets,
    pub run: TrainRunCfg,
    pub optim: OptimCfg,
    pub noise: NoiseCfg,
    pub mask: MaskCfg,
    pub out_dir: PathBuf,
    /// Optional pre-induced dictionary (TSV); induced on demand otherwise.
    pub dictionary: Option<PathBuf>,
    /// Explicit step list; the standard six-step schedule when absent.
    pub steps: Option<Vec<StepSpec>>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            seed: 7,
            langs: LangRoles::default(),
            budgets: StepBudgets::default(),
            run: TrainRunCfg::default(),
            optim: OptimCfg::default(),
            noise: NoiseCfg::default(),
            mask: MaskCfg::default(),
            out_dir: PathBuf::from("runs/schedule"),
            dictionary: None,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ExperimentSection {
    pub out_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            out_dir: PathBuf::from("runs/experiments"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FullConfig {
    pub corpus: CorpusSection,
    pub bpe: BpeTrainCfg,
    pub embed: EmbedCfg,
    pub align: AlignCfg,
    pub lexicon: InductionCfg,
    pub model: ModelCfg,
    pub schedule: ScheduleSection,
    pub experiment: ExperimentSection,
}

impl FullConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Assembles the runnable schedule from the section, expanding to the
    /// standard six steps when none are given explicitly.
    pub fn schedule_cfg(&self) -> ScheduleCfg {
        let s = &self.schedule;
        let mut model = self.model.clone();
        model.seed = if model.seed == ModelCfg::default().seed {
            s.seed
        } else {
            model.seed
        };
        let mut cfg = ScheduleCfg::standard(
            s.seed,
            s.langs.clone(),
            &s.budgets,
            s.run.clone(),
            model,
            s.optim.clone(),
        );
        cfg.noise = s.noise.clone();
        cfg.mask = s.mask.clone();
        if let Some(steps) = &s.steps {
            cfg.steps = steps.clone();
        }
        cfg
    }

    pub fn experiment_cfg(&self) -> ExperimentCfg {
        ExperimentCfg {
            schedule: self.schedule_cfg(),
            embed: self.embed.clone(),
            align: self.align.clone(),
            lexicon: self.lexicon.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: FullConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, FullConfig::default());
        let sched = cfg.schedule_cfg();
        assert_eq!(sched.steps.len(), 6);
        assert_eq!(sched.run.eval_every, 200);
    }

    #[test]
    fn partial_overrides_apply() {
        let doc = r#"{
            "bpe": {"num_merges": 123},
            "schedule": {"seed": 99, "budgets": {"pretrain_ac": 10}},
            "model": {"d_model": 32, "n_heads": 2}
        }"#;
        let cfg: FullConfig = serde_json::from_str(doc).unwrap();
        assert_eq!(cfg.bpe.num_merges, 123);
        assert_eq!(cfg.bpe.sample_per_lang, BpeTrainCfg::default().sample_per_lang);
        let sched = cfg.schedule_cfg();
        assert_eq!(sched.seed, 99);
        assert_eq!(sched.steps[0].max_steps, 10);
        assert_eq!(sched.steps[1].max_steps, StepBudgets::default().pretrain_ab);
        assert_eq!(sched.model.d_model, 32);
    }

    #[test]
    fn document_round_trips() {
        let cfg = FullConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: FullConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
