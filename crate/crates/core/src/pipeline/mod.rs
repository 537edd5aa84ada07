//! Six-step schedule orchestration: staged pretraining, vocabulary transfer,
//! UNMT with online/cross-lingual back-translation, offline back-translation,
//! BLEU evaluation, early stopping, and the experiment harness.

mod bleu;
mod bt;
mod earlystop;
mod experiments;

pub use bleu::evaluate_bleu;
pub use bt::{offline_bt_generate, online_bt_round, xbt_round, OfflineBt};
pub use earlystop::{early_stop_check, StopDecision};
pub use experiments::{
    bt_order_experiment, multilingual_baseline, transfer_ablation, ExperimentCfg,
};

use crate::corpus::{
    bpe_decode, bpe_learn, build_vocab, tokenize, BpeCache, BpeModel, Corpus, SynthFamily, Vocab,
};
use crate::error::{Error, Result};
use crate::lexicon::{freq_filter, induce, BilingualDictionary, InductionCfg};
use crate::model::{
    load_checkpoint, mass_batches, mt_batches, noise_batches, save_checkpoint, train_step,
    translate_batch, AdamState, CkptMeta, MaskCfg, ModelCfg, ModelParams, NoiseCfg, ObjectiveBatch,
    ObjectiveTag, OptimCfg,
};
use crate::transfer::{
    copy_language_embedding, copy_word_embeddings, word_dict_to_token_pairs, TransferReport,
    TransferScope,
};
use crate::align::{seed_identical, self_learn, AlignCfg};
use crate::embed::{train_skipgram, EmbedCfg};
use crate::report::Table;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------- codec

/// Tokenizer + BPE + vocabulary, with a segmentation cache.
pub struct TextCodec {
    pub bpe: BpeModel,
    pub vocab: Vocab,
    cache: BpeCache,
}

impl TextCodec {
    pub fn new(bpe: BpeModel, vocab: Vocab) -> Self {
        TextCodec {
            bpe,
            vocab,
            cache: BpeCache::new(),
        }
    }

    /// Raw line -> subword ids.
    pub fn encode_line(&mut self, line: &str) -> Vec<u32> {
        let subs = self.cache.segment_line(&self.bpe, line);
        self.vocab.encode(&subs)
    }

    /// Subword ids -> words (specials dropped, markers joined).
    pub fn decode_to_words(&self, ids: &[u32]) -> Vec<String> {
        let subs: Vec<String> = ids
            .iter()
            .filter(|&&id| !Vocab::is_special(id))
            .filter_map(|&id| self.vocab.token(id).map(|s| s.to_string()))
            .collect();
        bpe_decode(&subs, &self.bpe.continuation_marker)
    }
}

// ----------------------------------------------------------------- data

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LangRoles {
    pub high: String,
    pub distant: String,
    pub related: String,
    pub target: String,
}

impl Default for LangRoles {
    fn default() -> Self {
        LangRoles {
            high: "synA".into(),
            distant: "synC".into(),
            related: "synB".into(),
            target: "synBp".into(),
        }
    }
}

impl LangRoles {
    pub fn all(&self) -> Vec<String> {
        vec![
            self.high.clone(),
            self.distant.clone(),
            self.related.clone(),
            self.target.clone(),
        ]
    }
}

/// Source sentences with word-level references for one direction.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub src_lang: String,
    pub tgt_lang: String,
    pub src_ids: Vec<Vec<u32>>,
    pub refs: Vec<Vec<String>>,
}

/// Everything the schedule consumes, already encoded to subword ids.
pub struct PipelineData {
    /// Language codes in language-id order.
    pub langs: Vec<String>,
    pub mono_ids: BTreeMap<String, Vec<Vec<u32>>>,
    /// Parallel training data keyed by the generated (src, tgt) direction.
    pub parallel_ids: BTreeMap<(String, String), (Vec<Vec<u32>>, Vec<Vec<u32>>)>,
    pub dev: BTreeMap<(String, String), EvalSet>,
    pub test: BTreeMap<(String, String), EvalSet>,
    /// Raw monolingual corpora (embedding training).
    pub raw_mono: BTreeMap<String, Corpus>,
    /// Raw per-language text including parallel sides (frequency filter).
    pub raw_combined: BTreeMap<String, Corpus>,
}

impl PipelineData {
    pub fn lang_id(&self, code: &str) -> Result<u32> {
        self.langs
            .iter()
            .position(|l| l == code)
            .map(|i| i as u32)
            .ok_or_else(|| Error::Config(format!("unknown language '{}'", code)))
    }

    pub fn dev_set(&self, src: &str, tgt: &str) -> Result<&EvalSet> {
        self.dev
            .get(&(src.to_string(), tgt.to_string()))
            .ok_or_else(|| Error::Data(format!("no dev set for {}->{}", src, tgt)))
    }

    pub fn test_set(&self, src: &str, tgt: &str) -> Result<&EvalSet> {
        self.test
            .get(&(src.to_string(), tgt.to_string()))
            .ok_or_else(|| Error::Data(format!("no test set for {}->{}", src, tgt)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BpeTrainCfg {
    pub num_merges: usize,
    pub sample_per_lang: usize,
    pub seed: u64,
}

impl Default for BpeTrainCfg {
    fn default() -> Self {
        BpeTrainCfg {
            num_merges: 2500,
            sample_per_lang: 2000,
            seed: 1,
        }
    }
}

/// Prepared artifacts: codec plus encoded data.
pub struct Workspace {
    pub codec: TextCodec,
    pub data: PipelineData,
}

impl Workspace {
    /// Joint BPE over all training text of all languages (mono plus parallel
    /// sides, equal seeded samples per language), vocabulary with
    /// per-language sets, and id-encoded corpora.
    pub fn prepare(family: &SynthFamily, bpe_cfg: &BpeTrainCfg, max_len: usize) -> Result<Workspace> {
        let langs = vec![
            family.spec.lang_high.clone(),
            family.spec.lang_distant.clone(),
            family.spec.lang_related.clone(),
            family.spec.lang_target.clone(),
        ];
        // combined per-language text
        let mut lines: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for lang in &langs {
            lines.insert(lang.clone(), family.mono[lang].lines.clone());
        }
        for p in &family.parallel {
            lines.get_mut(&p.src_lang).expect("known lang").extend(p.src.clone());
            lines.get_mut(&p.tgt_lang).expect("known lang").extend(p.tgt.clone());
        }
        let combined: BTreeMap<String, Corpus> = lines
            .into_iter()
            .map(|(lang, ls)| (lang.clone(), Corpus::from_lines(&lang, ls)))
            .collect();
        let ordered: Vec<&Corpus> = langs.iter().map(|l| &combined[l]).collect();
        let bpe = bpe_learn(&ordered, bpe_cfg.num_merges, bpe_cfg.sample_per_lang, bpe_cfg.seed)?;
        let vocab = build_vocab(&ordered, &bpe);
        let mut codec = TextCodec::new(bpe, vocab);

        let limit = max_len.saturating_sub(2);
        let encode_lines = |codec: &mut TextCodec, ls: &[String]| -> Vec<Vec<u32>> {
            ls.iter()
                .map(|l| codec.encode_line(l))
                .filter(|ids| !ids.is_empty() && ids.len() <= limit)
                .collect()
        };

        let mut mono_ids = BTreeMap::new();
        for lang in &langs {
            mono_ids.insert(lang.clone(), encode_lines(&mut codec, &family.mono[lang].lines));
        }
        let mut parallel_ids = BTreeMap::new();
        for p in &family.parallel {
            let mut src = Vec::new();
            let mut tgt = Vec::new();
            for (s, t) in p.src.iter().zip(&p.tgt) {
                let si = codec.encode_line(s);
                let ti = codec.encode_line(t);
                if !si.is_empty() && si.len() <= limit && !ti.is_empty() && ti.len() <= limit {
                    src.push(si);
                    tgt.push(ti);
                }
            }
            parallel_ids.insert((p.src_lang.clone(), p.tgt_lang.clone()), (src, tgt));
        }

        let build_eval = |codec: &mut TextCodec, multi: &crate::corpus::MultiParallel| {
            let mut sets = BTreeMap::new();
            for src_lang in &langs {
                for tgt_lang in &langs {
                    if src_lang == tgt_lang {
                        continue;
                    }
                    let src_col = multi.column(src_lang).expect("family language");
                    let tgt_col = multi.column(tgt_lang).expect("family language");
                    let mut src_ids = Vec::new();
                    let mut refs = Vec::new();
                    for (s, t) in src_col.iter().zip(&tgt_col) {
                        let ids = codec.encode_line(s);
                        if !ids.is_empty() && ids.len() <= limit {
                            src_ids.push(ids);
                            refs.push(tokenize(t));
                        }
                    }
                    sets.insert(
                        (src_lang.clone(), tgt_lang.clone()),
                        EvalSet {
                            src_lang: src_lang.clone(),
                            tgt_lang: tgt_lang.clone(),
                            src_ids,
                            refs,
                        },
                    );
                }
            }
            sets
        };
        let dev = build_eval(&mut codec, &family.dev);
        let test = build_eval(&mut codec, &family.test);

        let raw_mono = family.mono.clone();
        Ok(Workspace {
            codec,
            data: PipelineData {
                langs,
                mono_ids,
                parallel_ids,
                dev,
                test,
                raw_mono,
                raw_combined: combined,
            },
        })
    }
}

// ------------------------------------------------------------- schedule

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct XbtSpec {
    pub related: String,
    pub high: String,
    pub pivot: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    Pretrain {
        ma_langs: Vec<String>,
        mt_pairs: Vec<(String, String)>,
    },
    Transfer {
        scope: TransferScope,
    },
    Unmt {
        ae_langs: Vec<String>,
        bt_pairs: Vec<(String, String)>,
        xbt: Option<XbtSpec>,
    },
    OfflineBtMt {
        mono_lang: String,
        to_lang: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: StepKind,
    /// Training rounds budget.
    pub max_steps: usize,
    /// Rounds without dev improvement before stopping.
    pub patience: usize,
    /// Dev direction watched for early stopping, (src, tgt).
    pub stopping_metric: (String, String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainRunCfg {
    pub batch_size: usize,
    /// Evaluate the stopping metric every this many rounds.
    pub eval_every: usize,
    pub online_beam: usize,
    pub offline_beam: usize,
    pub max_out_len: usize,
}

impl Default for TrainRunCfg {
    fn default() -> Self {
        TrainRunCfg {
            batch_size: 16,
            eval_every: 200,
            online_beam: 1,
            offline_beam: 5,
            max_out_len: 48,
        }
    }
}

/// Per-step round budgets for the standard six-step schedule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct StepBudgets {
    pub pretrain_ac: usize,
    pub pretrain_ab: usize,
    pub unmt4: usize,
    pub offline_mt: usize,
    pub unmt6: usize,
    pub patience: usize,
}

impl Default for StepBudgets {
    fn default() -> Self {
        StepBudgets {
            pretrain_ac: 3000,
            pretrain_ab: 3000,
            unmt4: 3000,
            offline_mt: 3000,
            unmt6: 3000,
            patience: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScheduleCfg {
    pub seed: u64,
    pub langs: LangRoles,
    pub steps: Vec<StepSpec>,
    pub run: TrainRunCfg,
    pub model: ModelCfg,
    pub optim: OptimCfg,
    pub noise: NoiseCfg,
    pub mask: MaskCfg,
}

impl ScheduleCfg {
    /// The paper's six-step schedule: A-C pretraining, A-B pretraining,
    /// vocabulary transfer, UNMT, offline back-translation MT, UNMT again.
    pub fn standard(
        seed: u64,
        langs: LangRoles,
        budgets: &StepBudgets,
        run: TrainRunCfg,
        model: ModelCfg,
        optim: OptimCfg,
    ) -> Self {
        let l = langs.clone();
        let steps = vec![
            StepSpec {
                name: "step1_pretrain_ac".into(),
                kind: StepKind::Pretrain {
                    ma_langs: vec![l.high.clone(), l.distant.clone()],
                    mt_pairs: vec![(l.high.clone(), l.distant.clone())],
                },
                max_steps: budgets.pretrain_ac,
                patience: budgets.patience,
                stopping_metric: (l.distant.clone(), l.high.clone()),
            },
            StepSpec {
                name: "step2_pretrain_ab".into(),
                kind: StepKind::Pretrain {
                    ma_langs: vec![l.high.clone(), l.related.clone()],
                    mt_pairs: vec![(l.high.clone(), l.related.clone())],
                },
                max_steps: budgets.pretrain_ab,
                patience: budgets.patience,
                stopping_metric: (l.related.clone(), l.high.clone()),
            },
            StepSpec {
                name: "step3_transfer".into(),
                kind: StepKind::Transfer {
                    scope: TransferScope::ExclusiveOnly,
                },
                max_steps: 0,
                patience: 0,
                stopping_metric: (l.target.clone(), l.high.clone()),
            },
            StepSpec {
                name: "step4_unmt".into(),
                kind: StepKind::Unmt {
                    ae_langs: vec![l.high.clone(), l.related.clone(), l.target.clone()],
                    bt_pairs: vec![
                        (l.high.clone(), l.target.clone()),
                        (l.related.clone(), l.target.clone()),
                    ],
                    xbt: Some(XbtSpec {
                        related: l.related.clone(),
                        high: l.high.clone(),
                        pivot: l.target.clone(),
                    }),
                },
                max_steps: budgets.unmt4,
                patience: budgets.patience,
                stopping_metric: (l.target.clone(), l.high.clone()),
            },
            StepSpec {
                name: "step5_offline_bt_mt".into(),
                kind: StepKind::OfflineBtMt {
                    mono_lang: l.target.clone(),
                    to_lang: l.high.clone(),
                },
                max_steps: budgets.offline_mt,
                patience: budgets.patience,
                stopping_metric: (l.target.clone(), l.high.clone()),
            },
            StepSpec {
                name: "step6_unmt".into(),
                kind: StepKind::Unmt {
                    ae_langs: vec![l.high.clone(), l.related.clone(), l.target.clone()],
                    bt_pairs: vec![
                        (l.high.clone(), l.target.clone()),
                        (l.related.clone(), l.target.clone()),
                    ],
                    xbt: Some(XbtSpec {
                        related: l.related.clone(),
                        high: l.high.clone(),
                        pivot: l.target.clone(),
                    }),
                },
                max_steps: budgets.unmt6,
                patience: budgets.patience,
                // step 6 watches the into-target direction
                stopping_metric: (l.high.clone(), l.target.clone()),
            },
        ];
        ScheduleCfg {
            seed,
            langs,
            steps,
            run,
            model,
            optim,
            noise: NoiseCfg::default(),
            mask: MaskCfg::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub name: String,
    pub rounds: usize,
    /// (round, dev BLEU of the stopping direction).
    pub history: Vec<(u64, f64)>,
    /// Dev BLEU per watched direction at step end, keyed "src->tgt".
    pub final_bleu: BTreeMap<String, f64>,
    pub checkpoint: PathBuf,
    pub transfer: Option<TransferReport>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub steps: Vec<StepReport>,
}

impl ScheduleReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["step", "rounds", "direction", "dev_bleu"]);
        for s in &self.steps {
            for (dir, bleu) in &s.final_bleu {
                t.push(vec![
                    s.name.clone(),
                    s.rounds.to_string(),
                    dir.clone(),
                    format!("{:.2}", bleu),
                ]);
            }
        }
        t
    }
}

/// Greedy-decodes an eval set and scores word-level BLEU.
pub fn eval_direction(
    params: &ModelParams,
    codec: &TextCodec,
    data: &PipelineData,
    set: &EvalSet,
    beam: usize,
    max_out_len: usize,
) -> Result<f64> {
    let src = data.lang_id(&set.src_lang)?;
    let tgt = data.lang_id(&set.tgt_lang)?;
    let mut hyps = Vec::with_capacity(set.src_ids.len());
    for chunk in set.src_ids.chunks(16) {
        let out = translate_batch(params, chunk, src, tgt, beam, max_out_len)?;
        for ids in out {
            hyps.push(codec.decode_to_words(&ids));
        }
    }
    evaluate_bleu(&hyps, &set.refs)
}

// deterministic shuffled cycling over a data stream
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycler { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn gather(data: &[Vec<u32>], idx: &[usize]) -> Vec<Vec<u32>> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

/// Runs the steps in order, writing one checkpoint and one metrics file per
/// step into `out_dir`. Each step loads exactly its predecessor's checkpoint
/// (vocabulary hash verified). A failing step leaves earlier checkpoints in
/// place.
pub fn run_schedule(
    cfg: &ScheduleCfg,
    data: &PipelineData,
    codec: &mut TextCodec,
    dict: Option<&BilingualDictionary>,
    out_dir: &Path,
) -> Result<ScheduleReport> {
    run_schedule_from(cfg, data, codec, dict, out_dir, None)
}

/// Like [`run_schedule`], but the first step chains from `start_from`
/// instead of a fresh initialization.
pub fn run_schedule_from(
    cfg: &ScheduleCfg,
    data: &PipelineData,
    codec: &mut TextCodec,
    dict: Option<&BilingualDictionary>,
    out_dir: &Path,
    start_from: Option<&Path>,
) -> Result<ScheduleReport> {
    fs::create_dir_all(out_dir)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = codec.vocab.len();
    model_cfg.n_langs = data.langs.len();
    model_cfg.validate()?;
    let vocab_hash = codec.vocab.content_hash();

    let mut report = ScheduleReport::default();
    let mut prev_ckpt: Option<PathBuf> = start_from.map(Path::to_path_buf);
    for (i, step) in cfg.steps.iter().enumerate() {
        let mut params = match &prev_ckpt {
            Some(p) => load_checkpoint(p, Some(&vocab_hash))?.0,
            None => ModelParams::init(&model_cfg)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1_000 + i as u64);

        let mut step_report = run_one_step(cfg, data, codec, dict, step, &mut params, &mut rng)?;

        let ckpt_path = out_dir.join(format!("{}.ckpt", step.name));
        let meta = CkptMeta {
            cfg: model_cfg.clone(),
            vocab_hash: vocab_hash.clone(),
            step: step_report.rounds as u64,
            stage: step.name.clone(),
            langs: data.langs.clone(),
        };
        save_checkpoint(&params, &meta, &ckpt_path)?;
        step_report.checkpoint = ckpt_path;

        let mut metrics = String::from("round\tdev_bleu\n");
        for (r, b) in &step_report.history {
            metrics.push_str(&format!("{}\t{:.4}\n", r, b));
        }
        fs::write(out_dir.join(format!("{}.metrics.tsv", step.name)), metrics)?;

        prev_ckpt = Some(step_report.checkpoint.clone());
        report.steps.push(step_report);
    }

    let table = report.to_table();
    fs::write(out_dir.join("report.tsv"), table.to_tsv())?;
    fs::write(out_dir.join("report.txt"), table.render())?;
    Ok(report)
}

fn run_one_step(
    cfg: &ScheduleCfg,
    data: &PipelineData,
    codec: &mut TextCodec,
    dict: Option<&BilingualDictionary>,
    step: &StepSpec,
    params: &mut ModelParams,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport> {
    let mut report = StepReport {
        name: step.name.clone(),
        rounds: 0,
        history: Vec::new(),
        final_bleu: BTreeMap::new(),
        checkpoint: PathBuf::new(),
        transfer: None,
    };

    match &step.kind {
        StepKind::Transfer { scope } => {
            let dict = dict.ok_or_else(|| {
                Error::Config("schedule: transfer step requires a dictionary artifact".into())
            })?;
            report.transfer = Some(apply_transfer(params, dict, codec, data, &cfg.langs, *scope)?);
        }
        StepKind::Pretrain { .. } | StepKind::Unmt { .. } | StepKind::OfflineBtMt { .. } => {
            run_training_rounds(cfg, data, codec, step, params, rng, &mut report)?;
        }
    }

    // end-of-step evaluation: stopping direction plus its reverse
    let (s, t) = &step.stopping_metric;
    for (a, b) in [(s.clone(), t.clone()), (t.clone(), s.clone())] {
        if let Ok(set) = data.dev_set(&a, &b) {
            let bleu = eval_direction(params, codec, data, set, cfg.run.online_beam, cfg.run.max_out_len)?;
            report.final_bleu.insert(format!("{}->{}", a, b), bleu);
        }
    }
    Ok(report)
}

fn run_training_rounds(
    cfg: &ScheduleCfg,
    data: &PipelineData,
    codec: &mut TextCodec,
    step: &StepSpec,
    params: &mut ModelParams,
    rng: &mut ChaCha8Rng,
    report: &mut StepReport,
) -> Result<()> {
    let run = &cfg.run;
    let model_cfg = params.cfg.clone();
    let mut state = AdamState::new(&model_cfg);
    let mut drop_rng = if model_cfg.dropout > 0.0 {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(77_000);
        Some(r)
    } else {
        None
    };

    // offline generation happens once, on the step's initial parameters
    let offline_data = if let StepKind::OfflineBtMt { mono_lang, to_lang } = &step.kind {
        let l = data.lang_id(mono_lang)?;
        let m = data.lang_id(to_lang)?;
        let bt = offline_bt_generate(
            params,
            &data.mono_ids[mono_lang],
            l,
            m,
            run.offline_beam,
            run.max_out_len,
        )?;
        if bt.synthetic.is_empty() {
            return Err(Error::Data("offline BT produced no usable pairs".into()));
        }
        Some(bt)
    } else {
        None
    };

    // deterministic samplers per data stream
    let mut cyclers: BTreeMap<String, Cycler> = BTreeMap::new();
    match &step.kind {
        StepKind::Pretrain { ma_langs, mt_pairs } => {
            if ma_langs.is_empty() && mt_pairs.is_empty() {
                return Err(Error::Config(format!("step {}: no objectives", step.name)));
            }
            for l in ma_langs {
                cyclers.insert(format!("ma:{}", l), Cycler::new(data.mono_ids[l].len(), rng));
            }
            for (a, b) in mt_pairs {
                let n = parallel_for(data, a, b)?.0.len();
                cyclers.insert(format!("mt:{}-{}", a, b), Cycler::new(n, rng));
            }
        }
        StepKind::Unmt { ae_langs, bt_pairs, xbt } => {
            if ae_langs.is_empty() && bt_pairs.is_empty() && xbt.is_none() {
                return Err(Error::Config(format!("step {}: no objectives", step.name)));
            }
            for l in ae_langs {
                cyclers.insert(format!("ae:{}", l), Cycler::new(data.mono_ids[l].len(), rng));
            }
            for (a, b) in bt_pairs {
                cyclers.insert(format!("btl:{}", a), Cycler::new(data.mono_ids[a].len(), rng));
                cyclers.insert(format!("btm:{}", b), Cycler::new(data.mono_ids[b].len(), rng));
            }
            if let Some(x) = xbt {
                let n = parallel_for(data, &x.high, &x.related)?.0.len();
                cyclers.insert("xbt".into(), Cycler::new(n, rng));
            }
        }
        StepKind::OfflineBtMt { .. } => {
            let n = offline_data.as_ref().unwrap().synthetic.len();
            cyclers.insert("offline".into(), Cycler::new(n, rng));
        }
        StepKind::Transfer { .. } => unreachable!("transfer has no training rounds"),
    }

    for round in 0..step.max_steps {
        match &step.kind {
            StepKind::Pretrain { ma_langs, mt_pairs } => {
                // one summed update over the masking and translation batches
                let mut batches = Vec::new();
                for l in ma_langs {
                    let idx = cyclers
                        .get_mut(&format!("ma:{}", l))
                        .unwrap()
                        .take(run.batch_size, rng);
                    let sents = gather(&data.mono_ids[l], &idx);
                    let (sb, tb) = mass_batches(&sents, data.lang_id(l)?, &cfg.mask, &model_cfg, rng)?;
                    batches.push(ObjectiveBatch { tag: ObjectiveTag::Ma, src: sb, tgt: tb });
                }
                for (a, b) in mt_pairs {
                    let idx = cyclers
                        .get_mut(&format!("mt:{}-{}", a, b))
                        .unwrap()
                        .take(run.batch_size, rng);
                    let (src_all, tgt_all) = parallel_for(data, a, b)?;
                    let src = gather(src_all, &idx);
                    let tgt = gather(tgt_all, &idx);
                    let (sb, tb) = mt_batches(&src, &tgt, data.lang_id(a)?, data.lang_id(b)?, &model_cfg)?;
                    batches.push(ObjectiveBatch { tag: ObjectiveTag::Mt, src: sb, tgt: tb });
                    let (sb, tb) = mt_batches(&tgt, &src, data.lang_id(b)?, data.lang_id(a)?, &model_cfg)?;
                    batches.push(ObjectiveBatch { tag: ObjectiveTag::Mt, src: sb, tgt: tb });
                }
                if !batches.is_empty() {
                    train_step(params, &mut state, &batches, &cfg.optim, drop_rng.as_mut())?;
                }
            }
            StepKind::Unmt { ae_langs, bt_pairs, xbt } => {
                // AE update
                let mut batches = Vec::new();
                for l in ae_langs {
                    let idx = cyclers
                        .get_mut(&format!("ae:{}", l))
                        .unwrap()
                        .take(run.batch_size, rng);
                    let sents = gather(&data.mono_ids[l], &idx);
                    let (sb, tb) = noise_batches(&sents, data.lang_id(l)?, &cfg.noise, &model_cfg, rng)?;
                    batches.push(ObjectiveBatch { tag: ObjectiveTag::Ae, src: sb, tgt: tb });
                }
                if !batches.is_empty() {
                    train_step(params, &mut state, &batches, &cfg.optim, drop_rng.as_mut())?;
                }
                // online BT update, pairs alternating across rounds
                if !bt_pairs.is_empty() {
                    let (a, b) = &bt_pairs[round % bt_pairs.len()];
                    let idx_l = cyclers
                        .get_mut(&format!("btl:{}", a))
                        .unwrap()
                        .take(run.batch_size, rng);
                    let idx_m = cyclers
                        .get_mut(&format!("btm:{}", b))
                        .unwrap()
                        .take(run.batch_size, rng);
                    let mono_l = gather(&data.mono_ids[a], &idx_l);
                    let mono_m = gather(&data.mono_ids[b], &idx_m);
                    online_bt_round(
                        params,
                        &mut state,
                        &cfg.optim,
                        &mono_l,
                        &mono_m,
                        data.lang_id(a)?,
                        data.lang_id(b)?,
                        run.online_beam,
                        run.max_out_len,
                        drop_rng.as_mut(),
                    )?;
                }
                // XBT update
                if let Some(x) = xbt {
                    let idx = cyclers.get_mut("xbt").unwrap().take(run.batch_size, rng);
                    let (high_all, related_all) = parallel_for(data, &x.high, &x.related)?;
                    let high = gather(high_all, &idx);
                    let related = gather(related_all, &idx);
                    xbt_round(
                        params,
                        &mut state,
                        &cfg.optim,
                        &related,
                        &high,
                        data.lang_id(&x.related)?,
                        data.lang_id(&x.high)?,
                        data.lang_id(&x.pivot)?,
                        run.online_beam,
                        run.max_out_len,
                        drop_rng.as_mut(),
                    )?;
                }
            }
            StepKind::OfflineBtMt { mono_lang, to_lang } => {
                let bt = offline_data.as_ref().unwrap();
                let idx = cyclers.get_mut("offline").unwrap().take(run.batch_size, rng);
                let synth = gather(&bt.synthetic, &idx);
                let orig = gather(&bt.original, &idx);
                let to = data.lang_id(to_lang)?;
                let from = data.lang_id(mono_lang)?;
                // synthetic on the source side, natural data on the target
                let (sb, tb) = mt_batches(&synth, &orig, to, from, &model_cfg)?;
                let mut batches = vec![ObjectiveBatch { tag: ObjectiveTag::Mt, src: sb, tgt: tb }];
                let (sb, tb) = mt_batches(&orig, &synth, from, to, &model_cfg)?;
                batches.push(ObjectiveBatch { tag: ObjectiveTag::Mt, src: sb, tgt: tb });
                train_step(params, &mut state, &batches, &cfg.optim, drop_rng.as_mut())?;
            }
            StepKind::Transfer { .. } => unreachable!(),
        }
        report.rounds = round + 1;

        if (round + 1) % run.eval_every == 0 {
            let (s, t) = &step.stopping_metric;
            let set = data.dev_set(s, t)?;
            let bleu = eval_direction(params, codec, data, set, run.online_beam, run.max_out_len)?;
            report.history.push(((round + 1) as u64, bleu));
            if early_stop_check(&report.history, step.patience as u64) == StopDecision::Stop {
                break;
            }
        }
    }
    Ok(())
}

/// Looks up a parallel corpus in either key order, returning (a-side, b-side).
fn parallel_for<'a>(
    data: &'a PipelineData,
    a: &str,
    b: &str,
) -> Result<(&'a Vec<Vec<u32>>, &'a Vec<Vec<u32>>)> {
    if let Some((s, t)) = data.parallel_ids.get(&(a.to_string(), b.to_string())) {
        return Ok((s, t));
    }
    if let Some((s, t)) = data.parallel_ids.get(&(b.to_string(), a.to_string())) {
        return Ok((t, s));
    }
    Err(Error::Data(format!("no parallel corpus for {}-{}", a, b)))
}

/// In-memory vocabulary transfer: copies the related language's language
/// embedding onto the target's and the dictionary-resolved token rows.
pub fn apply_transfer(
    params: &mut ModelParams,
    dict: &BilingualDictionary,
    codec: &TextCodec,
    data: &PipelineData,
    langs: &LangRoles,
    scope: TransferScope,
) -> Result<TransferReport> {
    let from = data.lang_id(&langs.related)?;
    let to = data.lang_id(&langs.target)?;
    copy_language_embedding(params, from, to)?;
    let (pairs, skipped_mismatch) = word_dict_to_token_pairs(dict, &codec.vocab, &codec.bpe);
    let mut tr = copy_word_embeddings(params, &pairs, &codec.vocab, scope, &langs.target)?;
    tr.skipped_mismatch = skipped_mismatch;
    tr.language_row_copied = true;
    Ok(tr)
}

/// Trains monolingual embeddings for the related and target languages,
/// aligns target into related space by seeded self-learning, induces the
/// dictionary and applies the high-resource frequency filter.
pub fn induce_transfer_dictionary(
    data: &PipelineData,
    langs: &LangRoles,
    embed_cfg: &EmbedCfg,
    align_cfg: &AlignCfg,
    lex_cfg: &InductionCfg,
) -> Result<BilingualDictionary> {
    let related = train_skipgram(&data.raw_mono[&langs.related], embed_cfg)?;
    let mut tgt_cfg = embed_cfg.clone();
    tgt_cfg.seed = embed_cfg.seed.wrapping_add(1);
    let target = train_skipgram(&data.raw_mono[&langs.target], &tgt_cfg)?;

    let seed = seed_identical(&target.table, &related.table)?;
    let aligned = self_learn(&target.table, &related.table, &seed, align_cfg)?;
    let mapped = aligned.map.apply_table(&aligned.src_normalized)?;
    let dict = induce(&mapped, &aligned.tgt_normalized, lex_cfg)?;
    freq_filter(&dict, &data.raw_combined[&langs.high], lex_cfg.freq_threshold)
}
