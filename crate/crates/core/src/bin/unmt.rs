//! Command-line front end: corpus generation, BPE, embeddings, alignment,
//! dictionary induction, vocabulary transfer, schedule training, decoding,
//! evaluation and the experiment harness.

use clap::{Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use unmt_core::align::{normalize_table, self_learn, seed_identical, OrthoMap, SeedLexicon};
use unmt_core::config::FullConfig;
use unmt_core::corpus::{
    bpe_apply, bpe_learn, gen_synth_family, tokenize, BpeModel, Corpus, SynthFamily, Vocab,
};
use unmt_core::embed::{train_skipgram, EmbeddingTable};
use unmt_core::error::{Error, Result};
use unmt_core::lexicon::{freq_filter, induce, BilingualDictionary};
use unmt_core::model::{load_checkpoint, translate};
use unmt_core::pipeline::{
    bt_order_experiment, evaluate_bleu, induce_transfer_dictionary, multilingual_baseline,
    offline_bt_generate, run_schedule_from, transfer_ablation, StepKind, StepSpec, TextCodec,
    Workspace,
};
use unmt_core::report::Table;
use unmt_core::transfer::{transfer_checkpoint, TransferScope};

#[derive(Parser)]
#[command(name = "unmt", about = "Desk-scale unsupervised MT toolkit", version)]
struct Cli {
    /// JSON configuration document; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic language family with gold artifacts.
    SynthGen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Tokenize text: whitespace split plus punctuation peeling.
    Tokenize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Learn joint BPE merges over one corpus file per language.
    BpeLearn {
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        num_merges: Option<usize>,
        #[arg(long)]
        sample_per_lang: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Segment a text file with a learned BPE model.
    BpeApply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train skip-gram word embeddings on one corpus.
    EmbedTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Align source embeddings into the target space (seeded self-learning).
    Align {
        #[arg(long)]
        src_emb: PathBuf,
        #[arg(long)]
        tgt_emb: PathBuf,
        #[arg(long)]
        out_map: PathBuf,
        /// Also write the self-learning dictionary.
        #[arg(long)]
        out_dict: Option<PathBuf>,
    },
    /// Induce the bilingual dictionary from aligned embeddings.
    InduceDict {
        #[arg(long)]
        src_emb: PathBuf,
        #[arg(long)]
        tgt_emb: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// High-resource corpus for the frequency filter.
        #[arg(long)]
        freq_corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy language/token embeddings into an unseen language's rows.
    Transfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
        /// exclusive | all
        #[arg(long, default_value = "exclusive")]
        scope: String,
        #[arg(long)]
        from_lang: String,
        #[arg(long)]
        to_lang: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the training schedule (all steps, or one step chained onto the
    /// previous step's checkpoint).
    Train {
        /// Config document holding the schedule (overrides --config).
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// 1-based step number; all steps when omitted.
        #[arg(long)]
        step: Option<usize>,
    },
    /// Offline back-translation: decode a monolingual file into synthetic
    /// parallel data.
    BtGenerate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        src_lang: String,
        #[arg(long)]
        tgt_lang: String,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 48)]
        max_len: usize,
        /// Generated side.
        #[arg(long)]
        out_synthetic: PathBuf,
        /// Original side, aligned line by line.
        #[arg(long)]
        out_original: PathBuf,
    },
    /// Translate a file with a trained checkpoint.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        src_lang: String,
        #[arg(long)]
        tgt_lang: String,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 48)]
        max_len: usize,
        /// stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Run one named experiment.
    Experiment {
        /// bt-order | multilingual | transfer-ablation
        #[arg(long)]
        name: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render a TSV report as an aligned table.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let config = match &cli.config {
        Some(p) => match FullConfig::load(p) {
            Ok(c) => c,
            Err(e) => fail(e),
        },
        None => FullConfig::default(),
    };
    if let Err(e) = run(cli, config) {
        fail(e)
    }
}

fn fail(e: Error) -> ! {
    eprintln!("error: {}", e);
    std::process::exit(e.exit_code());
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.to_string())
        .collect())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut body = lines.join("\n");
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

fn load_codec(vocab: &Path, bpe: &Path) -> Result<TextCodec> {
    Ok(TextCodec::new(BpeModel::load(bpe)?, Vocab::load(vocab)?))
}

fn ckpt_lang_id(langs: &[String], code: &str) -> Result<u32> {
    langs
        .iter()
        .position(|l| l == code)
        .map(|i| i as u32)
        .ok_or_else(|| Error::Config(format!("language '{}' not in checkpoint ({:?})", code, langs)))
}

/// Loads the family under cfg.corpus.dir, generating it first if absent.
fn ensure_family(cfg: &FullConfig) -> Result<SynthFamily> {
    let dir = &cfg.corpus.dir;
    if dir.join("family.json").exists() {
        SynthFamily::load_from_dir(dir)
    } else {
        let family = gen_synth_family(&cfg.corpus.synth)?;
        family.save_to_dir(dir)?;
        eprintln!("generated synthetic family in {}", dir.display());
        Ok(family)
    }
}

fn run(cli: Cli, cfg: FullConfig) -> Result<()> {
    match cli.cmd {
        Cmd::SynthGen { seed, out_dir } => {
            let mut spec = cfg.corpus.synth.clone();
            if let Some(s) = seed {
                spec.seed = s;
            }
            let dir = out_dir.unwrap_or_else(|| cfg.corpus.dir.clone());
            let family = gen_synth_family(&spec)?;
            family.save_to_dir(&dir)?;
            println!(
                "family written to {} (langs {:?}, gold dictionary {} entries)",
                dir.display(),
                family.mono.keys().collect::<Vec<_>>(),
                family.gold_dict.len()
            );
        }
        Cmd::Tokenize { input, output } => {
            let out: Vec<String> = read_lines(&input)?
                .iter()
                .map(|l| tokenize(l).join(" "))
                .collect();
            write_lines(&output, &out)?;
        }
        Cmd::BpeLearn {
            inputs,
            num_merges,
            sample_per_lang,
            seed,
            output,
        } => {
            let corpora: Vec<Corpus> = inputs
                .iter()
                .enumerate()
                .map(|(i, p)| Corpus::load(&format!("lang{}", i), p))
                .collect::<Result<_>>()?;
            let refs: Vec<&Corpus> = corpora.iter().collect();
            let model = bpe_learn(
                &refs,
                num_merges.unwrap_or(cfg.bpe.num_merges),
                sample_per_lang.unwrap_or(cfg.bpe.sample_per_lang),
                seed.unwrap_or(cfg.bpe.seed),
            )?;
            model.save(&output)?;
            println!("learned {} merges -> {}", model.merges.len(), output.display());
        }
        Cmd::BpeApply { model, input, output } => {
            let model = BpeModel::load(&model)?;
            let out: Vec<String> = read_lines(&input)?
                .iter()
                .map(|l| bpe_apply(&model, &tokenize(l)).join(" "))
                .collect();
            write_lines(&output, &out)?;
        }
        Cmd::EmbedTrain { input, lang, output } => {
            let corpus = Corpus::load(&lang, &input)?;
            let run = train_skipgram(&corpus, &cfg.embed)?;
            run.table.save(&output)?;
            println!(
                "trained {} vectors (dim {}) on {} tokens -> {}",
                run.table.len(),
                run.table.dim,
                run.table.trained_on_tokens,
                output.display()
            );
        }
        Cmd::Align {
            src_emb,
            tgt_emb,
            out_map,
            out_dict,
        } => {
            let src = EmbeddingTable::load("src", &src_emb)?;
            let tgt = EmbeddingTable::load("tgt", &tgt_emb)?;
            let seed = seed_identical(&src, &tgt)?;
            let res = self_learn(&src, &tgt, &seed, &cfg.align)?;
            res.map.save(&out_map)?;
            println!(
                "aligned with {} seed pairs; induced dictionary {} entries; orthogonality defect {:.2e}",
                seed.len(),
                res.dictionary.len(),
                res.map.orthogonality_defect()
            );
            if let Some(p) = out_dict {
                SeedLexicon::new(res.dictionary.clone())?.save(&p)?;
            }
        }
        Cmd::InduceDict {
            src_emb,
            tgt_emb,
            map,
            freq_corpus,
            out,
        } => {
            let src = normalize_table(&EmbeddingTable::load("src", &src_emb)?)?;
            let tgt = normalize_table(&EmbeddingTable::load("tgt", &tgt_emb)?)?;
            let map = OrthoMap::load(&map)?;
            let mapped = map.apply_table(&src)?;
            let mut dict = induce(&mapped, &tgt, &cfg.lexicon)?;
            let before = dict.len();
            if let Some(p) = freq_corpus {
                let de = Corpus::load("high", &p)?;
                dict = freq_filter(&dict, &de, cfg.lexicon.freq_threshold)?;
            }
            dict.save(&out)?;
            println!("{} (filtered {} of {})", dict.summary(), before - dict.len(), before);
        }
        Cmd::Transfer {
            ckpt,
            dict,
            vocab,
            bpe,
            scope,
            from_lang,
            to_lang,
            out,
        } => {
            let scope = match scope.as_str() {
                "exclusive" => TransferScope::ExclusiveOnly,
                "all" => TransferScope::AllDictionary,
                other => {
                    return Err(Error::Config(format!(
                        "unknown scope '{}'; use exclusive or all",
                        other
                    )))
                }
            };
            let vocab = Vocab::load(&vocab)?;
            let bpe = BpeModel::load(&bpe)?;
            let dict = BilingualDictionary::load(&dict, cfg.lexicon.method)?;
            let report =
                transfer_checkpoint(&ckpt, &out, &dict, &vocab, &bpe, scope, &from_lang, &to_lang)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Train { schedule, step } => {
            let cfg = match schedule {
                Some(p) => FullConfig::load(&p)?,
                None => cfg,
            };
            let family = ensure_family(&cfg)?;
            let sched = cfg.schedule_cfg();
            let Workspace { mut codec, data } = Workspace::prepare(&family, &cfg.bpe, sched.model.max_len)?;
            let out_dir = cfg.schedule.out_dir.clone();

            let (steps, start_from) = match step {
                None => (sched.steps.clone(), None),
                Some(n) => {
                    if n == 0 || n > sched.steps.len() {
                        return Err(Error::Config(format!(
                            "--step {} out of range 1..={}",
                            n,
                            sched.steps.len()
                        )));
                    }
                    let start = if n > 1 {
                        let prev = &sched.steps[n - 2];
                        let p = out_dir.join(format!("{}.ckpt", prev.name));
                        if !p.exists() {
                            return Err(Error::Config(format!(
                                "step {} chains from {}; run the previous step first",
                                n,
                                p.display()
                            )));
                        }
                        Some(p)
                    } else {
                        None
                    };
                    (vec![sched.steps[n - 1].clone()], start)
                }
            };
            let needs_dict = steps
                .iter()
                .any(|s: &StepSpec| matches!(s.kind, StepKind::Transfer { .. }));
            let dict = if needs_dict {
                Some(match &cfg.schedule.dictionary {
                    Some(p) => BilingualDictionary::load(p, cfg.lexicon.method)?,
                    None => {
                        eprintln!("inducing transfer dictionary (no dictionary path configured)");
                        induce_transfer_dictionary(
                            &data,
                            &sched.langs,
                            &cfg.embed,
                            &cfg.align,
                            &cfg.lexicon,
                        )?
                    }
                })
            } else {
                None
            };
            let mut run_cfg = sched.clone();
            run_cfg.steps = steps;
            let report = run_schedule_from(
                &run_cfg,
                &data,
                &mut codec,
                dict.as_ref(),
                &out_dir,
                start_from.as_deref(),
            )?;
            codec.bpe.save(&out_dir.join("bpe.txt"))?;
            codec.vocab.save(&out_dir.join("vocab.tsv"))?;
            println!("{}", report.to_table().render());
        }
        Cmd::BtGenerate {
            ckpt,
            vocab,
            bpe,
            input,
            src_lang,
            tgt_lang,
            beam,
            max_len,
            out_synthetic,
            out_original,
        } => {
            let mut codec = load_codec(&vocab, &bpe)?;
            let (params, meta) = load_checkpoint(&ckpt, Some(&codec.vocab.content_hash()))?;
            let src_id = ckpt_lang_id(&meta.langs, &src_lang)?;
            let tgt_id = ckpt_lang_id(&meta.langs, &tgt_lang)?;
            let mono: Vec<Vec<u32>> = read_lines(&input)?
                .iter()
                .map(|l| codec.encode_line(l))
                .collect();
            let bt = offline_bt_generate(&params, &mono, src_id, tgt_id, beam, max_len)?;
            let syn: Vec<String> = bt
                .synthetic
                .iter()
                .map(|ids| codec.decode_to_words(ids).join(" "))
                .collect();
            let orig: Vec<String> = bt
                .original
                .iter()
                .map(|ids| codec.decode_to_words(ids).join(" "))
                .collect();
            write_lines(&out_synthetic, &syn)?;
            write_lines(&out_original, &orig)?;
            println!(
                "generated {} pairs ({} skipped) -> {}, {}",
                syn.len(),
                bt.skipped,
                out_synthetic.display(),
                out_original.display()
            );
        }
        Cmd::Translate {
            ckpt,
            vocab,
            bpe,
            input,
            src_lang,
            tgt_lang,
            beam,
            max_len,
            output,
        } => {
            let mut codec = load_codec(&vocab, &bpe)?;
            let (params, meta) = load_checkpoint(&ckpt, Some(&codec.vocab.content_hash()))?;
            let src_id = ckpt_lang_id(&meta.langs, &src_lang)?;
            let tgt_id = ckpt_lang_id(&meta.langs, &tgt_lang)?;
            let mut out = Vec::new();
            for line in read_lines(&input)? {
                let ids = codec.encode_line(&line);
                if ids.is_empty() {
                    out.push(String::new());
                    continue;
                }
                let hyp = translate(&params, &ids, src_id, tgt_id, beam, max_len)?;
                out.push(codec.decode_to_words(&hyp).join(" "));
            }
            match output {
                Some(p) => write_lines(&p, &out)?,
                None => {
                    for l in &out {
                        println!("{}", l);
                    }
                }
            }
        }
        Cmd::Evaluate { hyp, reference } => {
            let hyps: Vec<Vec<String>> = read_lines(&hyp)?.iter().map(|l| tokenize(l)).collect();
            let refs: Vec<Vec<String>> =
                read_lines(&reference)?.iter().map(|l| tokenize(l)).collect();
            let bleu = evaluate_bleu(&hyps, &refs)?;
            println!("BLEU = {:.2}", bleu);
        }
        Cmd::Experiment { name, out_dir } => {
            let family = ensure_family(&cfg)?;
            let exp = cfg.experiment_cfg();
            let Workspace { mut codec, data } =
                Workspace::prepare(&family, &cfg.bpe, exp.schedule.model.max_len)?;
            let base = out_dir.unwrap_or_else(|| cfg.experiment.out_dir.clone());
            match name.as_str() {
                "transfer-ablation" => {
                    let t =
                        transfer_ablation(&data, &mut codec, &exp, &base.join("transfer_ablation"))?;
                    println!("{}", t.render());
                }
                "bt-order" => {
                    let t = bt_order_experiment(&data, &mut codec, &exp, &base.join("bt_order"))?;
                    println!("{}", t.render());
                }
                "multilingual" => {
                    let (t, aux) =
                        multilingual_baseline(&data, &mut codec, &exp, &base.join("multilingual"))?;
                    println!("{}", t.render());
                    println!("{}", aux.render());
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown experiment '{}'; use bt-order, multilingual or transfer-ablation",
                        other
                    )))
                }
            }
        }
        Cmd::Report { input } => {
            let table = Table::from_tsv(&fs::read_to_string(&input)?)?;
            println!("{}", table.render());
        }
    }
    Ok(())
}
