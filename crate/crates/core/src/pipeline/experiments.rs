//! Experiment harness: transfer ablation (with zero-shot probe), the
//! back-translation ordering comparison, and the multilingual-vs-staged
//! pretraining baseline.

use super::{
    apply_transfer, eval_direction, run_schedule, run_schedule_from, LangRoles, PipelineData,
    ScheduleCfg, StepKind, StepSpec, TextCodec,
};
use crate::align::{seed_identical, self_learn, AlignCfg};
use crate::embed::{train_skipgram, EmbedCfg, EmbeddingTable};
use crate::error::{Error, Result};
use crate::lexicon::{freq_filter, induce, BilingualDictionary, InductionCfg, InductionMethod};
use crate::model::load_checkpoint;
use crate::report::Table;
use crate::transfer::TransferScope;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct ExperimentCfg {
    pub schedule: ScheduleCfg,
    pub embed: EmbedCfg,
    pub align: AlignCfg,
    pub lexicon: InductionCfg,
}

/// Trains and aligns the related/target embeddings once, so both induction
/// methods draw from identical candidate lists.
pub fn align_for_transfer(
    data: &PipelineData,
    langs: &LangRoles,
    embed_cfg: &EmbedCfg,
    align_cfg: &AlignCfg,
) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let related = train_skipgram(&data.raw_mono[&langs.related], embed_cfg)?;
    let mut tgt_cfg = embed_cfg.clone();
    tgt_cfg.seed = embed_cfg.seed.wrapping_add(1);
    let target = train_skipgram(&data.raw_mono[&langs.target], &tgt_cfg)?;
    let seed = seed_identical(&target.table, &related.table)?;
    let aligned = self_learn(&target.table, &related.table, &seed, align_cfg)?;
    let mapped = aligned.map.apply_table(&aligned.src_normalized)?;
    Ok((mapped, aligned.tgt_normalized))
}

fn dictionary_for(
    mapped: &EmbeddingTable,
    tgt_norm: &EmbeddingTable,
    data: &PipelineData,
    langs: &LangRoles,
    lex_cfg: &InductionCfg,
    method: InductionMethod,
) -> Result<BilingualDictionary> {
    let cfg = InductionCfg {
        method,
        ..lex_cfg.clone()
    };
    let dict = induce(mapped, tgt_norm, &cfg)?;
    freq_filter(&dict, &data.raw_combined[&langs.high], cfg.freq_threshold)
}

fn find_step(cfg: &ScheduleCfg, pred: impl Fn(&StepKind) -> bool, what: &str) -> Result<StepSpec> {
    cfg.steps
        .iter()
        .find(|s| pred(&s.kind))
        .cloned()
        .ok_or_else(|| Error::Config(format!("schedule has no {} step", what)))
}

fn transfer_scope(cfg: &ScheduleCfg) -> TransferScope {
    cfg.steps
        .iter()
        .find_map(|s| match s.kind {
            StepKind::Transfer { scope } => Some(scope),
            _ => None,
        })
        .unwrap_or(TransferScope::ExclusiveOnly)
}

/// Zero-shot and post-UNMT comparison of no transfer vs the simple and
/// Levenshtein induction methods. Shared pretraining and shared embedding
/// alignment; branches differ only in the dictionary applied.
pub fn transfer_ablation(
    data: &PipelineData,
    codec: &mut TextCodec,
    cfg: &ExperimentCfg,
    out_dir: &Path,
) -> Result<Table> {
    fs::create_dir_all(out_dir)?;
    let sched = &cfg.schedule;
    let langs = &sched.langs;

    let mut pre_cfg = sched.clone();
    pre_cfg.steps = sched.steps[0..2].to_vec();
    let pre = run_schedule(&pre_cfg, data, codec, None, &out_dir.join("shared_pretrain"))?;
    let ckpt2 = pre.steps.last().expect("two steps ran").checkpoint.clone();
    let vocab_hash = codec.vocab.content_hash();

    let (mapped, tgt_norm) = align_for_transfer(data, langs, &cfg.embed, &cfg.align)?;
    let scope = transfer_scope(sched);
    let unmt_step = find_step(sched, |k| matches!(k, StepKind::Unmt { .. }), "UNMT")?;

    let mut table = Table::new(vec![
        "transfer_method",
        "zero_shot_tgt_to_high",
        "step4_high_to_tgt",
        "step4_tgt_to_high",
    ]);
    for (label, method) in [
        ("none", None),
        ("simple", Some(InductionMethod::Simple)),
        ("levenshtein", Some(InductionMethod::Levenshtein)),
    ] {
        let dict = method
            .map(|m| dictionary_for(&mapped, &tgt_norm, data, langs, &cfg.lexicon, m))
            .transpose()?;

        let (mut params, meta) = load_checkpoint(&ckpt2, Some(&vocab_hash))?;
        if let Some(d) = &dict {
            apply_transfer(&mut params, d, codec, data, langs, scope)?;
        }
        let zero_shot = eval_direction(
            &params,
            codec,
            data,
            data.test_set(&langs.target, &langs.high)?,
            sched.run.online_beam,
            sched.run.max_out_len,
        )?;

        let branch_dir = out_dir.join(format!("branch_{}", label));
        fs::create_dir_all(&branch_dir)?;
        let start = branch_dir.join("start.ckpt");
        crate::model::save_checkpoint(&params, &meta, &start)?;

        let mut branch_cfg = sched.clone();
        branch_cfg.steps = vec![unmt_step.clone()];
        let report = run_schedule_from(&branch_cfg, data, codec, None, &branch_dir, Some(&start))?;
        let final_ckpt = &report.steps.last().expect("one step").checkpoint;
        let (final_params, _) = load_checkpoint(final_ckpt, Some(&vocab_hash))?;
        let high_tgt = eval_direction(
            &final_params,
            codec,
            data,
            data.test_set(&langs.high, &langs.target)?,
            sched.run.online_beam,
            sched.run.max_out_len,
        )?;
        let tgt_high = eval_direction(
            &final_params,
            codec,
            data,
            data.test_set(&langs.target, &langs.high)?,
            sched.run.online_beam,
            sched.run.max_out_len,
        )?;
        table.push(vec![
            label.to_string(),
            format!("{:.2}", zero_shot),
            format!("{:.2}", high_tgt),
            format!("{:.2}", tgt_high),
        ]);
    }
    fs::write(out_dir.join("transfer_ablation.tsv"), table.to_tsv())?;
    fs::write(out_dir.join("transfer_ablation.txt"), table.render())?;
    Ok(table)
}

/// Runs the four back-translation orderings from one shared post-transfer
/// checkpoint: offline only, offline then online, online only, online then
/// offline. The step-3 zero-shot into-high baseline rides along as an extra
/// row.
pub fn bt_order_experiment(
    data: &PipelineData,
    codec: &mut TextCodec,
    cfg: &ExperimentCfg,
    out_dir: &Path,
) -> Result<Table> {
    fs::create_dir_all(out_dir)?;
    let sched = &cfg.schedule;
    let langs = &sched.langs;
    let vocab_hash = codec.vocab.content_hash();

    let (mapped, tgt_norm) = align_for_transfer(data, langs, &cfg.embed, &cfg.align)?;
    let dict = dictionary_for(
        &mapped,
        &tgt_norm,
        data,
        langs,
        &cfg.lexicon,
        cfg.lexicon.method,
    )?;

    let mut pre_cfg = sched.clone();
    pre_cfg.steps = sched.steps[0..3].to_vec();
    let pre = run_schedule(&pre_cfg, data, codec, Some(&dict), &out_dir.join("shared_steps123"))?;
    let ckpt3 = pre.steps.last().expect("three steps ran").checkpoint.clone();

    let (params3, _) = load_checkpoint(&ckpt3, Some(&vocab_hash))?;
    let baseline = eval_direction(
        &params3,
        codec,
        data,
        data.test_set(&langs.target, &langs.high)?,
        sched.run.online_beam,
        sched.run.max_out_len,
    )?;

    let unmt = find_step(sched, |k| matches!(k, StepKind::Unmt { .. }), "UNMT")?;
    let offline = find_step(sched, |k| matches!(k, StepKind::OfflineBtMt { .. }), "offline BT")?;
    let variants: Vec<(&str, Vec<StepSpec>)> = vec![
        ("offline", vec![offline.clone()]),
        ("offline_then_online", vec![offline.clone(), unmt.clone()]),
        ("online", vec![unmt.clone()]),
        ("online_then_offline", vec![unmt, offline]),
    ];

    let mut table = Table::new(vec!["back_translation", "high_to_tgt", "tgt_to_high"]);
    for (label, steps) in variants {
        let mut branch_cfg = sched.clone();
        branch_cfg.steps = steps;
        let branch_dir = out_dir.join(format!("branch_{}", label));
        let report = run_schedule_from(&branch_cfg, data, codec, None, &branch_dir, Some(&ckpt3))?;
        let final_ckpt = &report.steps.last().expect("steps ran").checkpoint;
        let (final_params, _) = load_checkpoint(final_ckpt, Some(&vocab_hash))?;
        let high_tgt = eval_direction(
            &final_params,
            codec,
            data,
            data.test_set(&langs.high, &langs.target)?,
            sched.run.online_beam,
            sched.run.max_out_len,
        )?;
        let tgt_high = eval_direction(
            &final_params,
            codec,
            data,
            data.test_set(&langs.target, &langs.high)?,
            sched.run.online_beam,
            sched.run.max_out_len,
        )?;
        table.push(vec![
            label.to_string(),
            format!("{:.2}", high_tgt),
            format!("{:.2}", tgt_high),
        ]);
    }
    table.push(vec![
        "step3_zero_shot".to_string(),
        "-".to_string(),
        format!("{:.2}", baseline),
    ]);
    fs::write(out_dir.join("bt_order.tsv"), table.to_tsv())?;
    fs::write(out_dir.join("bt_order.txt"), table.render())?;
    Ok(table)
}

/// Multilingual-from-the-start pretraining (same total budget as the two
/// staged steps) against the staged two-languages-at-a-time scheme, each
/// followed by UNMT with and without vocabulary transfer. Also reports the
/// auxiliary pretraining directions.
pub fn multilingual_baseline(
    data: &PipelineData,
    codec: &mut TextCodec,
    cfg: &ExperimentCfg,
    out_dir: &Path,
) -> Result<(Table, Table)> {
    fs::create_dir_all(out_dir)?;
    let sched = &cfg.schedule;
    let langs = &sched.langs;
    let vocab_hash = codec.vocab.content_hash();
    let beam = sched.run.online_beam;
    let max_out = sched.run.max_out_len;

    // staged prefix
    let mut staged_cfg = sched.clone();
    staged_cfg.steps = sched.steps[0..2].to_vec();
    let staged = run_schedule(&staged_cfg, data, codec, None, &out_dir.join("staged"))?;
    let ckpt_step1 = staged.steps[0].checkpoint.clone();
    let ckpt_staged = staged.steps[1].checkpoint.clone();

    // multilingual pretraining with the same total round budget
    let budget: usize = sched.steps[0..2].iter().map(|s| s.max_steps).sum();
    let patience = sched.steps[0].patience;
    let multi_step = StepSpec {
        name: "multilingual_pretrain".into(),
        kind: StepKind::Pretrain {
            ma_langs: langs.all(),
            mt_pairs: vec![
                (langs.high.clone(), langs.distant.clone()),
                (langs.high.clone(), langs.related.clone()),
            ],
        },
        max_steps: budget,
        patience,
        stopping_metric: (langs.related.clone(), langs.high.clone()),
    };
    assert_eq!(
        multi_step.max_steps,
        sched.steps[0].max_steps + sched.steps[1].max_steps
    );
    let mut multi_cfg = sched.clone();
    multi_cfg.steps = vec![multi_step];
    let multi = run_schedule(&multi_cfg, data, codec, None, &out_dir.join("multilingual"))?;
    let ckpt_multi = multi.steps[0].checkpoint.clone();

    // auxiliary-direction BLEU during pretraining
    let mut aux = Table::new(vec!["model", "direction", "test_bleu"]);
    {
        let (p1, _) = load_checkpoint(&ckpt_step1, Some(&vocab_hash))?;
        let (p2, _) = load_checkpoint(&ckpt_staged, Some(&vocab_hash))?;
        let (pm, _) = load_checkpoint(&ckpt_multi, Some(&vocab_hash))?;
        let pairs_ac = [
            (langs.high.clone(), langs.distant.clone()),
            (langs.distant.clone(), langs.high.clone()),
        ];
        let pairs_ab = [
            (langs.high.clone(), langs.related.clone()),
            (langs.related.clone(), langs.high.clone()),
        ];
        for (s, t) in pairs_ac.iter().chain(&pairs_ab) {
            let b = eval_direction(&pm, codec, data, data.test_set(s, t)?, beam, max_out)?;
            aux.push(vec!["multilingual".into(), format!("{}->{}", s, t), format!("{:.2}", b)]);
        }
        for (s, t) in &pairs_ac {
            let b = eval_direction(&p1, codec, data, data.test_set(s, t)?, beam, max_out)?;
            aux.push(vec!["staged_step1".into(), format!("{}->{}", s, t), format!("{:.2}", b)]);
        }
        for (s, t) in &pairs_ab {
            let b = eval_direction(&p2, codec, data, data.test_set(s, t)?, beam, max_out)?;
            aux.push(vec!["staged_step2".into(), format!("{}->{}", s, t), format!("{:.2}", b)]);
        }
    }

    // UNMT on top of each base, with and without transfer
    let (mapped, tgt_norm) = align_for_transfer(data, langs, &cfg.embed, &cfg.align)?;
    let dict = dictionary_for(&mapped, &tgt_norm, data, langs, &cfg.lexicon, cfg.lexicon.method)?;
    let scope = transfer_scope(sched);
    let unmt_step = find_step(sched, |k| matches!(k, StepKind::Unmt { .. }), "UNMT")?;

    let mut table = Table::new(vec!["model", "vocabulary_transfer", "high_to_tgt", "tgt_to_high"]);
    for (model_label, base_ckpt) in [("multilingual", &ckpt_multi), ("staged", &ckpt_staged)] {
        for vt in [false, true] {
            let (mut params, meta) = load_checkpoint(base_ckpt, Some(&vocab_hash))?;
            if vt {
                apply_transfer(&mut params, &dict, codec, data, langs, scope)?;
            }
            let branch_dir = out_dir.join(format!(
                "branch_{}_{}",
                model_label,
                if vt { "vt" } else { "novt" }
            ));
            fs::create_dir_all(&branch_dir)?;
            let start = branch_dir.join("start.ckpt");
            crate::model::save_checkpoint(&params, &meta, &start)?;
            let mut branch_cfg = sched.clone();
            branch_cfg.steps = vec![unmt_step.clone()];
            let report = run_schedule_from(&branch_cfg, data, codec, None, &branch_dir, Some(&start))?;
            let final_ckpt = &report.steps.last().expect("one step").checkpoint;
            let (fp, _) = load_checkpoint(final_ckpt, Some(&vocab_hash))?;
            let high_tgt =
                eval_direction(&fp, codec, data, data.test_set(&langs.high, &langs.target)?, beam, max_out)?;
            let tgt_high =
                eval_direction(&fp, codec, data, data.test_set(&langs.target, &langs.high)?, beam, max_out)?;
            table.push(vec![
                model_label.to_string(),
                if vt { "yes" } else { "no" }.to_string(),
                format!("{:.2}", high_tgt),
                format!("{:.2}", tgt_high),
            ]);
        }
    }
    fs::write(out_dir.join("multilingual.tsv"), table.to_tsv())?;
    fs::write(out_dir.join("multilingual.txt"), table.render())?;
    fs::write(out_dir.join("multilingual_aux.tsv"), aux.to_tsv())?;
    fs::write(out_dir.join("multilingual_aux.txt"), aux.render())?;
    Ok((table, aux))
}
