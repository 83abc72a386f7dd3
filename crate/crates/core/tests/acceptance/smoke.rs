use std::path::Path;
use std::time::Instant;

use kgdial::corpus::{generate_synthetic_corpus, DialogueLog, KnowledgeBase, SyntheticSpec};
use kgdial::detection::{detect, evaluate_detection, format_detection_input};
use kgdial::evalmetrics::MetricReport;
use kgdial::generation::{generate, generation_inputs, train_generator, GenerationInput, ResponsePart};
use kgdial::neural::{MiniModel, Vocab};
use kgdial::pipeline::{
    pipeline_vocab, run_pipeline, train_detect_model, train_generator_model, train_rank_model, train_three_step_model,
    ModelSettings, PipelineConfig, PipelineModels, DETECT, GENERATE, GREETING, RANK, THREE_STEP,
};
use kgdial::selection::{ensemble_select, evaluate_selection, three_step_select, RankScorer, SelectionResult, ThreeStepScorer};
use kgdial::textsim::tokenize;

use crate::Outcome;

fn is_fact(token: &str) -> bool {
    let b = token.as_bytes();
    b.len() == 4 && b[..2].iter().all(u8::is_ascii_lowercase) && b[2..].iter().all(u8::is_ascii_digit)
}

fn smoke_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.model = ModelSettings {
        d_model: 32,
        n_heads: 4,
        n_layers: 2,
        d_ff: 64,
        max_seq: 160,
        ..ModelSettings::default()
    };
    cfg.train.seed = 1;
    cfg.train.lr = 1e-3;
    cfg.train.epochs = usize::MAX / 2;
    cfg.train.max_steps = Some(300);
    cfg.decode.max_len = 24;
    cfg
}

fn seeking(dialogues: &[DialogueLog]) -> Vec<&DialogueLog> {
    dialogues.iter().filter(|d| d.target() == Some(true)).collect()
}

fn recall_at_1(preds: &[SelectionResult], dialogues: &[&DialogueLog]) -> f64 {
    let golds: Vec<_> = dialogues.iter().map(|d| d.gold_knowledge().unwrap().clone()).collect();
    evaluate_selection(preds, &golds).unwrap().metrics.recall_at_1.unwrap()
}

fn answer<'a>(kb: &'a KnowledgeBase, d: &DialogueLog) -> &'a str {
    &kb.get(d.gold_knowledge().unwrap()).unwrap().answer
}

/// Generator over a vocabulary without the fact tokens, so that only
/// copying can reproduce them.
fn fact_free_generator(
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    dialogues: &[DialogueLog],
    part: ResponsePart,
    copy: bool,
) -> MiniModel {
    let full = pipeline_vocab(kb, dialogues, cfg.model.vocab_min_freq);
    let vocab = Vocab::from_words(full.tokens().iter().skip(7).filter(|t| !is_fact(t)).map(String::as_str));
    let mut m = MiniModel::new(cfg.model.model_config(cfg.train.seed), vocab).unwrap();
    let inputs = generation_inputs(dialogues, kb, part).unwrap();
    train_generator(&mut m, &inputs, copy, &cfg.loss, &cfg.train.train_config()).unwrap();
    m
}

pub fn overfit() -> Outcome {
    let start = Instant::now();
    let (kb, dialogues) = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
    let cfg = smoke_config();
    let targets = seeking(&dialogues);

    let (det, _) = train_detect_model(&cfg, &kb, &dialogues).unwrap();
    let f1 = evaluate_detection(&det, &dialogues, &kb, &cfg.retrieval).unwrap().f1;

    let (rank, _) = train_rank_model(&cfg, &kb, &dialogues).unwrap();
    let mut long = cfg.clone();
    long.train.max_steps = Some(2000);
    let (three, _) = train_three_step_model(&long, &kb, &dialogues).unwrap();
    let (mut p_rank, mut p_three, mut p_ens) = (Vec::new(), Vec::new(), Vec::new());
    for d in &targets {
        let a = RankScorer::new(&rank, d, &kb, &cfg.retrieval);
        p_rank.push(a.selection().unwrap());
        p_three.push(three_step_select(&three, d, &kb).unwrap());
        let b = ThreeStepScorer {
            model: &three,
            dialogue: d,
            kb: &kb,
        };
        p_ens.push(ensemble_select(&a, &b, &kb).unwrap().selection);
    }
    let (r_rank, r_three, r_ens) = (
        recall_at_1(&p_rank, &targets),
        recall_at_1(&p_three, &targets),
        recall_at_1(&p_ens, &targets),
    );

    let mut gcfg = cfg.clone();
    gcfg.train.lr = 3e-3;
    let knowledge = fact_free_generator(&gcfg, &kb, &dialogues, ResponsePart::Knowledge, true);
    let greeting = fact_free_generator(&gcfg, &kb, &dialogues, ResponsePart::Greeting, false);
    let plain = fact_free_generator(&gcfg, &kb, &dialogues, ResponsePart::Knowledge, false);
    let mut no_copy = gcfg.generation();
    no_copy.decode.copy = false;

    let mut pairs = Vec::new();
    let (mut facts, mut with_copy, mut without_copy) = (0, 0, 0);
    for d in &targets {
        let ans = answer(&kb, d);
        let input = GenerationInput::from_dialogue(d, ans, None);
        let out = generate(&knowledge, Some(&greeting), &input, ans, &gcfg.generation()).unwrap();
        let gold = tokenize(d.gold_response().unwrap()).tokens;
        let produced = tokenize(&out.response).tokens;
        if let Some(fact) = gold.iter().find(|t| is_fact(t)) {
            facts += 1;
            with_copy += usize::from(produced.contains(fact));
            let alt = generate(&plain, None, &input, ans, &no_copy).unwrap();
            without_copy += usize::from(tokenize(&alt.response).tokens.contains(fact));
        }
        pairs.push((produced, gold));
    }
    let bleu4 = MetricReport::default().with_text(&pairs).bleu_4.unwrap();
    let secs = start.elapsed().as_secs_f64();

    let pass = f1 == 1.0
        && r_rank >= 0.95
        && r_three >= 0.95
        && r_ens >= r_rank.max(r_three)
        && bleu4 >= 0.5
        && with_copy > without_copy
        && secs < 900.0;
    Outcome::new(
        pass,
        format!(
            "{} dialogues, {} knowledge-seeking; detection F1 {f1:.3}; Recall@1 rank {r_rank:.3}, three-step {r_three:.3}, ensemble {r_ens:.3}; \
             BLEU-4 {bleu4:.3}; fact tokens reproduced {with_copy}/{facts} with copy vs {without_copy}/{facts} without; {secs:.0}s total",
            dialogues.len(),
            targets.len()
        ),
    )
}

fn tiny_config(dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.model = ModelSettings {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        max_seq: 128,
        ..ModelSettings::default()
    };
    cfg.paths.checkpoints = dir.to_path_buf();
    cfg.train.seed = 3;
    cfg.train.lr = 1e-3;
    cfg.train.epochs = usize::MAX / 2;
    cfg.decode.max_len = 8;
    cfg
}

/// Trains and saves every checkpoint, then runs the pipeline from disk.
/// Returns checkpoint bytes and the serialized output.
fn end_to_end(dir: &Path, kb: &KnowledgeBase, dialogues: &[DialogueLog]) -> (Vec<u8>, String, PipelineConfig) {
    let mut cfg = tiny_config(dir);
    cfg.train.max_steps = Some(200);
    let (det, _) = train_detect_model(&cfg, kb, dialogues).unwrap();
    cfg.train.max_steps = Some(20);
    let (rank, _) = train_rank_model(&cfg, kb, dialogues).unwrap();
    let (three, _) = train_three_step_model(&cfg, kb, dialogues).unwrap();
    let (gen, _) = train_generator_model(&cfg, kb, dialogues, ResponsePart::Knowledge, true).unwrap();
    let (greet, _) = train_generator_model(&cfg, kb, dialogues, ResponsePart::Greeting, false).unwrap();
    let mut bytes = Vec::new();
    for (name, m) in [(DETECT, &det), (RANK, &rank), (THREE_STEP, &three), (GENERATE, &gen), (GREETING, &greet)] {
        let path = cfg.checkpoint(name);
        m.save(&path).unwrap();
        bytes.extend(std::fs::read(&path).unwrap());
    }
    let models = PipelineModels::load(&cfg).unwrap();
    let records = run_pipeline(&models, &cfg, kb, dialogues).unwrap();
    (bytes, serde_json::to_string_pretty(&records).unwrap(), cfg)
}

pub fn pipeline_gating() -> Outcome {
    let spec = SyntheticSpec {
        n_dialogues: 24,
        ..SyntheticSpec::default()
    };
    let (kb, dialogues) = generate_synthetic_corpus(&spec).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (bytes_a, out_a, cfg) = end_to_end(a.path(), &kb, &dialogues);
    let (bytes_b, out_b, _) = end_to_end(b.path(), &kb, &dialogues);
    let identical = bytes_a == bytes_b && out_a == out_b;

    let records: Vec<serde_json::Value> = serde_json::from_str(&out_a).unwrap();
    let det = MiniModel::load(cfg.checkpoint(DETECT), None).unwrap();
    let (mut negatives, mut gated, mut positives, mut complete, mut agree) = (0, 0, 0, 0, 0);
    for (r, d) in records.iter().zip(&dialogues) {
        let obj = r.as_object().unwrap();
        let target = obj["target"].as_bool().unwrap();
        let predicted = detect(&det, &format_detection_input(d, &kb, &cfg.retrieval)).unwrap().target;
        agree += usize::from(predicted == target);
        if target {
            positives += 1;
            complete += usize::from(["knowledge", "scores", "response", "candidates"].iter().all(|k| obj.contains_key(*k)));
        } else {
            negatives += 1;
            gated += usize::from(obj.len() == 1);
        }
    }
    Outcome::new(
        identical && negatives > 0 && gated == negatives && complete == positives && agree == dialogues.len(),
        format!(
            "{negatives} target=0 records, {gated} with no selection or generation output; {complete}/{positives} target=1 records complete; \
             two fixed-seed runs byte-identical (checkpoints {} bytes, output {} bytes): {identical}",
            bytes_a.len(),
            out_a.len()
        ),
    )
}
