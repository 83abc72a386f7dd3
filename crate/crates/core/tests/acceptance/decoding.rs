use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use kgdial::corpus::Speaker;
use kgdial::generation::{
    beam_search, best_index, combined_score, ffbs_decode, normalize_scores, postprocess_rerank, GenerationHypothesis,
    GenerationInput, GeneratorScorer, RerankWeights, SequenceScorer, Step,
};
use kgdial::neural::{MiniModel, ModelConfig, Vocab};
use kgdial::textsim::EmbeddingTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

/// Token 0 ends the sequence.
struct Bigram {
    table: Vec<Vec<f64>>,
}

impl SequenceScorer for Bigram {
    fn step(&self, prefix: &[usize]) -> kgdial::Result<Step> {
        let row = &self.table[prefix.last().copied().unwrap_or(0)];
        Ok(Step {
            log_probs: row.iter().map(|p| p.ln()).collect(),
            gate: 1.0,
        })
    }

    fn eos(&self) -> usize {
        0
    }
}

/// Next-token distribution drawn afresh for every prefix.
struct Hashed {
    seed: u64,
    vocab: usize,
}

impl SequenceScorer for Hashed {
    fn step(&self, prefix: &[usize]) -> kgdial::Result<Step> {
        let mut h = DefaultHasher::new();
        (self.seed, prefix).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let w: Vec<f64> = (0..self.vocab).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum();
        Ok(Step {
            log_probs: w.iter().map(|x| (x / s).ln()).collect(),
            gate: 1.0,
        })
    }

    fn eos(&self) -> usize {
        0
    }
}

/// Every sequence that ends in `<eos>` or reaches `max_len`, best first.
fn exhaustive(s: &dyn SequenceScorer, vocab: usize, max_len: usize, top: usize) -> Vec<(Vec<usize>, f64, bool)> {
    let mut done = Vec::new();
    let mut open = vec![(Vec::new(), 0.0)];
    while let Some((prefix, lp)) = open.pop() {
        let step = s.step(&prefix).unwrap();
        for w in 0..vocab {
            let score = lp + step.log_probs[w];
            if w == s.eos() {
                done.push((prefix.clone(), score, false));
                continue;
            }
            let mut next = prefix.clone();
            next.push(w);
            if next.len() == max_len {
                done.push((next, score, true));
            } else {
                open.push((next, score));
            }
        }
    }
    done.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    done.truncate(top);
    done
}

fn agrees(s: &dyn SequenceScorer, vocab: usize, beam: usize, max_len: usize) -> bool {
    let got = beam_search(s, beam, max_len).unwrap();
    let want = exhaustive(s, vocab, max_len, 3);
    got.len() >= 3
        && got[..3]
            .iter()
            .zip(&want)
            .all(|(h, (t, lp, cut))| &h.tokens == t && (h.log_prob - lp).abs() < 1e-12 && h.hit_max_len == *cut)
}

pub fn decoding_oracles() -> Outcome {
    let toy = Bigram {
        table: vec![vec![0.1, 0.6, 0.3], vec![0.3, 0.2, 0.5], vec![0.5, 0.3, 0.2]],
    };
    let fixed_ok = (1..=4).all(|ml| agrees(&toy, 3, 3, ml));

    let mut short_ok = 0;
    for seed in 0..1000 {
        let h = Hashed { seed, vocab: 3 };
        short_ok += usize::from((1..=2).all(|ml| agrees(&h, 3, 3, ml)));
    }
    let (mut wide_ok, mut narrow) = (0, [0usize; 2]);
    for seed in 0..1000 {
        let h = Hashed { seed, vocab: 3 };
        wide_ok += usize::from(agrees(&h, 3, 81, 3) && agrees(&h, 3, 81, 4));
        narrow[0] += usize::from(agrees(&h, 3, 3, 3));
        narrow[1] += usize::from(agrees(&h, 3, 3, 4));
    }

    let toy6 = Hashed { seed: 7, vocab: 6 };
    let out = ffbs_decode(&toy6, 4, 2, 4).unwrap();
    let firsts: BTreeSet<usize> = out.hypotheses.iter().filter_map(|h| h.tokens.first().copied()).collect();
    let grouped = out
        .hypotheses
        .chunks(2)
        .zip(&out.first_tokens)
        .all(|(g, f)| g.iter().all(|h| h.tokens.first() == Some(f)));
    let toy_ffbs = out.hypotheses.len() == 8 && firsts.len() == 4 && grouped && !out.fewer_groups;

    let model = MiniModel::new(
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            max_seq: 48,
            latent_k: 3,
            init_seed: 2,
        },
        Vocab::from_words(["lot", "is", "in", "parking", "where", "yes", "."]),
    )
    .unwrap();
    let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let input = GenerationInput::new(words("parking is in lot zq47 ."), vec![(Speaker::U, words("where is parking"))]);
    let scorer = GeneratorScorer::new(&model, &input, 0, true, 6).unwrap();
    let out = ffbs_decode(&scorer, 4, 2, 6).unwrap();
    let firsts: BTreeSet<usize> = out.hypotheses.iter().filter_map(|h| h.tokens.first().copied()).collect();
    let model_ffbs = out.hypotheses.len() == 8 && firsts.len() == 4;

    Outcome::new(
        fixed_ok && short_ok == 1000 && wide_ok == 1000 && toy_ffbs && model_ffbs,
        format!(
            "fixed bigram max_len 1-4 exact {fixed_ok}; random models exact at max_len<=2 {short_ok}/1000; \
             unpruned beam vs enumeration {wide_ok}/1000; width 3 on random models agrees {}/1000 at max_len 3, {}/1000 at max_len 4; \
             FFBS 4x2 gives 8 hypotheses over 4 first tokens: toy {toy_ffbs}, generator {model_ffbs}",
            narrow[0], narrow[1]
        ),
    )
}

pub fn rerank_behavior() -> Outcome {
    let w = RerankWeights::default();
    let s_nll = normalize_scores(&[-3.2, -3.2])[0];
    let verbatim = combined_score(s_nll, 1.0, 1.0, &w);
    let (mut cases, mut verbatim_wins, mut wins_with_bert_above_jwd) = (0, 0, 0);
    for b in 80..=100 {
        for j in 0..=90 {
            let (bert, jwd) = (b as f64 / 100.0, j as f64 / 100.0);
            let para = combined_score(s_nll, bert, jwd, &w);
            for (order, verbatim_at) in [([verbatim, para], 0), ([para, verbatim], 1)] {
                cases += 1;
                if best_index(&order) == Some(verbatim_at) {
                    verbatim_wins += 1;
                    wins_with_bert_above_jwd += usize::from(bert > jwd);
                }
            }
        }
    }

    let answer = "Guests can park in lot zq47 free of charge.";
    let mut cands = vec![
        GenerationHypothesis::from_text(answer, -2.0),
        GenerationHypothesis::from_text("You can park for free in lot zq47.", -2.0),
    ];
    let emb = EmbeddingTable::one_hot(cands.iter().flat_map(|c| c.tokens.iter().map(String::as_str)).collect::<Vec<_>>());
    postprocess_rerank(&mut cands, answer, &emb, &w).unwrap();
    let identity = cands[0].s_bert == 1.0 && cands[0].s_jwd == 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut monotone = 0;
    for _ in 0..1000 {
        let w = RerankWeights {
            nll: rng.gen_range(0.01..2.0),
            bert: rng.gen_range(0.01..2.0),
            jwd: rng.gen_range(0.01..2.0),
        };
        let (n, b, j) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
        let d = rng.gen_range(1e-3..0.5);
        let base = combined_score(n, b, j, &w);
        let logs: Vec<f64> = (0..5).map(|_| rng.gen_range(-20.0..0.0)).collect();
        let norm = normalize_scores(&logs);
        let order_kept = (0..5).all(|x| (0..5).all(|y| (logs[x] < logs[y]) == (norm[x] < norm[y])));
        let ok = combined_score(n, b, j + d, &w) < base
            && combined_score(n, b + d, j, &w) > base
            && combined_score(n + d, b, j, &w) > base
            && order_kept
            && norm.iter().all(|x| (0.0..=1.0).contains(x));
        monotone += usize::from(ok);
    }

    Outcome::new(
        verbatim_wins == 0 && monotone == 1000 && identity,
        format!(
            "verbatim answer selected in {verbatim_wins}/{cases} grid cases (S_BERT in [0.8,1], S_JWD in [0,0.9], equal S_NLL), \
             {wins_with_bert_above_jwd} of them with S_BERT > S_JWD; verbatim scores S_BERT = S_JWD = 1: {identity}; \
             monotonicity {monotone}/1000"
        ),
    )
}
