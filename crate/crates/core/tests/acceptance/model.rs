use kgdial::corpus::Speaker;
use kgdial::generation::{
    generation_losses, latent_state, posterior_z, prior_z, GenExample, GenerationInput, GeneratorScorer, LossWeights,
};
use kgdial::neural::{grad_check, Graph, Mat, MaskKind, MiniModel, ModelConfig, Var, Vocab};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const WORDS: &[&str] = &[
    "the", "lot", "is", "in", "parking", "where", "yes", "free", "wifi", "password", "room", "open", "gate", ".",
    ",", "?",
];
const KNOWLEDGE_ONLY: &[&str] = &["zq47", "kv12", "mm80", "tx33"];

fn tiny(d_model: usize, n_layers: usize, seed: u64) -> MiniModel {
    let cfg = ModelConfig {
        d_model,
        n_heads: 2,
        n_layers,
        d_ff: 2 * d_model,
        max_seq: 64,
        latent_k: 3,
        init_seed: seed,
    };
    MiniModel::new(cfg, Vocab::from_words(WORDS.iter().copied())).unwrap()
}

fn pick_words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<String> {
    (0..rng.gen_range(lo..=hi)).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
}

fn random_input(rng: &mut ChaCha8Rng) -> GenerationInput {
    let mut knowledge = if rng.gen_bool(0.1) {
        vec![".".to_string(); rng.gen_range(1..3)]
    } else {
        pick_words(rng, 1, 6)
    };
    for _ in 0..rng.gen_range(0..3) {
        let at = rng.gen_range(0..=knowledge.len());
        knowledge.insert(at, KNOWLEDGE_ONLY.choose(rng).unwrap().to_string());
    }
    let context = (0..rng.gen_range(1..=3))
        .map(|i| {
            let who = if i % 2 == 0 { Speaker::U } else { Speaker::S };
            (who, pick_words(rng, 1, 5))
        })
        .collect();
    let input = GenerationInput::new(knowledge, context);
    if rng.gen_bool(0.2) {
        input.with_prefix(pick_words(rng, 1, 3))
    } else {
        input
    }
}

pub fn distribution_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let (mut passes, mut copy_cases, mut copy_failures) = (0, 0, 0);
    for m in 0..50 {
        let model = tiny(8, 1 + m % 2, m as u64);
        let v = model.vocab.len();
        for _ in 0..20 {
            let input = random_input(&mut rng);
            let prior = prior_z(&model, &input).unwrap();
            let post = posterior_z(&model, &input.with_response(pick_words(&mut rng, 1, 4))).unwrap();
            let z = rng.gen_range(0..model.config.latent_k);
            let scorer = GeneratorScorer::new(&model, &input, z, true, 6).unwrap();
            let ext = scorer.copy_source().ext_len();
            let prefix: Vec<usize> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(7..ext)).collect();
            let d = scorer.distributions(&prefix).unwrap();
            let p_att = d.p_att.as_ref().expect("copy source is enabled");
            for dist in [&prior, &post, &d.p_lang, p_att, &d.mixed] {
                worst = worst.max((dist.iter().sum::<f64>() - 1.0).abs());
            }
            for (o, _) in scorer.copy_source().oov.iter().enumerate() {
                if p_att[v + o] > 0.0 && d.gate < 1.0 {
                    copy_cases += 1;
                    copy_failures += usize::from(!(d.mixed[v + o] > 0.0));
                }
            }
            passes += 1;
        }
    }
    Outcome::new(
        worst <= 1e-6 && copy_failures == 0 && copy_cases > 0,
        format!(
            "{passes} passes, max |sum − 1| {worst:.2e}, knowledge-only tokens with positive copy mass {}/{copy_cases}",
            copy_cases - copy_failures
        ),
    )
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn gradient_checks() -> Outcome {
    let model = tiny(16, 1, 11);
    let input = GenerationInput::new(words("parking is in lot zq47 ."), vec![(Speaker::U, words("where is parking ?"))]);
    let ex = GenExample::new(&model, &input.with_response(words("yes , lot zq47 .")), true).unwrap();
    let w = LossWeights {
        nll: 1.0,
        bow: 0.5,
        kld: 2.0,
        norm: 0.3,
    };
    type Pick = fn(&kgdial::generation::GenLosses) -> Var;
    let parts: [(&str, Pick); 5] = [
        ("nll", |l| l.nll),
        ("bow", |l| l.bow),
        ("kld", |l| l.kld),
        ("norm", |l| l.norm),
        ("total", |l| l.total),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, pick) in parts {
        let r = grad_check(
            &model,
            |m: &MiniModel, g: &mut Graph<'_>| Ok(pick(&generation_losses(m, g, &ex, &w)?)),
            40,
            17,
        )
        .unwrap();
        ok &= r.max_rel_error < 1e-4 && r.max_abs_grad > 0.0;
        details.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    Outcome::new(ok, format!("max relative error: {}", details.join(", ")))
}

pub fn mask_leak_freedom() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut clean = 0;
    for trial in 0..100u64 {
        let model = tiny(8, 2, trial);
        let base = random_input(&mut rng).with_prefix(pick_words(&mut rng, 0, 2));
        let with = base.with_response(pick_words(&mut rng, 1, 5));
        let enc = with.encode(&model.vocab, model.config.max_seq).unwrap();
        assert_eq!(enc.mask.kind, MaskKind::Trapezoidal);

        let r = enc.mask.response.clone();
        let at = rng.gen_range(r.start..r.end);
        let mut ids = enc.ids.clone();
        ids[at] = loop {
            let w = rng.gen_range(7..model.vocab.len());
            if w != ids[at] {
                break w;
            }
        };
        let h_z = Mat::row_vector((0..model.config.d_model).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let a = model.encode(&enc.ids, &enc.mask, Some(&h_z)).unwrap();
        let b = model.encode(&ids, &enc.mask, Some(&h_z)).unwrap();
        let same_rows = (0..at).all(|i| {
            a.hidden.row(i).iter().zip(b.hidden.row(i)).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        let changed = a.hidden.row(at) != b.hidden.row(at);

        let other = base.with_response(pick_words(&mut rng, 1, 5));
        let pa = latent_state::<ChaCha8Rng>(&model, &with, None).unwrap().prior;
        let pb = latent_state::<ChaCha8Rng>(&model, &other, None).unwrap().prior;
        let pz = prior_z(&model, &base).unwrap();
        let bits = |p: &[f64]| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let prior_same = bits(&pa) == bits(&pb) && bits(&pa) == bits(&pz);

        clean += usize::from(same_rows && changed && prior_same);
    }
    Outcome::new(clean == 100, format!("{clean}/100 trials leak-free with bit-identical prior"))
}
