use kgdial::evalmetrics::{
    bleu_n, corpus_bleu, mrr_at_k, recall_at_k, rouge_l, rouge_n, BleuOptions, MetricReport,
};
use kgdial::textsim::{jaro, jaro_winkler, levenshtein_ratio};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

/// Full-matrix edit distance.
fn edit_distance(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

fn ref_lev_ratio(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let m = a.len().max(b.len());
    if m == 0 {
        1.0
    } else {
        1.0 - edit_distance(&a, &b) as f64 / m as f64
    }
}

/// Jaro similarity straight from its definition: characters match when
/// equal and no further apart than `max(|a|,|b|)/2 − 1`, each character
/// used once, scanning `a` left to right; transpositions are half the
/// matched characters that disagree in order.
fn ref_jaro(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let reach = (a.len().max(b.len()) / 2) as i64 - 1;
    let reach = reach.max(0);
    let mut used = vec![false; b.len()];
    let mut a_hits = Vec::new();
    for (i, &c) in a.iter().enumerate() {
        if let Some(j) = (0..b.len()).find(|&j| !used[j] && b[j] == c && (i as i64 - j as i64).abs() <= reach) {
            used[j] = true;
            a_hits.push(c);
        }
    }
    let b_hits: Vec<char> = b.iter().zip(&used).filter(|(_, u)| **u).map(|(c, _)| *c).collect();
    let m = a_hits.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let t = a_hits.iter().zip(&b_hits).filter(|(x, y)| x != y).count() as f64 / 2.0;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

fn ref_jaro_winkler(a: &str, b: &str) -> f64 {
    let j = ref_jaro(a, b);
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut l = 0;
    while l < 4 && l < a.len() && l < b.len() && a[l] == b[l] {
        l += 1;
    }
    j + l as f64 * 0.1 * (1.0 - j)
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'd', 'e', 'r', 't', 'é', 'ß'];
    let len = rng.gen_range(0..=12);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

fn mutate(s: &str, rng: &mut ChaCha8Rng) -> String {
    let mut c: Vec<char> = s.chars().collect();
    for _ in 0..rng.gen_range(0..3) {
        if c.len() >= 2 {
            let i = rng.gen_range(0..c.len() - 1);
            c.swap(i, i + 1);
        }
        if !c.is_empty() && rng.gen_bool(0.3) {
            c.remove(rng.gen_range(0..c.len()));
        }
    }
    c.into_iter().collect()
}

pub fn string_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let a = random_string(&mut rng);
        let b = if i % 2 == 0 { random_string(&mut rng) } else { mutate(&a, &mut rng) };
        for (x, y) in [(&a, &b), (&b, &a)] {
            worst = worst
                .max((levenshtein_ratio(x, y) - ref_lev_ratio(x, y)).abs())
                .max((jaro(x, y) - ref_jaro(x, y)).abs())
                .max((jaro_winkler(x, y) - ref_jaro_winkler(x, y)).abs());
        }
    }
    let martha = jaro_winkler("martha", "marhta");
    Outcome::new(
        worst <= 1e-9 && (martha - 0.9611).abs() <= 1e-4,
        format!("max deviation {worst:.2e} over 1000 pairs, jaro_winkler(martha, marhta) = {martha:.4}"),
    )
}

/// All length-`n` windows, with duplicates.
fn grams(t: &[u8], n: usize) -> Vec<&[u8]> {
    if t.len() < n {
        Vec::new()
    } else {
        (0..=t.len() - n).map(|i| &t[i..i + n]).collect()
    }
}

fn occurrences(list: &[&[u8]], g: &[u8]) -> usize {
    list.iter().filter(|x| **x == g).count()
}

/// Clipped matches summed over distinct candidate n-grams.
fn overlap(c: &[u8], r: &[u8], n: usize) -> (usize, usize, usize) {
    let cg = grams(c, n);
    let rg = grams(r, n);
    let mut seen: Vec<&[u8]> = Vec::new();
    let mut m = 0;
    for g in &cg {
        if seen.contains(g) {
            continue;
        }
        seen.push(g);
        m += occurrences(&cg, g).min(occurrences(&rg, g));
    }
    (m, cg.len(), rg.len())
}

fn oracle_bleu(pairs: &[(Vec<u8>, Vec<u8>)], n: usize) -> f64 {
    let mut log_p = 0.0;
    for k in 1..=n {
        let (m, t) = pairs.iter().fold((0, 0), |(m, t), (c, r)| {
            let (mm, tt, _) = overlap(c, r, k);
            (m + mm, t + tt)
        });
        if m == 0 || t == 0 {
            return 0.0;
        }
        log_p += (m as f64 / t as f64).ln() / n as f64;
    }
    let c: usize = pairs.iter().map(|p| p.0.len()).sum();
    let r: usize = pairs.iter().map(|p| p.1.len()).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

fn oracle_rouge_n(c: &[u8], r: &[u8], n: usize) -> f64 {
    let (m, ct, rt) = overlap(c, r, n);
    if m == 0 {
        return 0.0;
    }
    let (p, rec) = (m as f64 / ct as f64, m as f64 / rt as f64);
    2.0 * p * rec / (p + rec)
}

fn lcs(a: &[u8], b: &[u8], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        1 + lcs(&a[1..], &b[1..], memo)
    } else {
        lcs(&a[1..], b, memo).max(lcs(a, &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

fn oracle_rouge_l(c: &[u8], r: &[u8]) -> f64 {
    let l = lcs(c, r, &mut Default::default()) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
    2.0 * p * rec / (p + rec)
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn metric_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..50 {
        let vocab = rng.gen_range(2..6u8);
        let sent = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            let len = rng.gen_range(1..=10);
            (0..len).map(|_| rng.gen_range(0..vocab)).collect()
        };
        let c = sent(&mut rng);
        let r = sent(&mut rng);
        let pair = [(c.clone(), r.clone())];
        for n in 1..=4 {
            worst = worst.max((bleu_n(&c, &r, n) - oracle_bleu(&pair, n)).abs());
            worst = worst.max((rouge_n(&c, &r, n) - oracle_rouge_n(&c, &r, n)).abs());
        }
        worst = worst.max((rouge_l(&c, &r) - oracle_rouge_l(&c, &r)).abs());
        let corpus: Vec<(Vec<u8>, Vec<u8>)> = (0..3).map(|_| (sent(&mut rng), sent(&mut rng))).collect();
        for n in 1..=4 {
            worst = worst.max((corpus_bleu(&corpus, n, BleuOptions::default()) - oracle_bleu(&corpus, n)).abs());
        }
        cases += 1;
    }

    // Worked by hand: 5 of 6 unigrams and 3 of 5 bigrams match, equal lengths.
    let c = words("the cat sat on the mat");
    let r = words("the cat is on the mat");
    let hand = [
        (bleu_n(&c, &r, 1), 5.0 / 6.0),
        (bleu_n(&c, &r, 2), 0.5f64.sqrt()),
        (rouge_n(&c, &r, 1), 5.0 / 6.0),
        (rouge_n(&c, &r, 2), 0.6),
        (rouge_l(&c, &r), 5.0 / 6.0),
        // 2 unigrams of 2, reference of 4: BP = e^(1 − 4/2)
        (bleu_n(&words("the cat"), &words("the cat sat down"), 1), (-1.0f64).exp()),
    ];
    let hand_ok = hand.iter().all(|(a, b)| (a - b).abs() <= 1e-9);

    let s = words("the parking lot is open from nine until five");
    let report = MetricReport::default().with_text(&[(s.clone(), s.clone()), (s[..5].to_vec(), s[..5].to_vec())]);
    let identical = [
        bleu_n(&s, &s, 1),
        bleu_n(&s, &s, 2),
        bleu_n(&s, &s, 3),
        bleu_n(&s, &s, 4),
        rouge_n(&s, &s, 1),
        rouge_n(&s, &s, 2),
        rouge_l(&s, &s),
        report.bleu_1.unwrap(),
        report.bleu_2.unwrap(),
        report.bleu_3.unwrap(),
        report.bleu_4.unwrap(),
        report.rouge_1.unwrap(),
        report.rouge_2.unwrap(),
        report.rouge_l.unwrap(),
    ];
    let identical_ok = identical.iter().all(|v| *v == 1.0);

    // 1-based ranks; None means never ranked.
    let ranks = [Some(1), Some(3), None, Some(6), Some(2), Some(5)];
    let rank_cases = [
        (mrr_at_k(&ranks, 5), (1.0 + 1.0 / 3.0 + 0.5 + 0.2) / 6.0),
        (recall_at_k(&ranks, 1), 1.0 / 6.0),
        (recall_at_k(&ranks, 3), 3.0 / 6.0),
        (recall_at_k(&ranks, 5), 4.0 / 6.0),
        (mrr_at_k(&[Some(1); 4], 5), 1.0),
        (mrr_at_k(&[None, Some(7)], 5), 0.0),
    ];
    let ranking_ok = rank_cases.iter().all(|(a, b)| (a - b).abs() <= 1e-12);

    Outcome::new(
        worst <= 1e-9 && hand_ok && identical_ok && ranking_ok,
        format!(
            "{cases} random cases max deviation {worst:.2e}, worked examples {hand_ok}, identical inputs all 1.0 {identical_ok}, ranking lists {ranking_ok}"
        ),
    )
}
