//! Slow, obviously-correct reference implementations used to check the
//! library. Nothing here calls into the library's metric or search code.

use std::collections::BTreeMap;

fn grams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| &tokens[i..i + n]).collect()
}

fn count_of(list: &[&[String]], g: &[String]) -> usize {
    list.iter().filter(|x| **x == g).count()
}

fn distinct<'a>(list: &[&'a [String]]) -> Vec<&'a [String]> {
    let mut out: Vec<&[String]> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g);
        }
    }
    out
}

fn clipped_matches(hyp: &[String], reference: &[String], n: usize) -> usize {
    let h = grams(hyp, n);
    let r = grams(reference, n);
    distinct(&h)
        .into_iter()
        .map(|g| count_of(&h, g).min(count_of(&r, g)))
        .sum()
}

fn div(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Sentence BLEU with uniform weights and no smoothing, single reference.
pub fn bleu(hyp: &[String], reference: &[String], max_n: usize) -> f64 {
    let weight = 1.0 / max_n as f64;
    let mut precisions = Vec::new();
    for n in 1..=max_n {
        let total = grams(hyp, n).len();
        let m = clipped_matches(hyp, reference, n);
        precisions.push(if m == 0 { 0.0 } else { m as f64 / total as f64 });
    }
    if precisions.contains(&0.0) {
        return 0.0;
    }
    let c = hyp.len();
    let r = reference.len();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let log_sum: f64 = precisions.iter().map(|p| weight * p.ln()).sum();
    bp * log_sum.exp()
}

/// (recall, precision, f) for ROUGE-N.
pub fn rouge_n(hyp: &[String], reference: &[String], n: usize) -> (f64, f64, f64) {
    let m = clipped_matches(hyp, reference, n);
    let r = div(m, grams(reference, n).len());
    let p = div(m, grams(hyp, n).len());
    (r, p, f1(r, p))
}

fn f1(r: f64, p: f64) -> f64 {
    if r + p == 0.0 {
        0.0
    } else {
        2.0 * r * p / (r + p)
    }
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|w| it.any(|h| h == *w))
}

/// Longest common subsequence by trying every subsequence of `a`.
pub fn lcs_exhaustive(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "exhaustive LCS is exponential");
    let mut best = 0;
    for mask in 0u32..(1u32 << a.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let pick: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if is_subsequence(&pick, b) {
            best = size;
        }
    }
    best
}

pub fn rouge_l(hyp: &[String], reference: &[String]) -> (f64, f64, f64) {
    let l = lcs_exhaustive(hyp, reference);
    let r = div(l, reference.len());
    let p = div(l, hyp.len());
    (r, p, f1(r, p))
}

/// Perplexity of `seq` under an add-one bigram model counted from `corpus`
/// by scanning every sentence for each query.
pub fn perplexity(seq: &[String], corpus: &[Vec<String>]) -> f64 {
    const START: &str = "<s>";
    const END: &str = "</s>";
    let padded: Vec<Vec<&str>> = corpus
        .iter()
        .map(|s| {
            let mut v = vec![START];
            v.extend(s.iter().map(String::as_str));
            v.push(END);
            v
        })
        .collect();
    let mut vocab: Vec<&str> = padded.iter().flat_map(|s| s[1..].iter().copied()).collect();
    vocab.sort_unstable();
    vocab.dedup();
    let v = vocab.len() as u64;

    let pair_count = |h: &str, w: &str| -> u64 {
        padded
            .iter()
            .map(|s| s.windows(2).filter(|p| p[0] == h && p[1] == w).count() as u64)
            .sum()
    };
    let hist_count = |h: &str| -> u64 {
        padded
            .iter()
            .map(|s| s.windows(2).filter(|p| p[0] == h).count() as u64)
            .sum()
    };

    let mut query = vec![START];
    query.extend(seq.iter().map(String::as_str));
    query.push(END);
    let mut log_sum = 0.0;
    for p in query.windows(2) {
        let prob = (pair_count(p[0], p[1]) + 1) as f64 / (hist_count(p[0]) + v) as f64;
        log_sum += prob.ln();
    }
    let n = query.len() - 1;
    (-log_sum / n as f64).exp()
}

/// (matches, chunks) over every possible exact-match alignment: most
/// matches first, then fewest chunks.
pub fn meteor_alignment(hyp: &[String], reference: &[String]) -> (usize, usize) {
    fn walk(
        i: usize,
        hyp: &[String],
        reference: &[String],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == hyp.len() {
            let m = pairs.len();
            let chunks = if m == 0 {
                0
            } else {
                1 + pairs
                    .windows(2)
                    .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
                    .count()
            };
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        walk(i + 1, hyp, reference, used, pairs, best);
        for j in 0..reference.len() {
            if !used[j] && reference[j] == hyp[i] {
                used[j] = true;
                pairs.push((i, j));
                walk(i + 1, hyp, reference, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, usize::MAX);
    walk(0, hyp, reference, &mut vec![false; reference.len()], &mut Vec::new(), &mut best);
    if best.0 == 0 {
        (0, 0)
    } else {
        best
    }
}

pub fn meteor(hyp: &[String], reference: &[String]) -> f64 {
    let (m, chunks) = meteor_alignment(hyp, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powf(3.0);
    f_mean * (1.0 - penalty)
}

/// Cosine with sequential f64 accumulation, clamped.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        na += f64::from(a[i]) * f64::from(a[i]);
    }
    for i in 0..b.len() {
        nb += f64::from(b[i]) * f64::from(b[i]);
    }
    for i in 0..a.len() {
        dot += f64::from(a[i]) * f64::from(b[i]);
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Score every row, sort by (similarity desc, id asc), keep `k`.
/// Returns `(doc_id, similarity)`.
pub fn full_scan(rows: &[(String, Vec<f32>)], query: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows.iter().map(|(id, v)| (id.clone(), cosine(query, v))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Exact collapsed LDA posterior over all topic assignments of a tiny
/// corpus, as a map from flattened assignment to probability.
pub fn lda_posterior(
    docs: &[Vec<usize>],
    vocab_size: usize,
    k: usize,
    alpha: f64,
    beta: f64,
) -> BTreeMap<Vec<usize>, f64> {
    // Γ(a + n) / Γ(a) as a product.
    fn rising(a: f64, n: usize) -> f64 {
        (0..n).map(|i| a + i as f64).product()
    }
    let n_tokens: usize = docs.iter().map(Vec::len).sum();
    let mut weights = BTreeMap::new();
    let mut total = 0.0;
    for code in 0..k.pow(n_tokens as u32) {
        let mut z = Vec::with_capacity(n_tokens);
        let mut c = code;
        for _ in 0..n_tokens {
            z.push(c % k);
            c /= k;
        }
        let mut ndk = vec![vec![0usize; k]; docs.len()];
        let mut nkw = vec![vec![0usize; vocab_size]; k];
        let mut pos = 0;
        for (d, doc) in docs.iter().enumerate() {
            for &w in doc {
                ndk[d][z[pos]] += 1;
                nkw[z[pos]][w] += 1;
                pos += 1;
            }
        }
        let mut weight = 1.0;
        for (d, doc) in docs.iter().enumerate() {
            for t in 0..k {
                weight *= rising(alpha, ndk[d][t]);
            }
            weight /= rising(k as f64 * alpha, doc.len());
        }
        for t in 0..k {
            for w in 0..vocab_size {
                weight *= rising(beta, nkw[t][w]);
            }
            let nk: usize = nkw[t].iter().sum();
            weight /= rising(vocab_size as f64 * beta, nk);
        }
        total += weight;
        weights.insert(z, weight);
    }
    for w in weights.values_mut() {
        *w /= total;
    }
    weights
}
