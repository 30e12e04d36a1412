//! Synthetic inputs with known ground truth.

use campusqa::corpus::{Board, RawRecord};
use campusqa::usefulness::{EmbeddingVector, Usefulness};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toks(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

/// Every sequence of length `1..=max_len` over `alphabet`.
pub fn all_sequences(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &layer {
            for a in alphabet {
                let mut s = seq.clone();
                s.push(a.to_string());
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Two clusters on either side of a random hyperplane through the origin,
/// every point at distance at least `margin` from it. Half the points are
/// useful.
pub fn separable(n: usize, dim: usize, margin: f64, seed: u64) -> Vec<(EmbeddingVector, Usefulness)> {
    let mut rng = rng(seed);
    let mut normal: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let len = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
    normal.iter_mut().for_each(|x| *x /= len);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Usefulness::Useful } else { Usefulness::NotUseful };
            let sign = if label == Usefulness::Useful { 1.0 } else { -1.0 };
            // random point, projected off the normal, then pushed to one side
            let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let along: f64 = x.iter().zip(&normal).map(|(a, b)| a * b).sum();
            let offset = sign * (margin + rng.random_range(0.0..1.0));
            for (xi, ni) in x.iter_mut().zip(&normal) {
                *xi += (offset - along) * ni;
            }
            (EmbeddingVector::raw(x.iter().map(|&v| v as f32).collect(), "synthetic"), label)
        })
        .collect()
}

/// `n_docs` documents of `doc_len` tokens; even documents draw from
/// `a0..a9`, odd ones from `b0..b9`. Returns the docs and each doc's group.
pub fn two_vocab_corpus(n_docs: usize, doc_len: usize, seed: u64) -> (Vec<Vec<String>>, Vec<usize>) {
    let mut rng = rng(seed);
    let mut docs = Vec::new();
    let mut groups = Vec::new();
    for d in 0..n_docs {
        let group = d % 2;
        let prefix = if group == 0 { "a" } else { "b" };
        docs.push((0..doc_len).map(|_| format!("{prefix}{}", rng.random_range(0..10))).collect());
        groups.push(group);
    }
    (docs, groups)
}

const TEXTS: &[&str] = &[
    "수강신청은 언제 하나요",
    "기숙사 신청 방법 알려주세요",
    "Prof. Jaekwang Kim 수업 어때요",
    "Prof. KJK is he strict?",
    "KJH 교수 수업 들어본 사람",
    "",
    "   ",
    "도서관 몇 시까지 해요?",
    "GLS에서 합니다",
];

const ANSWERS: &[&str] = &[
    "이수 학점은 130입니다",
    "Thank you",
    "thanks!",
    "?",
    "??",
    "!!!",
    "ㅇ",
    "a",
    "",
    "   ",
    "감사합니다",
    "학사 공지 확인하세요",
    "맞나요?",
    "GLS 열어보면 나와요",
];

/// Records mixing clean, initials-only, empty-body and junk-answer cases.
pub fn fuzzed_records(n: usize, seed: u64) -> Vec<RawRecord> {
    let mut rng = rng(seed);
    let boards = [Board::Broly, Board::Freshmen, Board::InsaCampus, Board::Other];
    (0..n)
        .map(|i| {
            let n_answers = rng.random_range(0..7);
            RawRecord {
                id: format!("r{i}"),
                board: *boards.choose(&mut rng).unwrap(),
                title: TEXTS.choose(&mut rng).unwrap().to_string(),
                body: TEXTS.choose(&mut rng).unwrap().to_string(),
                date: "2024-03-02".into(),
                likes: rng.random_range(0..50),
                scraps: rng.random_range(0..10),
                answers: (0..n_answers).map(|_| ANSWERS.choose(&mut rng).unwrap().to_string()).collect(),
            }
        })
        .collect()
}
