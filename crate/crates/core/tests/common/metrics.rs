//! Brute-force metric oracles over whitespace-separated lowercase tokens.

use std::collections::{HashMap, HashSet};

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn grams(tokens: &[String], n: usize) -> HashSet<String> {
    if tokens.len() < n {
        return HashSet::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
}

fn ratio_or(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// SARI by explicit set enumeration. Texts must be plain space-separated words.
pub fn sari(source: &str, output: &str, references: &[&str]) -> f64 {
    let (s_toks, o_toks) = (words(source), words(output));
    let r_toks: Vec<Vec<String>> = references.iter().map(|r| words(r)).collect();
    let mut per_order = Vec::new();
    for n in 1..=4 {
        let s = grams(&s_toks, n);
        let o = grams(&o_toks, n);
        let mut r = HashSet::new();
        for t in &r_toks {
            r.extend(grams(t, n));
        }
        if s.is_empty() && o.is_empty() && r.is_empty() {
            continue;
        }
        // candidate set, target set, and the correct candidates for each operation
        let add_c: Vec<&String> = o.iter().filter(|g| !s.contains(*g)).collect();
        let add_t: Vec<&String> = r.iter().filter(|g| !s.contains(*g)).collect();
        let add_ok = add_c.iter().filter(|g| add_t.contains(g)).count();
        let add_p = if add_c.is_empty() { if add_t.is_empty() { 1.0 } else { 0.0 } } else { add_ok as f64 / add_c.len() as f64 };
        let add = harmonic(add_p, ratio_or(add_ok, add_t.len(), 1.0));

        let keep_c: Vec<&String> = o.iter().filter(|g| s.contains(*g)).collect();
        let keep_t: Vec<&String> = s.iter().filter(|g| r.contains(*g)).collect();
        let keep_ok = keep_c.iter().filter(|g| keep_t.contains(g)).count();
        let keep_p = if keep_c.is_empty() { if keep_t.is_empty() { 1.0 } else { 0.0 } } else { keep_ok as f64 / keep_c.len() as f64 };
        let keep = harmonic(keep_p, ratio_or(keep_ok, keep_t.len(), 1.0));

        let del_c: Vec<&String> = s.iter().filter(|g| !o.contains(*g)).collect();
        let del_t: Vec<&String> = s.iter().filter(|g| !r.contains(*g)).collect();
        let del_ok = del_c.iter().filter(|g| del_t.contains(g)).count();
        let del = if del_c.is_empty() { if del_t.is_empty() { 1.0 } else { 0.0 } } else { del_ok as f64 / del_c.len() as f64 };

        per_order.push((add + keep + del) / 3.0);
    }
    if per_order.is_empty() {
        100.0
    } else {
        100.0 * per_order.iter().sum::<f64>() / per_order.len() as f64
    }
}

/// Renders sentences as `w w. w w.`.
pub fn render(sentences: &[Vec<String>]) -> String {
    sentences
        .iter()
        .map(|s| format!("{}.", s.join(" ")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_subsequence(picked: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    picked.iter().all(|p| it.any(|x| x == *p))
}

/// Longest common subsequence positions in `r` by trying every subset of
/// positions; ties go to the lexicographically smallest position list.
pub fn lcs_subset(r: &[String], c: &[String]) -> Vec<usize> {
    assert!(r.len() <= 16);
    let mut best: Vec<usize> = Vec::new();
    for mask in 0u32..(1 << r.len()) {
        let pos: Vec<usize> = (0..r.len()).filter(|i| mask >> i & 1 == 1).collect();
        let picked: Vec<&String> = pos.iter().map(|&i| &r[i]).collect();
        if !is_subsequence(&picked, c) {
            continue;
        }
        if pos.len() > best.len() || (pos.len() == best.len() && pos < best) {
            best = pos;
        }
    }
    best
}

/// Summary-level ROUGE-L F1 with per-sentence union LCS and clipped hits.
pub fn rouge_lsum(output: &[Vec<String>], reference: &[Vec<String>]) -> f64 {
    let n: usize = output.iter().map(Vec::len).sum();
    let m: usize = reference.iter().map(Vec::len).sum();
    let mut left_r: HashMap<&String, i64> = HashMap::new();
    let mut left_o: HashMap<&String, i64> = HashMap::new();
    for w in reference.iter().flatten() {
        *left_r.entry(w).or_default() += 1;
    }
    for w in output.iter().flatten() {
        *left_o.entry(w).or_default() += 1;
    }
    let mut hits = 0;
    for r in reference {
        let mut union: Vec<usize> = output.iter().flat_map(|c| lcs_subset(r, c)).collect();
        union.sort_unstable();
        union.dedup();
        for p in union {
            let w = &r[p];
            let (a, b) = (left_r.get(w).copied().unwrap_or(0), left_o.get(w).copied().unwrap_or(0));
            if a > 0 && b > 0 {
                hits += 1;
                *left_r.get_mut(w).unwrap() -= 1;
                *left_o.get_mut(w).unwrap() -= 1;
            }
        }
    }
    let p = hits as f64 / n as f64;
    let r = hits as f64 / m as f64;
    harmonic(p, r)
}

pub fn fourgram_overlap(output: &str, source: &str) -> Option<f64> {
    let out = grams(&words(output), 4);
    if out.is_empty() {
        return None;
    }
    let src = grams(&words(source), 4);
    let shared = out.iter().filter(|g| src.contains(*g)).count();
    Some(100.0 * shared as f64 / out.len() as f64)
}
