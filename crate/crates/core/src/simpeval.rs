//! Simplification metrics: SARI, ROUGE-LSum, source 4-gram overlap, and a
//! corpus report combining them with readability and consistency.
//!
//! All metrics work on lowercased word tokens from [`crate::textseg`].
//!
//! SARI is computed on n-gram *sets* for n = 1..4 with the conventions:
//! an operation whose candidate and target sets are both empty scores 1;
//! an empty candidate set against a nonempty target scores 0; orders with no
//! n-grams in any text are left out of the mean; multiple references are
//! pooled into one set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::consistency::{Candidate, ConsistencyScorer};
use crate::error::{Error, Result};
use crate::harness::Document;
use crate::readability::TextStats;
use crate::textseg::{extract_ngrams, tokenize, Ngram};

pub const SARI_MAX_ORDER: usize = 4;

fn ngram_set(words: &[String], n: usize) -> BTreeSet<Ngram> {
    extract_ngrams(words, n).expect("n >= 1").to_set()
}

fn precision(good: usize, candidates: usize, targets: usize) -> f64 {
    if candidates == 0 {
        if targets == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        good as f64 / candidates as f64
    }
}

fn recall(good: usize, targets: usize) -> f64 {
    if targets == 0 {
        1.0
    } else {
        good as f64 / targets as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Add, keep and delete scores for one n-gram order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SariComponents {
    pub add_f1: f64,
    pub keep_f1: f64,
    pub del_precision: f64,
}

/// Per-order SARI components; `None` for orders with no n-grams anywhere.
pub fn sari_components<S: AsRef<str>>(
    source: &str,
    output: &str,
    references: &[S],
) -> Result<Vec<Option<SariComponents>>> {
    if references.is_empty() {
        return Err(Error::Empty("reference list"));
    }
    let src_words = tokenize(source).lowercase_words();
    let out_words = tokenize(output).lowercase_words();
    let ref_words: Vec<Vec<String>> = references
        .iter()
        .map(|r| tokenize(r.as_ref()).lowercase_words())
        .collect();

    let mut per_order = Vec::with_capacity(SARI_MAX_ORDER);
    for n in 1..=SARI_MAX_ORDER {
        let s = ngram_set(&src_words, n);
        let o = ngram_set(&out_words, n);
        let r: BTreeSet<Ngram> = ref_words.iter().flat_map(|w| ngram_set(w, n)).collect();
        if s.is_empty() && o.is_empty() && r.is_empty() {
            per_order.push(None);
            continue;
        }

        let add_cand: BTreeSet<&Ngram> = o.difference(&s).collect();
        let add_target = r.difference(&s).count();
        let add_good = add_cand.iter().filter(|g| r.contains(**g)).count();
        let add_f1 = f1(
            precision(add_good, add_cand.len(), add_target),
            recall(add_good, add_target),
        );

        let keep_cand: BTreeSet<&Ngram> = o.intersection(&s).collect();
        let keep_target = s.intersection(&r).count();
        let keep_good = keep_cand.iter().filter(|g| r.contains(**g)).count();
        let keep_f1 = f1(
            precision(keep_good, keep_cand.len(), keep_target),
            recall(keep_good, keep_target),
        );

        let del_cand: BTreeSet<&Ngram> = s.difference(&o).collect();
        let del_target = s.difference(&r).count();
        let del_good = del_cand.iter().filter(|g| !r.contains(**g)).count();
        let del_precision = precision(del_good, del_cand.len(), del_target);

        per_order.push(Some(SariComponents {
            add_f1,
            keep_f1,
            del_precision,
        }));
    }
    Ok(per_order)
}

/// SARI on a 0-100 scale.
pub fn sari<S: AsRef<str>>(source: &str, output: &str, references: &[S]) -> Result<f64> {
    let orders: Vec<SariComponents> = sari_components(source, output, references)?
        .into_iter()
        .flatten()
        .collect();
    if orders.is_empty() {
        return Ok(100.0);
    }
    let total: f64 = orders
        .iter()
        .map(|c| (c.add_f1 + c.keep_f1 + c.del_precision) / 3.0)
        .sum();
    Ok(100.0 * total / orders.len() as f64)
}

fn sentences(text: &str) -> Vec<Vec<String>> {
    let tokens = tokenize(text);
    let mut out: Vec<Vec<String>> = Vec::new();
    for t in tokens.words() {
        if out.len() <= t.sentence_index {
            out.resize_with(t.sentence_index + 1, Vec::new);
        }
        out[t.sentence_index].push(t.surface.to_lowercase());
    }
    out.retain(|s| !s.is_empty());
    out
}

/// Positions in `reference` of a longest common subsequence with
/// `candidate`. Among all longest ones, the lexicographically smallest
/// position tuple is returned.
pub fn lcs_positions<T: PartialEq>(reference: &[T], candidate: &[T]) -> Vec<usize> {
    let (m, n) = (reference.len(), candidate.len());
    // suffix table: table[i][j] = LCS length of reference[i..], candidate[j..]
    let mut table = vec![vec![0usize; n + 1]; m + 1];
    for i in (0..m).rev() {
        for j in (0..n).rev() {
            table[i][j] = if reference[i] == candidate[j] {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let mut positions = Vec::with_capacity(table[0][0]);
    let (mut i, mut j) = (0, 0);
    while table[i][j] > 0 {
        let need = table[i][j];
        let (pi, pj) = (i..m)
            .find_map(|pi| {
                (j..n)
                    .find(|&pj| reference[pi] == candidate[pj] && table[pi + 1][pj + 1] + 1 == need)
                    .map(|pj| (pi, pj))
            })
            .expect("an LCS of positive length has a first element");
        positions.push(pi);
        i = pi + 1;
        j = pj + 1;
    }
    positions
}

/// Precision, recall and F1 of summary-level ROUGE-L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Summary-level ROUGE-L: for each reference sentence the union of its LCS
/// positions against every output sentence, with hits clipped by token
/// counts on both sides.
pub fn rouge_lsum_detail(output: &str, reference: &str) -> Result<RougeScore> {
    let out = sentences(output);
    let refs = sentences(reference);
    let n: usize = out.iter().map(Vec::len).sum();
    let m: usize = refs.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::Empty("output"));
    }
    if m == 0 {
        return Err(Error::Empty("reference"));
    }
    let mut ref_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in refs.iter().flatten() {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    for w in out.iter().flatten() {
        *out_counts.entry(w).or_insert(0) += 1;
    }
    let mut hits = 0usize;
    for r in &refs {
        let union: BTreeSet<usize> = out.iter().flat_map(|c| lcs_positions(r, c)).collect();
        for &p in &union {
            let w = r[p].as_str();
            let rc = ref_counts.get_mut(w).expect("reference word counted");
            let oc = out_counts.entry(w).or_insert(0);
            if *rc > 0 && *oc > 0 {
                hits += 1;
                *rc -= 1;
                *oc -= 1;
            }
        }
    }
    let precision = hits as f64 / n as f64;
    let recall = hits as f64 / m as f64;
    Ok(RougeScore {
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

/// ROUGE-LSum F1 in `[0, 1]`.
pub fn rouge_lsum(output: &str, reference: &str) -> Result<f64> {
    Ok(rouge_lsum_detail(output, reference)?.f1)
}

/// Percentage of distinct output 4-grams that also occur in the source;
/// `None` when the output has fewer than four words.
pub fn fourgram_overlap(output: &str, source: &str) -> Option<f64> {
    let out = ngram_set(&tokenize(output).lowercase_words(), 4);
    if out.is_empty() {
        return None;
    }
    let src = ngram_set(&tokenize(source).lowercase_words(), 4);
    let shared = out.iter().filter(|g| src.contains(*g)).count();
    Some(100.0 * shared as f64 / out.len() as f64)
}

/// All metrics for one output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricBundle {
    pub fk: f64,
    pub ari: f64,
    pub consistency: f64,
    pub sari: f64,
    pub rouge_lsum: f64,
    pub fourgram_overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub id: String,
    pub metrics: MetricBundle,
}

/// Per-document metrics and their means. The 4-gram mean covers only
/// documents where the overlap is defined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub mean: MetricBundle,
}

pub const REPORT_COLUMNS: [&str; 6] = ["FK", "ARI", "BScr", "SARI", "RL", "4gram"];

pub fn evaluate_document(doc: &Document, output: &str, scorer: &dyn ConsistencyScorer) -> Result<MetricBundle> {
    let stats = TextStats::of(output);
    Ok(MetricBundle {
        fk: stats.flesch_kincaid::<f64>()?.value(),
        ari: stats.ari::<f64>()?.value(),
        consistency: scorer.score(Candidate::with_id(&doc.id, output), &doc.input)?,
        sari: sari(&doc.input, output, &[&doc.label])?,
        rouge_lsum: rouge_lsum(output, &doc.label)?,
        fourgram_overlap: fourgram_overlap(output, &doc.input),
    })
}

pub fn evaluate_corpus<S: AsRef<str>>(
    documents: &[Document],
    outputs: &[S],
    scorer: &dyn ConsistencyScorer,
) -> Result<EvalReport> {
    if documents.len() != outputs.len() {
        return Err(Error::LengthMismatch {
            documents: documents.len(),
            outputs: outputs.len(),
        });
    }
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let rows = documents
        .iter()
        .zip(outputs)
        .map(|(doc, out)| {
            evaluate_document(doc, out.as_ref(), scorer)
                .map(|metrics| ReportRow {
                    id: doc.id.clone(),
                    metrics,
                })
                .map_err(|e| Error::Document {
                    id: doc.id.clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_bundle(rows.iter().map(|r| &r.metrics));
    Ok(EvalReport { rows, mean })
}

fn mean_bundle<'a>(bundles: impl Iterator<Item = &'a MetricBundle> + Clone) -> MetricBundle {
    let count = bundles.clone().count() as f64;
    let avg = |f: fn(&MetricBundle) -> f64| bundles.clone().map(f).sum::<f64>() / count;
    let overlaps: Vec<f64> = bundles.clone().filter_map(|b| b.fourgram_overlap).collect();
    MetricBundle {
        fk: avg(|b| b.fk),
        ari: avg(|b| b.ari),
        consistency: avg(|b| b.consistency),
        sari: avg(|b| b.sari),
        rouge_lsum: avg(|b| b.rouge_lsum),
        fourgram_overlap: if overlaps.is_empty() {
            None
        } else {
            Some(overlaps.iter().sum::<f64>() / overlaps.len() as f64)
        },
    }
}

impl MetricBundle {
    fn cells(&self) -> [String; 6] {
        [
            format!("{:.2}", self.fk),
            format!("{:.2}", self.ari),
            format!("{:.3}", self.consistency),
            format!("{:.2}", self.sari),
            format!("{:.4}", self.rouge_lsum),
            self.fourgram_overlap
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.2}")),
        ]
    }
}

impl EvalReport {
    fn lines(&self) -> Vec<Vec<String>> {
        let mut lines = vec![std::iter::once("id".to_string())
            .chain(REPORT_COLUMNS.iter().map(|c| c.to_string()))
            .collect::<Vec<_>>()];
        for row in &self.rows {
            lines.push(std::iter::once(row.id.clone()).chain(row.metrics.cells()).collect());
        }
        lines.push(std::iter::once("mean".to_string()).chain(self.mean.cells()).collect());
        lines
    }

    /// Tab-separated rows, header first and the mean row last.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for line in self.lines() {
            let _ = writeln!(out, "{}", line.join("\t"));
        }
        out
    }

    /// The same rows with space-aligned columns.
    pub fn to_table(&self) -> String {
        let lines = self.lines();
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
