//! IoU-gated caption metrics.
//!
//! CIDEr-D, BLEU-4 and ROUGE-L follow the COCO caption toolkit conventions.
//! A caption is scored only when the proposal it describes overlaps its
//! ground-truth box with IoU at or above the gate; otherwise every metric is
//! zero for that object, and the zeros stay in the corpus means. METEOR is
//! not computed.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::Result;
use crate::geometry::{iou_3d, OrientedBox3D};
use crate::records::{box_from_numbers, read_jsonl};
use crate::report::{Cell, Report, Table};

pub const DEFAULT_GATE: f64 = 0.5;
pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

/// Lowercases, turns every non-alphanumeric character into a separator and
/// splits.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 with uniform weights and the closest-reference brevity
/// penalty (shorter reference wins ties). No smoothing: any zero n-gram
/// precision makes the score zero.
pub fn bleu4(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_N {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len() as f64;
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - candidate.len() as i64).abs(), len))
        .unwrap() as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / MAX_N as f64).exp()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F-measure with β = 1.2, taking the best precision and the best
/// recall over references separately.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    const BETA: f64 = 1.2;
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let (mut p_max, mut r_max) = (0.0f64, 0.0f64);
    for r in references {
        if r.is_empty() {
            continue;
        }
        let lcs = lcs_len(r, candidate) as f64;
        p_max = p_max.max(lcs / candidate.len() as f64);
        r_max = r_max.max(lcs / r.len() as f64);
    }
    if p_max == 0.0 || r_max == 0.0 {
        return 0.0;
    }
    (1.0 + BETA * BETA) * p_max * r_max / (r_max + BETA * BETA * p_max)
}

/// TF-IDF n-gram vectors for one sentence, n = 1..4.
struct NgramVector<'a> {
    weights: [BTreeMap<&'a [String], f64>; MAX_N],
    norms: [f64; MAX_N],
    /// Bigram count, the length measure the reference toolkit uses.
    length: f64,
}

/// CIDEr-D with document frequencies taken from the reference corpus.
pub struct CiderD<'a> {
    doc_freq: HashMap<&'a [String], f64>,
    log_corpus_size: f64,
    sigma: f64,
}

impl<'a> CiderD<'a> {
    /// `references[i]` holds the reference captions of corpus item `i`.
    pub fn new(references: &'a [Vec<Vec<String>>]) -> Self {
        let mut doc_freq: HashMap<&[String], f64> = HashMap::new();
        for refs in references {
            let mut seen = std::collections::HashSet::new();
            for r in refs {
                for n in 1..=MAX_N {
                    if r.len() >= n {
                        seen.extend(r.windows(n));
                    }
                }
            }
            for g in seen {
                *doc_freq.entry(g).or_insert(0.0) += 1.0;
            }
        }
        CiderD {
            doc_freq,
            log_corpus_size: (references.len().max(1) as f64).ln(),
            sigma: CIDER_SIGMA,
        }
    }

    fn vectorize<'s>(&self, tokens: &'s [String]) -> NgramVector<'s> {
        let mut v = NgramVector {
            weights: Default::default(),
            norms: [0.0; MAX_N],
            length: 0.0,
        };
        for n in 1..=MAX_N {
            for (g, tf) in ngram_counts(tokens, n) {
                let df = self.doc_freq.get(g).copied().unwrap_or(0.0).max(1.0);
                let w = tf as f64 * (self.log_corpus_size - df.ln());
                v.norms[n - 1] += w * w;
                v.weights[n - 1].insert(g, w);
                if n == 2 {
                    v.length += tf as f64;
                }
            }
            v.norms[n - 1] = v.norms[n - 1].sqrt();
        }
        v
    }

    fn similarity(&self, cand: &NgramVector, reference: &NgramVector) -> f64 {
        let delta = cand.length - reference.length;
        let penalty = (-(delta * delta) / (2.0 * self.sigma * self.sigma)).exp();
        let mut total = 0.0;
        for n in 0..MAX_N {
            let mut val = 0.0;
            for (g, &w) in &cand.weights[n] {
                if let Some(&rw) = reference.weights[n].get(g) {
                    val += w.min(rw) * rw;
                }
            }
            if cand.norms[n] != 0.0 && reference.norms[n] != 0.0 {
                val /= cand.norms[n] * reference.norms[n];
            }
            total += val * penalty;
        }
        total
    }

    /// Score of one candidate against its references (×10 scale).
    pub fn score(&self, candidate: &[String], references: &[Vec<String>]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let cand = self.vectorize(candidate);
        let sum: f64 = references.iter().map(|r| self.similarity(&cand, &self.vectorize(r))).sum();
        sum / MAX_N as f64 / references.len() as f64 * 10.0
    }
}

/// Per-candidate CIDEr-D scores and their mean over the corpus.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> (Vec<f64>, f64) {
    let scorer = CiderD::new(references);
    let scores: Vec<f64> = candidates.iter().zip(references).map(|(c, r)| scorer.score(c, r)).collect();
    let mean = mean(&scores);
    (scores, mean)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionSample {
    pub id: String,
    pub proposal_box: OrientedBox3D,
    pub gt_box: OrientedBox3D,
    pub references: Vec<Vec<String>>,
    pub candidate: Vec<String>,
}

/// Input line: `{"id", "proposal_box", "gt_box", "candidate", "references"}`
/// with raw caption texts.
#[derive(Debug, Clone, Deserialize)]
pub struct CaptionRecord {
    #[serde(alias = "object_id")]
    pub id: String,
    pub proposal_box: Vec<f64>,
    pub gt_box: Vec<f64>,
    #[serde(default)]
    pub candidate: String,
    pub references: Vec<String>,
}

impl TryFrom<CaptionRecord> for CaptionSample {
    type Error = crate::Error;

    fn try_from(r: CaptionRecord) -> Result<Self> {
        if r.references.is_empty() {
            return Err(crate::Error::invalid(format!("object {:?} has no reference captions", r.id)));
        }
        Ok(CaptionSample {
            proposal_box: box_from_numbers(&r.proposal_box, &format!("object {:?} proposal_box", r.id))?,
            gt_box: box_from_numbers(&r.gt_box, &format!("object {:?} gt_box", r.id))?,
            references: r.references.iter().map(|t| tokenize(t)).collect(),
            candidate: tokenize(&r.candidate),
            id: r.id,
        })
    }
}

pub fn read_caption_samples(path: &Path) -> Result<Vec<CaptionSample>> {
    read_jsonl::<CaptionRecord>(path)?.into_iter().map(CaptionSample::try_from).collect()
}

/// Replaces candidates with model answers keyed by object id; objects
/// without an answer get an empty caption.
pub fn apply_predictions(samples: &mut [CaptionSample], predictions: &HashMap<String, String>) {
    for s in samples {
        s.candidate = predictions.get(&s.id).map(|t| tokenize(t)).unwrap_or_default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptionScore {
    pub iou: f64,
    pub passed: bool,
    pub cider: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionScores {
    pub gate: f64,
    pub per_sample: Vec<(String, CaptionScore)>,
    pub cider: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
}

/// Scores every sample, zeroing the metrics of those whose proposal misses
/// the gate. IDF statistics always come from the whole reference corpus.
pub fn iou_gated_scores(samples: &[CaptionSample], gate: f64) -> CaptionScores {
    let refs: Vec<Vec<Vec<String>>> = samples.iter().map(|s| s.references.clone()).collect();
    let scorer = CiderD::new(&refs);
    let per_sample: Vec<(String, CaptionScore)> = samples
        .par_iter()
        .map(|s| {
            let iou = iou_3d(&s.proposal_box, &s.gt_box);
            let passed = iou >= gate;
            let score = if passed {
                CaptionScore {
                    iou,
                    passed,
                    cider: scorer.score(&s.candidate, &s.references),
                    bleu4: bleu4(&s.candidate, &s.references),
                    rouge_l: rouge_l(&s.candidate, &s.references),
                }
            } else {
                CaptionScore { iou, passed, cider: 0.0, bleu4: 0.0, rouge_l: 0.0 }
            };
            (s.id.clone(), score)
        })
        .collect();
    let col = |f: fn(&CaptionScore) -> f64| mean(&per_sample.iter().map(|(_, s)| f(s)).collect::<Vec<_>>());
    CaptionScores {
        gate,
        cider: col(|s| s.cider),
        bleu4: col(|s| s.bleu4),
        rouge_l: col(|s| s.rouge_l),
        per_sample,
    }
}

impl CaptionScores {
    pub fn to_report(&self) -> Report {
        let g = self.gate;
        let mut r = Report::new("eval-caption");
        r.metric("objects", self.per_sample.len());
        r.metric("passed_gate", self.per_sample.iter().filter(|(_, s)| s.passed).count());
        r.metric(&format!("C@{g}"), self.cider);
        r.metric(&format!("B-4@{g}"), self.bleu4);
        r.metric(&format!("M@{g}"), Cell::NotAvailable);
        r.metric(&format!("R@{g}"), self.rouge_l);
        r.note("CIDEr is CIDEr-D; METEOR is not computed");
        let mut t = Table::new("per_object", &["id", "iou", "passed", "cider", "bleu4", "rouge_l"]);
        for (id, s) in &self.per_sample {
            t.push(vec![
                id.clone().into(),
                s.iou.into(),
                Cell::from(if s.passed { "yes" } else { "no" }),
                s.cider.into(),
                s.bleu4.into(),
                s.rouge_l.into(),
            ]);
        }
        r.tables.push(t);
        r
    }
}
