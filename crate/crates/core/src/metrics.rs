//! Text- and task-level evaluation: BLEU, semantic service quality (SSQ),
//! compression ratio, and the continual-learning evaluation matrix with its
//! CSV serializations.
//!
//! Two readings in the BLEU formula are deliberate and documented:
//!
//! * The brevity term is `min(1 - l_cand/l_ref, 0)` in log space, which
//!   penalizes *long* candidates -- the reverse of conventional BLEU.
//!   [`BleuConfig::standard_brevity`] switches to the conventional
//!   `min(1 - l_ref/l_cand, 0)` for comparison runs.
//! * The "any p_n = 0 makes the score 0" rule applies only to orders with
//!   positive weight. Without that exclusion the 1-gram variant (weights
//!   `(1, 0)`) would be zeroed by a missing bigram it does not even score.
//!
//! A consequence of the printed rules: a variant with positive weight at
//! order `n` scores 0 for any candidate shorter than `n` tokens, including
//! a perfect copy of the reference. `BLEU(s, s) = 1` therefore holds for
//! sentences at least as long as the highest positively-weighted order.
//!
//! All CSV values are written with Rust's shortest round-trip `f64`
//! formatting, so parsing a written file recovers bit-identical numbers;
//! re-running a deterministic experiment reproduces files byte-for-byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the "weights sum to one" check.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Hole marker for missing continual-map cells.
pub const HOLE_MARKER: &str = "NA";

/// Header of the BLEU-vs-SNR CSV.
pub const BLEU_CSV_HEADER: &str = "snr_db,variant,mean,stddev,n";

/// Header of the continual-learning map CSV.
pub const CONTINUAL_CSV_HEADER: &str = "stage,dataset,variant,value";

/// BLEU weighting scheme: weight `weights[i]` applies to order `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    /// Per-order weights `u_1..u_N`; non-negative, summing to one.
    pub weights: Vec<f64>,
    /// Score with the conventional short-candidate brevity penalty instead
    /// of the long-candidate rule used by default.
    pub standard_brevity: bool,
}

impl BleuConfig {
    /// Validated config from explicit weights.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let cfg = BleuConfig { weights, standard_brevity: false };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unigram-only variant, weights `(1, 0)`.
    pub fn one_gram() -> Self {
        BleuConfig { weights: vec![1.0, 0.0], standard_brevity: false }
    }

    /// Balanced bigram variant, weights `(0.5, 0.5)`.
    pub fn two_gram() -> Self {
        BleuConfig { weights: vec![0.5, 0.5], standard_brevity: false }
    }

    /// Same weights, conventional brevity penalty.
    pub fn with_standard_brevity(mut self) -> Self {
        self.standard_brevity = true;
        self
    }

    /// Highest order carrying any weight.
    pub fn max_order(&self) -> usize {
        self.weights.len()
    }

    /// Checks the weight invariants.
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Contract("BLEU needs at least one n-gram order".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract(format!(
                "BLEU weights must be finite and non-negative, got {:?}",
                self.weights
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Contract(format!("BLEU weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Clipped n-gram precision as a ratio of counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NgramPrecision {
    /// Candidate n-grams matched after clipping by reference counts.
    pub matched: usize,
    /// Total candidate n-grams.
    pub total: usize,
}

impl NgramPrecision {
    /// `matched / total`; 0 when the candidate has no n-grams of this order.
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }

    /// True when the candidate was too short to contain any n-gram of this
    /// order, making the precision 0 by convention rather than measurement.
    pub fn is_degenerate(&self) -> bool {
        self.total == 0
    }
}

fn ngram_counts(seq: &[u32], n: usize) -> BTreeMap<&[u32], usize> {
    let mut counts = BTreeMap::new();
    if n > 0 && seq.len() >= n {
        for gram in seq.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram precision of `candidate` against `reference`:
/// `sum_k min(C_k(candidate), C_k(reference)) / sum_k C_k(candidate)`.
///
/// A candidate shorter than `n` yields a degenerate zero precision rather
/// than an error; an empty reference cannot be scored against at all.
pub fn ngram_precision(reference: &[u32], candidate: &[u32], n: usize) -> Result<NgramPrecision> {
    if n == 0 {
        return Err(Error::Contract("n-gram order must be at least 1".into()));
    }
    if reference.is_empty() {
        return Err(Error::Degenerate("n-gram precision against an empty reference".into()));
    }
    if candidate.len() < n {
        return Ok(NgramPrecision { matched: 0, total: 0 });
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(gram, &c)| c.min(refc.get(gram).copied().unwrap_or(0)))
        .sum();
    Ok(NgramPrecision { matched, total: candidate.len() - n + 1 })
}

/// A BLEU score plus a flag marking scores that are 0 by convention
/// (empty or too-short candidate) rather than by measured mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuOutcome {
    /// Score in `[0, 1]`.
    pub score: f64,
    /// True when a degenerate input forced the score to 0.
    pub degenerate: bool,
}

/// Sentence-level BLEU of `candidate` against `reference`:
/// `log BLEU = min(1 - l_cand/l_ref, 0) + sum_n u_n ln p_n` over orders with
/// positive weight; any such `p_n = 0` zeroes the score.
pub fn bleu(reference: &[u32], candidate: &[u32], cfg: &BleuConfig) -> Result<BleuOutcome> {
    cfg.validate()?;
    if reference.is_empty() {
        return Err(Error::Degenerate("BLEU against an empty reference".into()));
    }
    if candidate.is_empty() {
        return Ok(BleuOutcome { score: 0.0, degenerate: true });
    }
    let (l_cand, l_ref) = (candidate.len() as f64, reference.len() as f64);
    let brevity_log = if cfg.standard_brevity {
        (1.0 - l_ref / l_cand).min(0.0)
    } else {
        (1.0 - l_cand / l_ref).min(0.0)
    };
    let mut log_score = brevity_log;
    for (i, &u) in cfg.weights.iter().enumerate() {
        if u == 0.0 {
            continue; // zero-weight orders cannot zero the score
        }
        let p = ngram_precision(reference, candidate, i + 1)?;
        if p.matched == 0 {
            return Ok(BleuOutcome { score: 0.0, degenerate: p.is_degenerate() });
        }
        log_score += u * p.value().ln();
    }
    Ok(BleuOutcome { score: log_score.exp(), degenerate: false })
}

/// Task evaluator backing SSQ: maps a set of sentences to an accuracy in
/// `[0, 1]` against ground truth it holds internally.
pub trait TaskEvaluator {
    /// Accuracy of the task performed on `sentences`.
    fn accuracy(&self, sentences: &[Vec<u32>]) -> f64;
}

impl<F: Fn(&[Vec<u32>]) -> f64> TaskEvaluator for F {
    fn accuracy(&self, sentences: &[Vec<u32>]) -> f64 {
        self(sentences)
    }
}

/// Semantic service quality of a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Ssq {
    /// `ST(recovered) / ST(source)`.
    Value(f64),
    /// The task already fails on the source set, so the ratio is undefined.
    Undefined,
}

impl Ssq {
    /// The ratio, if defined.
    pub fn as_value(&self) -> Option<f64> {
        match self {
            Ssq::Value(v) => Some(*v),
            Ssq::Undefined => None,
        }
    }
}

fn checked_accuracy<T: TaskEvaluator + ?Sized>(task: &T, set: &[Vec<u32>], side: &str) -> Result<f64> {
    let acc = task.accuracy(set);
    if !(0.0..=1.0).contains(&acc) {
        return Err(Error::Contract(format!(
            "task evaluator returned {acc} on the {side} set; accuracies live in [0,1]"
        )));
    }
    Ok(acc)
}

/// Service-quality ratio `ST(recovered) / ST(source)` for one-to-one aligned
/// sentence sets under a pluggable task evaluator.
pub fn ssq<T: TaskEvaluator + ?Sized>(
    task: &T,
    source: &[Vec<u32>],
    recovered: &[Vec<u32>],
) -> Result<Ssq> {
    if source.len() != recovered.len() {
        return Err(Error::Contract(format!(
            "source and recovered sets must align one-to-one: {} vs {}",
            source.len(),
            recovered.len()
        )));
    }
    if source.is_empty() {
        return Err(Error::Degenerate("SSQ over empty sets".into()));
    }
    let st_source = checked_accuracy(task, source, "source")?;
    let st_recovered = checked_accuracy(task, recovered, "recovered")?;
    if st_source == 0.0 {
        return Ok(Ssq::Undefined);
    }
    Ok(Ssq::Value(st_recovered / st_source))
}

/// Transmitted-to-original payload size ratio:
/// `(symbols * bits_per_symbol) / (original_bytes * 8)`.
pub fn compression_ratio(original_bytes: u64, symbols: u64, bits_per_symbol: u32) -> Result<f64> {
    if original_bytes == 0 || symbols == 0 || bits_per_symbol == 0 {
        return Err(Error::Contract(format!(
            "compression ratio needs positive sizes, got {original_bytes} bytes, \
             {symbols} symbols, {bits_per_symbol} bits/symbol"
        )));
    }
    Ok((symbols * bits_per_symbol as u64) as f64 / (original_bytes * 8) as f64)
}

/// Square evaluation matrix of a continual-learning run: rows are stages
/// (the dataset just trained through), columns are evaluated datasets, and
/// cells hold one metric value or an explicit hole.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatrix {
    datasets: Vec<String>,
    cells: Vec<Option<f64>>, // row-major [n, n]
}

fn check_csv_field(s: &str, what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Contract(format!("{what} must not be empty")));
    }
    if s.contains(',') || s.contains('\n') || s.contains('\r') {
        return Err(Error::Contract(format!("{what} {s:?} contains CSV delimiters")));
    }
    Ok(())
}

impl EvalMatrix {
    /// Empty (all-hole) matrix over the dataset sequence.
    pub fn new<S: AsRef<str>>(datasets: &[S]) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::Contract("evaluation matrix needs at least one dataset".into()));
        }
        let names: Vec<String> = datasets.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            check_csv_field(name, "dataset name")?;
            if names[..i].contains(name) {
                return Err(Error::Contract(format!("duplicate dataset name {name:?}")));
            }
        }
        let n = names.len();
        Ok(EvalMatrix { datasets: names, cells: vec![None; n * n] })
    }

    /// Number of datasets (and stages).
    pub fn size(&self) -> usize {
        self.datasets.len()
    }

    /// Dataset names in training/evaluation order.
    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    /// Index of a dataset name, if present.
    pub fn index_of(&self, dataset: &str) -> Option<usize> {
        self.datasets.iter().position(|d| d == dataset)
    }

    /// Fills cell (stage, dataset).
    pub fn set(&mut self, stage: usize, dataset: usize, value: f64) -> Result<()> {
        let n = self.size();
        if stage >= n || dataset >= n {
            return Err(Error::Contract(format!(
                "cell ({stage}, {dataset}) outside a {n}x{n} matrix"
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("matrix cell ({stage}, {dataset})")));
        }
        self.cells[stage * n + dataset] = Some(value);
        Ok(())
    }

    /// Cell (stage, dataset); `None` marks a hole.
    ///
    /// # Panics
    /// On out-of-range indices (a programming error, unlike a hole).
    pub fn get(&self, stage: usize, dataset: usize) -> Option<f64> {
        let n = self.size();
        assert!(stage < n && dataset < n, "cell ({stage}, {dataset}) outside a {n}x{n} matrix");
        self.cells[stage * n + dataset]
    }

    /// True when no cell is a hole.
    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| c.is_some())
    }
}

/// Assembles per-variant evaluation matrices into the long-format CSV
/// `stage,dataset,variant,value`, one row per cell, holes written as
/// [`HOLE_MARKER`]. All matrices must share one dataset sequence.
pub fn write_continual_csv(variants: &[(String, EvalMatrix)]) -> Result<String> {
    if variants.is_empty() {
        return Err(Error::Contract("continual CSV needs at least one variant".into()));
    }
    let datasets = variants[0].1.datasets();
    for (name, matrix) in variants {
        check_csv_field(name, "variant name")?;
        if matrix.datasets() != datasets {
            return Err(Error::Contract(format!(
                "variant {name:?} disagrees on the dataset sequence"
            )));
        }
    }
    let mut out = String::from(CONTINUAL_CSV_HEADER);
    out.push('\n');
    for (variant, matrix) in variants {
        for (i, stage) in datasets.iter().enumerate() {
            for (j, dataset) in datasets.iter().enumerate() {
                match matrix.get(i, j) {
                    Some(v) => out.push_str(&format!("{stage},{dataset},{variant},{v}\n")),
                    None => out.push_str(&format!("{stage},{dataset},{variant},{HOLE_MARKER}\n")),
                }
            }
        }
    }
    Ok(out)
}

/// Parses a continual-map CSV back into per-variant matrices; exact inverse
/// of [`write_continual_csv`] on its own output.
pub fn read_continual_csv(text: &str) -> Result<Vec<(String, EvalMatrix)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CONTINUAL_CSV_HEADER => {}
        other => {
            return Err(Error::Contract(format!(
                "continual CSV must start with {CONTINUAL_CSV_HEADER:?}, got {other:?}"
            )))
        }
    }
    // First pass: dataset order (from the stage column) and variant order.
    let mut datasets: Vec<String> = Vec::new();
    let mut variant_names: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let [stage, dataset, variant, value] = fields.as_slice() else {
            return Err(Error::Contract(format!(
                "continual CSV line {}: expected 4 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        };
        if !datasets.iter().any(|d| d == stage) {
            datasets.push(stage.to_string());
        }
        if !variant_names.iter().any(|v| v == variant) {
            variant_names.push(variant.to_string());
        }
        rows.push((stage.to_string(), dataset.to_string(), variant.to_string(), value.to_string()));
    }
    let mut variants: Vec<(String, EvalMatrix)> = variant_names
        .iter()
        .map(|name| Ok((name.clone(), EvalMatrix::new(&datasets)?)))
        .collect::<Result<_>>()?;
    for (stage, dataset, variant, value) in rows {
        let matrix = &mut variants
            .iter_mut()
            .find(|(n, _)| *n == variant)
            .expect("variant collected in first pass")
            .1;
        let (Some(i), Some(j)) = (matrix.index_of(&stage), matrix.index_of(&dataset)) else {
            return Err(Error::Contract(format!(
                "continual CSV cell ({stage:?}, {dataset:?}) references an unknown dataset"
            )));
        };
        if value != HOLE_MARKER {
            let v: f64 = value
                .parse()
                .map_err(|_| Error::Contract(format!("unparsable cell value {value:?}")))?;
            matrix.set(i, j, v)?;
        }
    }
    Ok(variants)
}

/// One aggregated row of a BLEU-vs-SNR sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuRow {
    /// Channel SNR in dB.
    pub snr_db: f64,
    /// Scoring variant label (for example `one_gram`).
    pub variant: String,
    /// Mean score across seeds.
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub stddev: f64,
    /// Number of seeds aggregated.
    pub n: usize,
}

/// Serializes sweep rows as `snr_db,variant,mean,stddev,n`.
pub fn write_bleu_csv(rows: &[BleuRow]) -> Result<String> {
    let mut out = String::from(BLEU_CSV_HEADER);
    out.push('\n');
    for row in rows {
        check_csv_field(&row.variant, "variant name")?;
        for (what, v) in [("snr_db", row.snr_db), ("mean", row.mean), ("stddev", row.stddev)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("BLEU CSV field {what}")));
            }
        }
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.snr_db, row.variant, row.mean, row.stddev, row.n
        ));
    }
    Ok(out)
}

/// Parses a sweep CSV; exact inverse of [`write_bleu_csv`] on its output.
pub fn read_bleu_csv(text: &str) -> Result<Vec<BleuRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == BLEU_CSV_HEADER => {}
        other => {
            return Err(Error::Contract(format!(
                "BLEU CSV must start with {BLEU_CSV_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let [snr, variant, mean, stddev, n] = fields.as_slice() else {
            return Err(Error::Contract(format!(
                "BLEU CSV line {}: expected 5 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        };
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Contract(format!("BLEU CSV {what} {s:?} is not a number")))
        };
        rows.push(BleuRow {
            snr_db: parse_f(snr, "snr_db")?,
            variant: variant.to_string(),
            mean: parse_f(mean, "mean")?,
            stddev: parse_f(stddev, "stddev")?,
            n: n.parse()
                .map_err(|_| Error::Contract(format!("BLEU CSV n {n:?} is not a count")))?,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation (n-1 denominator; 0 for a singleton).
pub fn mean_stddev(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::Degenerate("statistics of an empty sample".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RunRng, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    // Independent brute-force n-gram precision: explicit position loops and
    // per-type clipping over a scanned list, no shared code with the
    // implementation above.
    fn brute_precision(reference: &[u32], candidate: &[u32], n: usize) -> (usize, usize) {
        if candidate.len() < n {
            return (0, 0);
        }
        let grams = |seq: &[u32]| -> Vec<Vec<u32>> {
            (0..=seq.len() - n).map(|i| seq[i..i + n].to_vec()).collect()
        };
        let cand = grams(candidate);
        let refr = if reference.len() < n { Vec::new() } else { grams(reference) };
        let mut seen: Vec<Vec<u32>> = Vec::new();
        let mut matched = 0usize;
        for g in &cand {
            if seen.contains(g) {
                continue;
            }
            seen.push(g.clone());
            let c_cand = cand.iter().filter(|x| *x == g).count();
            let c_ref = refr.iter().filter(|x| *x == g).count();
            matched += c_cand.min(c_ref);
        }
        (matched, cand.len())
    }

    fn brute_bleu(reference: &[u32], candidate: &[u32], cfg: &BleuConfig) -> f64 {
        if candidate.is_empty() {
            return 0.0;
        }
        let (lc, lr) = (candidate.len() as f64, reference.len() as f64);
        let mut log = if cfg.standard_brevity {
            (1.0 - lr / lc).min(0.0)
        } else {
            (1.0 - lc / lr).min(0.0)
        };
        for (i, &u) in cfg.weights.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let (m, t) = brute_precision(reference, candidate, i + 1);
            if m == 0 {
                return 0.0;
            }
            log += u * (m as f64 / t as f64).ln();
        }
        log.exp()
    }

    #[test]
    fn precision_matches_hand_counted_cases() {
        // "a b c" vs candidate "a b d" at n = 1: clipped matches a, b.
        let s = [10, 11, 12];
        let c = [10, 11, 13];
        let p = ngram_precision(&s, &c, 1).unwrap();
        assert_eq!((p.matched, p.total), (2, 3));
        assert!((p.value() - 2.0 / 3.0).abs() < 1e-15);
        assert!(!p.is_degenerate());

        // Identical sequences are perfect at every valid order.
        for n in 1..=3 {
            assert_eq!(ngram_precision(&s, &s, n).unwrap().value(), 1.0);
        }

        // Disjoint vocabularies share nothing.
        assert_eq!(ngram_precision(&s, &[20, 21, 22], 1).unwrap().value(), 0.0);

        // Clipping: candidate repeats a token beyond its reference count.
        let p = ngram_precision(&[7, 7], &[7, 7, 7, 7, 7], 1).unwrap();
        assert_eq!((p.matched, p.total), (2, 5));
    }

    #[test]
    fn precision_flags_short_candidates_and_rejects_bad_inputs() {
        let p = ngram_precision(&[1, 2, 3], &[1], 2).unwrap();
        assert!(p.is_degenerate());
        assert_eq!(p.value(), 0.0);
        assert!(ngram_precision(&[], &[1], 1).is_err());
        assert!(ngram_precision(&[1], &[1], 0).is_err());
    }

    #[test]
    fn precision_matches_the_brute_force_oracle() {
        let mut rng = RunRng::new(21).stream(Stream::Eval);
        for _ in 0..200 {
            let len_r = rng.gen_range(1..=50);
            let len_c = rng.gen_range(0..=50usize);
            let vocab = rng.gen_range(2..12);
            let r: Vec<u32> = (0..len_r).map(|_| rng.gen_range(0..vocab)).collect();
            let c: Vec<u32> = (0..len_c).map(|_| rng.gen_range(0..vocab)).collect();
            for n in 1..=3 {
                let got = ngram_precision(&r, &c, n).unwrap();
                let (m, t) = brute_precision(&r, &c, n);
                assert_eq!((got.matched, got.total), (m, t), "r={r:?} c={c:?} n={n}");
            }
        }
    }

    #[test]
    fn bleu_of_identical_sentences_is_exactly_one() {
        let s = [5, 6, 7, 8];
        for cfg in [BleuConfig::one_gram(), BleuConfig::two_gram()] {
            assert_eq!(bleu(&s, &s, &cfg).unwrap().score, 1.0);
        }
    }

    #[test]
    fn bleu_two_gram_hand_case() {
        // Candidate [1,2,3,4] vs reference [1,2,4,3]: p1 = 1 (all four
        // tokens present once each), p2 = 1/3 (only (1,2) survives), equal
        // lengths so no brevity term: score = sqrt(1/3).
        let out = bleu(&[1, 2, 4, 3], &[1, 2, 3, 4], &BleuConfig::two_gram()).unwrap();
        assert!((out.score - (1.0f64 / 3.0).sqrt()).abs() < 1e-12, "{}", out.score);
    }

    #[test]
    fn bleu_brevity_penalizes_long_candidates_unless_standard() {
        // Candidate of 5 repeats vs reference of 2: p1 = 2/5; the printed
        // rule adds log-penalty 1 - 5/2 = -1.5, conventional brevity none.
        let r = [7, 7];
        let c = [7, 7, 7, 7, 7];
        let printed = bleu(&r, &c, &BleuConfig::one_gram()).unwrap().score;
        assert!((printed - 0.4 * (-1.5f64).exp()).abs() < 1e-12, "{printed}");
        let standard =
            bleu(&r, &c, &BleuConfig::one_gram().with_standard_brevity()).unwrap().score;
        assert!((standard - 0.4).abs() < 1e-15, "{standard}");

        // Short candidates: printed rule is free, conventional penalizes.
        let printed_short = bleu(&c, &r, &BleuConfig::one_gram()).unwrap().score;
        assert!((printed_short - 1.0).abs() < 1e-15, "{printed_short}");
        let standard_short =
            bleu(&c, &r, &BleuConfig::one_gram().with_standard_brevity()).unwrap().score;
        assert!((standard_short - (1.0 - 2.5f64).exp()).abs() < 1e-12, "{standard_short}");
    }

    #[test]
    fn zero_weight_orders_cannot_zero_the_score() {
        // Reversed bigram: no bigram overlap, perfect unigram overlap.
        let r = [1, 2];
        let c = [2, 1];
        assert_eq!(bleu(&r, &c, &BleuConfig::one_gram()).unwrap().score, 1.0);
        let two = bleu(&r, &c, &BleuConfig::two_gram()).unwrap();
        assert_eq!(two.score, 0.0);
        assert!(!two.degenerate, "a measured zero precision is not degenerate");
    }

    #[test]
    fn bleu_flags_degenerate_candidates() {
        let out = bleu(&[1, 2, 3], &[], &BleuConfig::one_gram()).unwrap();
        assert_eq!(out.score, 0.0);
        assert!(out.degenerate);
        // Single-token candidate under a positively-weighted bigram order.
        let out = bleu(&[1, 2, 3], &[1], &BleuConfig::two_gram()).unwrap();
        assert_eq!(out.score, 0.0);
        assert!(out.degenerate);
        assert!(bleu(&[], &[1], &BleuConfig::one_gram()).is_err());
        assert!(BleuConfig::new(vec![0.3, 0.3]).is_err());
        assert!(BleuConfig::new(vec![-0.5, 1.5]).is_err());
        assert!(BleuConfig::new(vec![]).is_err());
    }

    #[test]
    fn bleu_matches_the_brute_force_oracle_on_random_pairs() {
        let mut rng = RunRng::new(33).stream(Stream::Eval);
        let configs = [
            BleuConfig::one_gram(),
            BleuConfig::two_gram(),
            BleuConfig::one_gram().with_standard_brevity(),
            BleuConfig::two_gram().with_standard_brevity(),
        ];
        for i in 0..100 {
            let len_r = rng.gen_range(1..=30);
            let len_c = rng.gen_range(1..=30usize);
            let vocab = rng.gen_range(2..10);
            let r: Vec<u32> = (0..len_r).map(|_| rng.gen_range(0..vocab)).collect();
            let c: Vec<u32> = (0..len_c).map(|_| rng.gen_range(0..vocab)).collect();
            for cfg in &configs {
                let got = bleu(&r, &c, cfg).unwrap().score;
                let want = brute_bleu(&r, &c, cfg);
                assert!((got - want).abs() < 1e-12, "pair {i}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn ssq_ratio_and_undefined_cases() {
        let source: Vec<Vec<u32>> = (0..10).map(|i| vec![i]).collect();
        // Task: a sentence is "correct" when its first token matches its
        // index parity oracle -- here simply token < 10.
        let task = |set: &[Vec<u32>]| -> f64 {
            set.iter().filter(|s| s[0] < 10).count() as f64 / set.len() as f64
        };
        assert_eq!(ssq(&task, &source, &source).unwrap(), Ssq::Value(1.0));

        // Half the recovered sentences corrupted out of range.
        let mut recovered = source.clone();
        for r in recovered.iter_mut().take(5) {
            r[0] += 100;
        }
        assert_eq!(ssq(&task, &source, &recovered).unwrap(), Ssq::Value(0.5));

        // Task failing on the source entirely: undefined ratio.
        let broken = |_: &[Vec<u32>]| 0.0;
        assert_eq!(ssq(&broken, &source, &recovered).unwrap(), Ssq::Undefined);
        assert_eq!(Ssq::Undefined.as_value(), None);

        // Misaligned sets and out-of-range evaluators are contract errors.
        assert!(ssq(&task, &source, &recovered[..4]).is_err());
        let bogus = |_: &[Vec<u32>]| 1.5;
        assert!(ssq(&bogus, &source, &recovered).is_err());
    }

    #[test]
    fn ssq_is_scale_free() {
        let source: Vec<Vec<u32>> = (0..8).map(|i| vec![i]).collect();
        let recovered: Vec<Vec<u32>> = (0..8).map(|i| vec![i + (i % 2) * 50]).collect();
        let base = |set: &[Vec<u32>]| -> f64 {
            set.iter().filter(|s| s[0] < 8).count() as f64 / set.len() as f64
        };
        let scaled = move |set: &[Vec<u32>]| 0.25 * base(set);
        let a = ssq(&base, &source, &recovered).unwrap();
        let b = ssq(&scaled, &source, &recovered).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compression_ratio_fixture_is_one_sixth() {
        // 128 symbols of 32 bits against a 32x32 RGB byte image.
        let got = compression_ratio(32 * 32 * 3, 128, 32).unwrap();
        assert_eq!(got, 1.0 / 6.0);
        assert_eq!(compression_ratio(100, 100, 8).unwrap(), 1.0);
        // Monotone in symbol count.
        let less = compression_ratio(1000, 50, 16).unwrap();
        let more = compression_ratio(1000, 51, 16).unwrap();
        assert!(more > less);
        assert!(compression_ratio(0, 128, 32).is_err());
        assert!(compression_ratio(100, 0, 32).is_err());
        assert!(compression_ratio(100, 128, 0).is_err());
    }

    #[test]
    fn eval_matrix_shape_diagonal_and_holes() {
        let mut m = EvalMatrix::new(&["d1", "d2", "d3"]).unwrap();
        assert_eq!(m.size(), 3);
        assert!(!m.is_complete());
        for i in 0..3 {
            for j in 0..3 {
                m.set(i, j, (10 * i + j) as f64 / 10.0).unwrap();
            }
        }
        assert!(m.is_complete());
        assert_eq!(m.get(1, 1), Some(1.1));
        assert_eq!(m.index_of("d2"), Some(1));
        assert!(m.set(3, 0, 0.5).is_err());
        assert!(m.set(0, 0, f64::NAN).is_err());
        assert!(EvalMatrix::new::<&str>(&[]).is_err());
        assert!(EvalMatrix::new(&["a", "a"]).is_err());
        assert!(EvalMatrix::new(&["a,b"]).is_err());
    }

    #[test]
    fn continual_csv_round_trips_exactly_with_holes() {
        let mut one = EvalMatrix::new(&["d1", "d2", "d3"]).unwrap();
        let mut two = EvalMatrix::new(&["d1", "d2", "d3"]).unwrap();
        // Awkward values that expose any formatting loss.
        let vals = [0.1 + 0.2, 1.0 / 3.0, 5e-324, 0.937, 1.0, 0.0];
        let mut k = 0;
        for i in 0..3 {
            for j in 0..3 {
                if (i, j) != (0, 2) {
                    one.set(i, j, vals[k % vals.len()]).unwrap();
                    k += 1;
                }
                two.set(i, j, (i * 3 + j) as f64 * 0.111).unwrap();
            }
        }
        let variants = vec![("one_gram".to_string(), one), ("two_gram".to_string(), two)];
        let csv = write_continual_csv(&variants).unwrap();
        assert!(csv.starts_with("stage,dataset,variant,value\n"));
        assert!(csv.contains("d1,d3,one_gram,NA\n"), "hole must be explicit:\n{csv}");

        let back = read_continual_csv(&csv).unwrap();
        assert_eq!(back, variants, "round trip must preserve every bit");
        // Writing the parsed form reproduces the bytes.
        assert_eq!(write_continual_csv(&back).unwrap(), csv);
    }

    #[test]
    fn continual_csv_rejects_malformed_input() {
        assert!(read_continual_csv("bogus header\n").is_err());
        assert!(read_continual_csv("stage,dataset,variant,value\na,b,c\n").is_err());
        assert!(read_continual_csv("stage,dataset,variant,value\nd1,d1,v,notanumber\n").is_err());
        let a = EvalMatrix::new(&["d1"]).unwrap();
        let b = EvalMatrix::new(&["other"]).unwrap();
        assert!(write_continual_csv(&[("v1".into(), a), ("v2".into(), b)]).is_err());
        assert!(write_continual_csv(&[]).is_err());
    }

    #[test]
    fn bleu_csv_round_trips_exactly() {
        let rows = vec![
            BleuRow { snr_db: -2.5, variant: "one_gram".into(), mean: 0.1 + 0.2, stddev: 1e-17, n: 5 },
            BleuRow { snr_db: 0.0, variant: "two_gram".into(), mean: 2.0 / 3.0, stddev: 0.0, n: 1 },
        ];
        let csv = write_bleu_csv(&rows).unwrap();
        assert!(csv.starts_with("snr_db,variant,mean,stddev,n\n"));
        let back = read_bleu_csv(&csv).unwrap();
        assert_eq!(back, rows);
        assert_eq!(write_bleu_csv(&back).unwrap(), csv);

        assert!(read_bleu_csv("wrong\n").is_err());
        assert!(read_bleu_csv("snr_db,variant,mean,stddev,n\n1,v,x,0,1\n").is_err());
        let bad = BleuRow { snr_db: f64::NAN, variant: "v".into(), mean: 0.0, stddev: 0.0, n: 1 };
        assert!(write_bleu_csv(&[bad]).is_err());
    }

    #[test]
    fn mean_stddev_matches_hand_computation() {
        let (m, s) = mean_stddev(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((m - 2.5).abs() < 1e-15);
        // Sample variance: (2.25 + 0.25 + 0.25 + 2.25) / 3 = 5/3.
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stddev(&[7.0]).unwrap(), (7.0, 0.0));
        assert!(mean_stddev(&[]).is_err());
    }

    proptest! {
        #[test]
        fn bleu_is_bounded_and_perfect_on_identity(
            s in proptest::collection::vec(0u32..20, 2..40),
            c in proptest::collection::vec(0u32..20, 1..40),
        ) {
            for cfg in [BleuConfig::one_gram(), BleuConfig::two_gram()] {
                let out = bleu(&s, &c, &cfg).unwrap();
                prop_assert!((0.0..=1.0).contains(&out.score), "{}", out.score);
                // Identity is perfect whenever the sentence is long enough
                // to contain every positively-weighted order.
                prop_assert_eq!(bleu(&s, &s, &cfg).unwrap().score, 1.0);
            }
        }

        #[test]
        fn unigram_precision_is_permutation_invariant(
            s in proptest::collection::vec(0u32..10, 1..20),
            c in proptest::collection::vec(0u32..10, 1..20),
            swaps in proptest::collection::vec((0usize..20, 0usize..20), 0..16),
        ) {
            let p = ngram_precision(&s, &c, 1).unwrap();
            let mut shuffled = c.clone();
            for (a, b) in swaps {
                let (a, b) = (a % shuffled.len(), b % shuffled.len());
                shuffled.swap(a, b);
            }
            let q = ngram_precision(&s, &shuffled, 1).unwrap();
            prop_assert_eq!((p.matched, p.total), (q.matched, q.total));
            // Every order's matched count respects the clipped bound.
            for n in 1..=2usize {
                let p = ngram_precision(&s, &c, n).unwrap();
                let ref_total = s.len().saturating_sub(n - 1);
                prop_assert!(p.matched <= p.total && p.matched <= ref_total);
            }
        }
    }
}
