//! Biological objectives and the scalarized reward `R(x) = w·φ(x)`.
//!
//! Three raw objectives are computed per design: GC content, a folding
//! stability proxy and the codon adaptation index. Each is mapped into
//! `[0, 1]` so that larger is better, then combined with preference weights.
//!
//! The stability proxy is Nussinov base-pair maximization (Watson-Crick and
//! GU wobble pairs, minimum hairpin loop), reported as the pseudo-energy
//! `-pairs`. Users who need thermodynamic free energies can plug in an
//! external scorer command instead.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genetic_code::{codon_from_string, Base, Codon, MrnaSequence};

/// Human codon usage (per-thousand frequencies) bundled with the crate.
pub const HUMAN_CODON_USAGE: &str = include_str!("../data/human_codon_usage.txt");

/// Floor applied to relative adaptiveness so that CAI stays strictly positive
/// when a table lists a zero frequency.
pub const MIN_ADAPTIVENESS: f64 = 1e-4;

/// Preference weights on the probability simplex, ordered `(gc, mfe, cai)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct WeightVector([f64; 3]);

impl WeightVector {
    /// Normalizes `raw` onto the simplex. Rejects negative, non-finite or
    /// all-zero input.
    pub fn new(raw: [f64; 3]) -> Result<WeightVector> {
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Rejected(format!(
                "weights {raw:?} must be finite and non-negative"
            )));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Rejected("weights must not all be zero".into()));
        }
        // already-normalized input is kept bit-exact so round trips are stable
        if (total - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(WeightVector(raw));
        }
        Ok(WeightVector(raw.map(|v| v / total)))
    }

    pub fn uniform() -> WeightVector {
        WeightVector([1.0 / 3.0; 3])
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn dot(&self, phi: &[f64; 3]) -> f64 {
        self.0.iter().zip(phi).map(|(w, p)| w * p).sum()
    }
}

impl TryFrom<[f64; 3]> for WeightVector {
    type Error = Error;

    fn try_from(raw: [f64; 3]) -> Result<Self> {
        WeightVector::new(raw)
    }
}

impl From<WeightVector> for [f64; 3] {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Per-codon relative adaptiveness derived from usage frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct CodonUsageTable {
    frequency: [Option<f64>; 64],
    weight: [Option<f64>; 64],
}

impl CodonUsageTable {
    pub fn human() -> CodonUsageTable {
        CodonUsageTable::parse(HUMAN_CODON_USAGE).expect("bundled usage table is valid")
    }

    /// Builds a table from `(codon, frequency)` records. Stop codons are
    /// accepted but carry no weight.
    pub fn from_frequencies(
        records: impl IntoIterator<Item = (Codon, f64)>,
    ) -> Result<CodonUsageTable> {
        let mut frequency = [None; 64];
        for (codon, f) in records {
            if !f.is_finite() || f < 0.0 {
                return Err(Error::Config(format!(
                    "frequency {f} for {codon} is not a non-negative number"
                )));
            }
            frequency[codon.index()] = Some(f);
        }
        let mut weight = [None; 64];
        for codon in Codon::all().filter(|c| !c.is_stop()) {
            let Some(f) = frequency[codon.index()] else {
                continue;
            };
            let max = codon
                .amino_acid()
                .synonymous_codons()
                .iter()
                .filter_map(|s| frequency[s.index()])
                .fold(0.0_f64, f64::max);
            if max <= 0.0 {
                return Err(Error::Config(format!(
                    "all listed codons for {} have zero frequency",
                    codon.amino_acid()
                )));
            }
            weight[codon.index()] = Some((f / max).max(MIN_ADAPTIVENESS));
        }
        Ok(CodonUsageTable { frequency, weight })
    }

    /// Parses the text format: one `CODON frequency` record per line,
    /// `#` starts a comment. DNA letters are accepted.
    pub fn parse(text: &str) -> Result<CodonUsageTable> {
        let mut records = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(codon), Some(freq), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::Config(format!(
                    "usage table line {}: expected 'CODON frequency'",
                    lineno + 1
                )));
            };
            let codon = codon_from_string(codon)
                .map_err(|e| Error::Config(format!("usage table line {}: {e}", lineno + 1)))?;
            let freq: f64 = freq.parse().map_err(|_| {
                Error::Config(format!(
                    "usage table line {}: bad frequency '{freq}'",
                    lineno + 1
                ))
            })?;
            records.push((codon, freq));
        }
        CodonUsageTable::from_frequencies(records)
    }

    pub fn from_file(path: &Path) -> Result<CodonUsageTable> {
        CodonUsageTable::parse(&std::fs::read_to_string(path)?)
    }

    pub fn frequency(&self, codon: Codon) -> Option<f64> {
        self.frequency[codon.index()]
    }

    /// Relative adaptiveness `freq / max synonymous freq`, in `(0, 1]`.
    pub fn weight(&self, codon: Codon) -> Option<f64> {
        self.weight[codon.index()]
    }

    /// Serializes back to the text format (listed codons only).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in Codon::all() {
            if let Some(f) = self.frequency[c.index()] {
                out.push_str(&format!("{c} {f}\n"));
            }
        }
        out
    }
}

/// Fraction of G or C bases.
pub fn gc_content(x: &MrnaSequence) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Rejected("gc content of an empty sequence".into()));
    }
    let strong: usize = x
        .codons()
        .iter()
        .map(|c| c.bases().iter().filter(|b| b.is_strong()).count())
        .sum();
    Ok(strong as f64 / (3 * x.len()) as f64)
}

/// Codon adaptation index: geometric mean of relative adaptiveness.
pub fn cai(x: &MrnaSequence, table: &CodonUsageTable) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Rejected("cai of an empty sequence".into()));
    }
    let mut log_sum = 0.0;
    for c in x.codons() {
        let w = table
            .weight(*c)
            .ok_or_else(|| Error::Config(format!("codon usage table has no entry for {c}")))?;
        log_sum += w.ln();
    }
    Ok((log_sum / x.len() as f64).exp())
}

/// Whether two bases can pair (AU, GC or GU wobble, either orientation).
pub fn can_pair(a: Base, b: Base) -> bool {
    use Base::*;
    matches!((a, b), (A, U) | (U, A) | (G, C) | (C, G) | (G, U) | (U, G))
}

/// Nussinov dynamic programme over a base sequence.
struct PairTable {
    n: usize,
    min_loop: usize,
    table: Vec<u32>,
}

impl PairTable {
    fn fill(bases: &[Base], min_loop: usize) -> PairTable {
        let n = bases.len();
        let mut table = vec![0u32; n * n];
        // table[i*n + j] = max pairs in bases[i..=j]
        for span in (min_loop + 1)..n {
            for i in 0..n - span {
                let j = i + span;
                let mut best = table[i * n + j - 1];
                for k in i..(j - min_loop) {
                    if can_pair(bases[k], bases[j]) {
                        let left = if k > i { table[i * n + k - 1] } else { 0 };
                        let inner = if k + 1 < j {
                            table[(k + 1) * n + j - 1]
                        } else {
                            0
                        };
                        best = best.max(left + 1 + inner);
                    }
                }
                table[i * n + j] = best;
            }
        }
        PairTable { n, min_loop, table }
    }

    fn get(&self, i: usize, j: usize) -> u32 {
        if i >= self.n || j >= self.n || i >= j {
            0
        } else {
            self.table[i * self.n + j]
        }
    }

    fn max_pairs(&self) -> u32 {
        if self.n == 0 {
            0
        } else {
            self.get(0, self.n - 1)
        }
    }

    fn traceback(&self, bases: &[Base]) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        let mut stack = vec![(0usize, self.n.saturating_sub(1))];
        while let Some((i, j)) = stack.pop() {
            if self.n == 0 || i >= j {
                continue;
            }
            let here = self.get(i, j);
            if here == 0 {
                continue;
            }
            if here == self.get(i, j - 1) {
                stack.push((i, j - 1));
                continue;
            }
            for k in i..(j - self.min_loop) {
                if !can_pair(bases[k], bases[j]) {
                    continue;
                }
                let left = if k > i { self.get(i, k - 1) } else { 0 };
                let inner = if k + 1 < j { self.get(k + 1, j - 1) } else { 0 };
                if left + 1 + inner == here {
                    pairs.push((k, j));
                    if k > i {
                        stack.push((i, k - 1));
                    }
                    if k + 1 < j {
                        stack.push((k + 1, j - 1));
                    }
                    break;
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }
}

/// Maximum number of nested base pairs with hairpin loops of at least
/// `min_loop` unpaired bases.
pub fn max_base_pairs(bases: &[Base], min_loop: usize) -> u32 {
    PairTable::fill(bases, min_loop).max_pairs()
}

/// One optimal nested structure as sorted `(i, j)` pairs.
pub fn optimal_structure(bases: &[Base], min_loop: usize) -> Vec<(usize, usize)> {
    PairTable::fill(bases, min_loop).traceback(bases)
}

/// Dot-bracket rendering of a pair list over `n` bases.
pub fn dot_bracket(n: usize, pairs: &[(usize, usize)]) -> String {
    let mut s = vec!['.'; n];
    for &(i, j) in pairs {
        s[i] = '(';
        s[j] = ')';
    }
    s.into_iter().collect()
}

/// Folding proxy for a design: Nussinov pair count.
pub fn mfe_proxy(x: &MrnaSequence, min_loop: usize) -> u32 {
    max_base_pairs(&x.nucleotides(), min_loop)
}

/// Raw stability measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MfeRaw {
    /// Nussinov pair count (pseudo-energy is its negation).
    Pairs(u32),
    /// Free energy in kcal/mol from an external scorer.
    Energy(f64),
}

impl MfeRaw {
    /// Energy-like value: `-pairs` for the proxy, the score itself otherwise.
    pub fn energy(&self) -> f64 {
        match *self {
            MfeRaw::Pairs(p) => -(p as f64),
            MfeRaw::Energy(e) => e,
        }
    }
}

/// Subprocess scorer: the command runs under `sh -c`, receives the
/// nucleotide string on stdin and prints one decimal number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScorer {
    pub command: String,
    /// Energy per nucleotide mapped to `phi_mfe = 1`.
    #[serde(default = "default_external_lower")]
    pub lower_per_nt: f64,
    /// Energy per nucleotide mapped to `phi_mfe = 0`.
    #[serde(default)]
    pub upper_per_nt: f64,
}

fn default_external_lower() -> f64 {
    -0.6
}

impl ExternalScorer {
    pub fn score(&self, x: &MrnaSequence) -> Result<f64> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::ExternalScorer(format!("spawn '{}': {e}", self.command)))?;
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            stdin
                .write_all(x.nucleotide_string().as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .map_err(|e| Error::ExternalScorer(format!("write stdin: {e}")))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| Error::ExternalScorer(format!("wait: {e}")))?;
        if !out.status.success() {
            return Err(Error::ExternalScorer(format!(
                "'{}' exited with {}: {}",
                self.command,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::ExternalScorer(format!("expected one number, got '{}'", text.trim()))
            })
    }
}

/// Settings that map raw objectives onto `[0, 1]` and scalarize them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub min_loop: usize,
    pub gc_band: [f64; 2],
    pub reward_floor: f64,
    pub external_scorer: Option<ExternalScorer>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            min_loop: 3,
            gc_band: [0.35, 0.65],
            reward_floor: 1e-6,
            external_scorer: None,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.gc_band;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::Config(format!(
                "gc band [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"
            )));
        }
        if !(self.reward_floor > 0.0 && self.reward_floor < 1.0) {
            return Err(Error::Config("reward_floor must lie in (0, 1)".into()));
        }
        if let Some(ext) = &self.external_scorer {
            if ext.lower_per_nt >= ext.upper_per_nt {
                return Err(Error::Config(
                    "external scorer lower_per_nt must be below upper_per_nt".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Raw and normalized objectives of one design. `phi` is ordered
/// `(gc, mfe, cai)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub gc_raw: f64,
    pub mfe_raw: MfeRaw,
    pub cai_raw: f64,
    pub phi: [f64; 3],
}

/// GC score: 1 inside the band, linear decay to 0 at GC = 0 and GC = 1.
pub fn gc_score(gc: f64, band: [f64; 2]) -> Result<f64> {
    let [lo, hi] = band;
    if lo >= hi {
        return Err(Error::Config(format!("gc band [{lo}, {hi}] is empty")));
    }
    let s = if gc < lo {
        if lo > 0.0 {
            gc / lo
        } else {
            1.0
        }
    } else if gc > hi {
        if hi < 1.0 {
            (1.0 - gc) / (1.0 - hi)
        } else {
            1.0
        }
    } else {
        1.0
    };
    Ok(s.clamp(0.0, 1.0))
}

/// Maps raw objectives of a length-`len` design (in codons) onto `[0, 1]^3`.
pub fn normalize(
    gc_raw: f64,
    mfe_raw: MfeRaw,
    cai_raw: f64,
    len: usize,
    cfg: &ObjectiveConfig,
) -> Result<[f64; 3]> {
    let phi_gc = gc_score(gc_raw, cfg.gc_band)?;
    let n_nt = 3 * len;
    let phi_mfe = match mfe_raw {
        MfeRaw::Pairs(p) => {
            let max_pairs = n_nt / 2;
            if max_pairs == 0 {
                0.0
            } else {
                (p as f64 / max_pairs as f64).clamp(0.0, 1.0)
            }
        }
        MfeRaw::Energy(e) => {
            let (lower, upper) = match &cfg.external_scorer {
                Some(ext) => (ext.lower_per_nt, ext.upper_per_nt),
                None => (default_external_lower(), 0.0),
            };
            let lo = lower * n_nt as f64;
            let hi = upper * n_nt as f64;
            ((hi - e) / (hi - lo)).clamp(0.0, 1.0)
        }
    };
    Ok([phi_gc, phi_mfe, cai_raw.clamp(0.0, 1.0)])
}

/// `w·φ` plus the positivity floor, clamped to at most 1.
pub fn scalarize(phi: &[f64; 3], w: &WeightVector, reward_floor: f64) -> f64 {
    (w.dot(phi) + reward_floor).min(1.0)
}

/// Scores designs against a usage table and objective settings.
#[derive(Debug, Clone)]
pub struct Objectives {
    table: CodonUsageTable,
    config: ObjectiveConfig,
}

impl Objectives {
    pub fn new(table: CodonUsageTable, config: ObjectiveConfig) -> Result<Objectives> {
        config.validate()?;
        Ok(Objectives { table, config })
    }

    pub fn table(&self) -> &CodonUsageTable {
        &self.table
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    pub fn evaluate(&self, x: &MrnaSequence) -> Result<ObjectiveVector> {
        let gc_raw = gc_content(x)?;
        let cai_raw = cai(x, &self.table)?;
        let mfe_raw = match &self.config.external_scorer {
            Some(ext) => MfeRaw::Energy(ext.score(x)?),
            None => MfeRaw::Pairs(mfe_proxy(x, self.config.min_loop)),
        };
        let phi = normalize(gc_raw, mfe_raw, cai_raw, x.len(), &self.config)?;
        Ok(ObjectiveVector {
            gc_raw,
            mfe_raw,
            cai_raw,
            phi,
        })
    }

    pub fn reward_of(&self, objectives: &ObjectiveVector, w: &WeightVector) -> f64 {
        scalarize(&objectives.phi, w, self.config.reward_floor)
    }

    pub fn reward(&self, x: &MrnaSequence, w: &WeightVector) -> Result<f64> {
        Ok(self.reward_of(&self.evaluate(x)?, w))
    }
}

impl Default for Objectives {
    fn default() -> Self {
        Objectives::new(CodonUsageTable::human(), ObjectiveConfig::default())
            .expect("defaults are valid")
    }
}
