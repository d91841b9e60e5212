use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pda_accepts, Alphabet, Grammar, PdaSpec, StackOp, StackSym};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledString {
    pub tokens: Vec<usize>,
    /// True when the string is in the language.
    pub label: bool,
}

impl LabeledString {
    pub fn new(tokens: Vec<usize>, label: bool) -> Self {
        Self { tokens, label }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub grammar: String,
    pub seed: u64,
    pub alphabet: Alphabet,
    pub samples: Vec<LabeledString>,
}

impl Dataset {
    pub fn new(grammar: impl Into<String>, seed: u64, alphabet: Alphabet, samples: Vec<LabeledString>) -> Self {
        Self { grammar: grammar.into(), seed, alphabet, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Longest string length (N_max); 0 when empty.
    pub fn max_len(&self) -> usize {
        self.samples.iter().map(LabeledString::len).max().unwrap_or(0)
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label).count()
    }

    pub fn total_chars(&self) -> usize {
        self.samples.iter().map(LabeledString::len).sum()
    }

    pub fn with_samples(&self, samples: Vec<LabeledString>) -> Self {
        Self { samples, ..self.clone() }
    }

    /// Splits in order into consecutive parts with the given fractions; the last part takes the rest.
    pub fn split(&self, fractions: &[f64]) -> Vec<Dataset> {
        let n = self.len();
        let mut out = Vec::with_capacity(fractions.len());
        let mut start = 0;
        for (i, f) in fractions.iter().enumerate() {
            let end = if i + 1 == fractions.len() { n } else { (start + (f * n as f64).round() as usize).min(n) };
            out.push(self.with_samples(self.samples[start..end].to_vec()));
            start = end;
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#grammar={} seed={} n={}\n", self.grammar, self.seed, self.samples.len());
        for x in &self.samples {
            let _ = writeln!(s, "{}\t{}", u8::from(x.label), self.alphabet.render(&x.tokens));
        }
        s
    }

    /// Parses the text format; the alphabet comes from the named builtin grammar.
    pub fn from_text(text: &str) -> Result<Self> {
        let header = text.lines().next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
        let grammar = header_field(header, "grammar")?;
        let alphabet = alphabet_for_name(&grammar)?;
        Self::from_text_with_alphabet(text, alphabet)
    }

    pub fn from_text_with_alphabet(text: &str, alphabet: Alphabet) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
        if !header.starts_with('#') {
            return Err(Error::Format("missing #grammar header".into()));
        }
        let grammar = header_field(header, "grammar")?;
        let seed = header_field(header, "seed")?
            .parse()
            .map_err(|_| Error::Format("seed is not an integer".into()))?;
        let n: usize = header_field(header, "n")?
            .parse()
            .map_err(|_| Error::Format("n is not an integer".into()))?;
        let mut samples = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (label, toks) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("line {}: missing tab", i + 2)))?;
            let label = match label {
                "1" => true,
                "0" => false,
                _ => return Err(Error::Format(format!("line {}: label must be 0 or 1", i + 2))),
            };
            let tokens = alphabet
                .parse_tokens(toks)
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 2)))?;
            samples.push(LabeledString { tokens, label });
        }
        if samples.len() != n {
            return Err(Error::Format(format!("header says n={n} but file has {} samples", samples.len())));
        }
        Ok(Self { grammar, seed, alphabet, samples })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn header_field(header: &str, key: &str) -> Result<String> {
    header
        .trim_start_matches('#')
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .map(str::to_owned)
        .ok_or_else(|| Error::Format(format!("header lacks {key}=")))
}

fn alphabet_for_name(name: &str) -> Result<Alphabet> {
    if name == "even_palindrome" {
        return Ok(PdaSpec::even_palindrome().alphabet().clone());
    }
    name.parse::<Grammar>().map(Grammar::alphabet).map_err(|e| Error::Format(e.to_string()))
}

/// Samples of length at most `max_len`, order preserved.
pub fn curriculum_slice(data: &Dataset, max_len: usize) -> Dataset {
    data.with_samples(data.samples.iter().filter(|s| s.len() <= max_len).cloned().collect())
}

/// Random accepting derivation of exactly `n` steps for specs without a closed-form sampler.
fn walk_member<R: Rng + ?Sized>(spec: &PdaSpec, n: usize, rng: &mut R) -> Option<Vec<usize>> {
    let mut q = spec.start();
    let mut stack = vec![StackSym::Bottom];
    let mut out = Vec::with_capacity(n);
    for step in 0..n {
        let top = *stack.last()?;
        let remaining = n - step;
        let options: Vec<_> = spec
            .transitions()
            .iter()
            .filter(|t| t.from == q && t.top == top && t.input.is_some())
            .filter(|t| !matches!(t.op, StackOp::Push(_)) || stack.len() < remaining)
            .collect();
        let t = options.get(rng.random_range(0..options.len().max(1)))?;
        out.push(t.input?);
        match t.op {
            StackOp::Push(s) => stack.push(StackSym::Sym(s)),
            StackOp::Pop => {
                stack.pop();
            }
            StackOp::NoOp => {}
        }
        q = t.to;
    }
    (spec.is_accepting(q) && stack.len() == 1).then_some(out)
}

struct Sampler<'a> {
    spec: &'a PdaSpec,
    grammar: Option<Grammar>,
}

impl<'a> Sampler<'a> {
    fn new(spec: &'a PdaSpec) -> Self {
        Self { spec, grammar: Grammar::for_spec(spec) }
    }

    /// A verified member with length drawn from U(lo, hi), snapped to a feasible length.
    fn positive<R: Rng + ?Sized>(&self, lo: usize, hi: usize, rng: &mut R) -> Result<Option<Vec<usize>>> {
        let target = rng.random_range(lo..=hi);
        let candidate = match self.grammar {
            Some(g) => g.snap_length(target, lo, hi).map(|n| g.sample_member(n, rng)),
            None => walk_member(self.spec, target, rng),
        };
        match candidate {
            Some(c) if pda_accepts(self.spec, &c)? => Ok(Some(c)),
            _ => Ok(None),
        }
    }

    fn positive_exact<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Option<Vec<usize>>> {
        let candidate = match self.grammar {
            Some(g) => Some(g.sample_member(g.feasible_at_least(n), rng)),
            None => walk_member(self.spec, n, rng),
        };
        match candidate {
            Some(c) if pda_accepts(self.spec, &c)? => Ok(Some(c)),
            _ => Ok(None),
        }
    }

    fn uniform<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let l = self.spec.alphabet().len();
        (0..n).map(|_| rng.random_range(0..l)).collect()
    }

    /// One substitution, insertion or deletion applied to `base`.
    fn edit<R: Rng + ?Sized>(&self, base: &[usize], rng: &mut R) -> Vec<usize> {
        let l = self.spec.alphabet().len();
        let mut s = base.to_vec();
        let kind = if s.len() <= 1 { rng.random_range(0..2) } else { rng.random_range(0..3) };
        match kind {
            0 if !s.is_empty() => {
                let i = rng.random_range(0..s.len());
                let shift = rng.random_range(1..l);
                s[i] = (s[i] + shift) % l;
            }
            2 => {
                s.remove(rng.random_range(0..s.len()));
            }
            _ => {
                let i = rng.random_range(0..=s.len());
                s.insert(i, rng.random_range(0..l));
            }
        }
        s
    }
}

/// Labeled dataset with positives drawn from derivations and negatives from
/// uniform strings and single edits of positives, every label checked by
/// [`pda_accepts`].
///
/// Positives are distinct while the language has fresh members in range;
/// after that they repeat. Negatives are always distinct.
pub fn sample_dataset(
    spec: &PdaSpec,
    n_pos: usize,
    n_neg: usize,
    len_low: usize,
    len_high: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Input("n_pos and n_neg must be positive".into()));
    }
    if len_low == 0 || len_low > len_high {
        return Err(Error::Input(format!("need 1 <= len_low <= len_high, got {len_low}..{len_high}")));
    }
    let sampler = Sampler::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let pos_budget = 100 * n_pos;
    let stale_limit = 2_000.max(4 * n_pos);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut positives: Vec<Vec<usize>> = Vec::with_capacity(n_pos);
    let (mut attempts, mut stale) = (0, 0);
    while positives.len() < n_pos && attempts < pos_budget && stale < stale_limit {
        attempts += 1;
        match sampler.positive(len_low, len_high, &mut rng)? {
            Some(p) if seen.insert(p.clone()) => {
                positives.push(p);
                stale = 0;
            }
            _ => stale += 1,
        }
    }
    if positives.is_empty() {
        return Err(Error::GenerationExhausted(format!(
            "{}: no member with length in {len_low}..={len_high}",
            spec.name()
        )));
    }
    let distinct = positives.len();
    while positives.len() < n_pos {
        positives.push(positives[rng.random_range(0..distinct)].clone());
    }
    if distinct < n_pos {
        log::debug!("{}: only {distinct} distinct positives in range; {} repeats", spec.name(), n_pos - distinct);
    }

    let neg_lo = len_low.saturating_sub(1).max(1);
    let neg_hi = len_high + 1;
    let mut negatives: Vec<Vec<usize>> = Vec::with_capacity(n_neg);
    let mut attempts = 0;
    while negatives.len() < n_neg {
        if attempts >= 100 * n_neg {
            return Err(Error::GenerationExhausted(format!(
                "{}: {} of {n_neg} negatives after {attempts} attempts",
                spec.name(),
                negatives.len()
            )));
        }
        let candidate = if attempts % 2 == 0 {
            let n = rng.random_range(neg_lo..=neg_hi);
            sampler.uniform(n, &mut rng)
        } else {
            let base = &positives[rng.random_range(0..distinct)];
            sampler.edit(base, &mut rng)
        };
        attempts += 1;
        if candidate.is_empty() || candidate.len() > neg_hi {
            continue;
        }
        if !seen.contains(&candidate) && !pda_accepts(spec, &candidate)? {
            seen.insert(candidate.clone());
            negatives.push(candidate);
        }
    }

    let mut samples: Vec<LabeledString> = positives
        .into_iter()
        .map(|t| LabeledString::new(t, true))
        .chain(negatives.into_iter().map(|t| LabeledString::new(t, false)))
        .collect();
    samples.shuffle(&mut rng);
    Ok(Dataset::new(spec.name(), seed, spec.alphabet().clone(), samples))
}

/// Balanced evaluation set around a single length: `n/2` members at the
/// shortest feasible length ≥ `length` and `n - n/2` non-members of exactly
/// `length`, half uniform and half single edits. Repeats are allowed.
pub fn sample_length_set(spec: &PdaSpec, n: usize, length: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || length == 0 {
        return Err(Error::Input("need n >= 2 and length >= 1".into()));
    }
    let sampler = Sampler::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = n / 2;
    let mut samples = Vec::with_capacity(n);
    let mut misses = 0;
    while samples.len() < n_pos {
        match sampler.positive_exact(length, &mut rng)? {
            Some(p) => samples.push(LabeledString::new(p, true)),
            None => {
                misses += 1;
                if misses > 100 * n_pos {
                    return Err(Error::GenerationExhausted(format!("{}: no member near length {length}", spec.name())));
                }
            }
        }
    }
    let mut attempts = 0;
    while samples.len() < n {
        if attempts > 100 * n {
            return Err(Error::GenerationExhausted(format!("{}: negatives at length {length}", spec.name())));
        }
        attempts += 1;
        let candidate = if attempts % 2 == 0 {
            sampler.uniform(length, &mut rng)
        } else {
            let base = &samples[rng.random_range(0..n_pos)].tokens;
            let mut e = sampler.edit(base, &mut rng);
            e.truncate(length);
            while e.len() < length {
                e.push(rng.random_range(0..spec.alphabet().len()));
            }
            e
        };
        if !pda_accepts(spec, &candidate)? {
            samples.push(LabeledString::new(candidate, false));
        }
    }
    samples.shuffle(&mut rng);
    Ok(Dataset::new(spec.name(), seed, spec.alphabet().clone(), samples))
}
