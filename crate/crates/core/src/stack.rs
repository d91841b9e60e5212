//! The digital stack and its read vector.

use std::fmt::{self, Write as _};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Alphabet, StackSym};

/// Absent symbol.
pub const ALPHA1: (f64, f64) = (0.0001, 0.008);
/// Symbol on top of the stack.
pub const ALPHA2: (f64, f64) = (0.901, 0.992);
/// Symbol just popped and not the new top.
pub const ALPHA3: (f64, f64) = (0.025, 0.110);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stack {
    items: Vec<StackSym>,
    illegal_pop: bool,
}

impl Default for Stack {
    fn default() -> Self {
        Self::new()
    }
}

impl Stack {
    pub fn new() -> Self {
        Self { items: vec![StackSym::Bottom], illegal_pop: false }
    }

    pub fn items(&self) -> &[StackSym] {
        &self.items
    }

    pub fn top(&self) -> StackSym {
        *self.items.last().expect("⊥ is never removed")
    }

    /// Number of symbols above ⊥.
    pub fn depth(&self) -> usize {
        self.items.len() - 1
    }

    pub fn illegal_pop(&self) -> bool {
        self.illegal_pop
    }

    pub fn clear_flag(&mut self) {
        self.illegal_pop = false;
    }

    /// Applies an arbitrated action in place and returns the popped symbol, if any.
    pub fn apply(&mut self, action: &ActionVector) -> Option<usize> {
        match action.nonzero() {
            None => None,
            Some((i, 1)) => {
                self.items.push(StackSym::Sym(i));
                None
            }
            Some((i, _)) => match self.top() {
                StackSym::Bottom => {
                    self.illegal_pop = true;
                    None
                }
                StackSym::Sym(s) => {
                    if s != i {
                        self.illegal_pop = true;
                    }
                    self.items.pop();
                    Some(s)
                }
            },
        }
    }
}

impl fmt::Display for Stack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_char('[')?;
        for (n, s) in self.items.iter().enumerate() {
            if n > 0 {
                f.write_char(' ')?;
            }
            match s {
                StackSym::Bottom => f.write_char('⊥')?,
                StackSym::Sym(i) => write!(f, "{i}")?,
            }
        }
        f.write_char(']')
    }
}

/// Per-symbol stack action in {−1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionVector(Vec<i8>);

impl ActionVector {
    pub fn noop(l: usize) -> Self {
        Self(vec![0; l])
    }

    pub fn push(l: usize, symbol: usize) -> Self {
        let mut v = vec![0; l];
        v[symbol] = 1;
        Self(v)
    }

    pub fn pop(l: usize, symbol: usize) -> Self {
        let mut v = vec![0; l];
        v[symbol] = -1;
        Self(v)
    }

    pub fn from_values(values: Vec<i8>) -> Result<Self> {
        if values.iter().any(|v| !(-1..=1).contains(v)) {
            return Err(Error::Input("action entries must be -1, 0 or 1".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First nonzero entry as (index, value).
    pub fn nonzero(&self) -> Option<(usize, i8)> {
        self.0.iter().position(|&v| v != 0).map(|i| (i, self.0[i]))
    }

    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0).count()
    }

    pub fn describe(&self, alphabet: Option<&Alphabet>) -> String {
        let name = |i: usize| alphabet.map_or_else(|| i.to_string(), |a| a.symbol(i).to_owned());
        match self.nonzero() {
            None => "noop".into(),
            Some((i, 1)) => format!("push({})", name(i)),
            Some((i, _)) => format!("pop({})", name(i)),
        }
    }
}

/// Keeps at most one nonzero entry: the one with the largest |raw|, lowest index on ties.
pub fn arbitrate_action(raw: &[f64], quantized: &[i8]) -> ActionVector {
    debug_assert_eq!(raw.len(), quantized.len());
    let mut best: Option<usize> = None;
    for (i, &q) in quantized.iter().enumerate() {
        if q != 0 && best.is_none_or(|b| raw[i].abs() > raw[b].abs()) {
            best = Some(i);
        }
    }
    let mut out = vec![0; quantized.len()];
    if let Some(b) = best {
        out[b] = quantized[b];
    }
    ActionVector(out)
}

/// Functional form of [`Stack::apply`].
pub fn apply_action(stack: &Stack, action: &ActionVector) -> (Stack, Option<usize>) {
    let mut s = stack.clone();
    let popped = s.apply(action);
    (s, popped)
}

/// Which α-interval a read component belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadLevel {
    Absent,
    Top,
    Popped,
}

impl ReadLevel {
    pub fn interval(self) -> (f64, f64) {
        match self {
            ReadLevel::Absent => ALPHA1,
            ReadLevel::Top => ALPHA2,
            ReadLevel::Popped => ALPHA3,
        }
    }

    /// Exact interval membership; `None` outside all three.
    pub fn classify(v: f64) -> Option<Self> {
        [ReadLevel::Absent, ReadLevel::Top, ReadLevel::Popped]
            .into_iter()
            .find(|l| {
                let (lo, hi) = l.interval();
                (lo..=hi).contains(&v)
            })
    }

    fn tag(self) -> &'static str {
        match self {
            ReadLevel::Absent => "α1",
            ReadLevel::Top => "α2",
            ReadLevel::Popped => "α3",
        }
    }
}

/// How read values are drawn inside their interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReadNoise {
    #[default]
    Random,
    Midpoint,
    Low,
    High,
}

impl ReadNoise {
    pub fn sample<R: Rng + ?Sized>(self, level: ReadLevel, rng: &mut R) -> f64 {
        let (lo, hi) = level.interval();
        match self {
            ReadNoise::Random => rng.random_range(lo..hi),
            ReadNoise::Midpoint => 0.5 * (lo + hi),
            ReadNoise::Low => lo,
            ReadNoise::High => hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadVector(pub Vec<f64>);

impl ReadVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn levels(&self) -> Option<Vec<ReadLevel>> {
        self.0.iter().map(|&v| ReadLevel::classify(v)).collect()
    }

    /// Recovers the stack top (`None` for ⊥) from the interval pattern.
    pub fn decode_top(&self) -> Option<StackSym> {
        let levels = self.levels()?;
        let tops: Vec<usize> = (0..levels.len()).filter(|&i| levels[i] == ReadLevel::Top).collect();
        match tops[..] {
            [] => Some(StackSym::Bottom),
            [i] => Some(StackSym::Sym(i)),
            _ => None,
        }
    }
}

/// Interval pattern for the post-action stack.
pub fn read_levels(stack: &Stack, popped: Option<usize>, l: usize) -> Vec<ReadLevel> {
    let top = stack.top().symbol();
    (0..l)
        .map(|i| {
            if top == Some(i) {
                ReadLevel::Top
            } else if popped == Some(i) {
                ReadLevel::Popped
            } else {
                ReadLevel::Absent
            }
        })
        .collect()
}

pub fn read_vector<R: Rng + ?Sized>(
    stack: &Stack,
    popped: Option<usize>,
    l: usize,
    noise: ReadNoise,
    rng: &mut R,
) -> ReadVector {
    ReadVector(read_levels(stack, popped, l).into_iter().map(|lv| noise.sample(lv, rng)).collect())
}

/// Debug line: `t action stack-contents read-intervals`.
pub fn trace_line(t: usize, action: &ActionVector, stack: &Stack, read: &ReadVector, alphabet: Option<&Alphabet>) -> String {
    let stack_text = match alphabet {
        None => stack.to_string(),
        Some(a) => {
            let parts: Vec<&str> = stack
                .items()
                .iter()
                .map(|s| match s {
                    StackSym::Bottom => "⊥",
                    StackSym::Sym(i) => a.symbol(*i),
                })
                .collect();
            format!("[{}]", parts.join(" "))
        }
    };
    let reads: Vec<&str> = read
        .0
        .iter()
        .map(|&v| ReadLevel::classify(v).map_or("?", ReadLevel::tag))
        .collect();
    format!("{t} {} {stack_text} [{}]", action.describe(alphabet), reads.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn arbitration_examples() {
        assert_eq!(arbitrate_action(&[0.9, -0.2], &[1, 0]).values(), &[1, 0]);
        assert_eq!(arbitrate_action(&[0.9, -0.8], &[1, -1]).values(), &[1, 0]);
        assert_eq!(arbitrate_action(&[0.5, -0.5], &[1, -1]).values(), &[1, 0]);
        assert_eq!(arbitrate_action(&[0.1, -0.8], &[1, -1]).values(), &[0, -1]);
        assert_eq!(arbitrate_action(&[0.1, 0.2], &[0, 0]).values(), &[0, 0]);
    }

    #[test]
    fn push_and_pop_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, popped) = apply_action(&Stack::new(), &ActionVector::push(2, 0));
        assert_eq!(s.items(), &[StackSym::Bottom, StackSym::Sym(0)]);
        assert_eq!(popped, None);
        let r = read_vector(&s, popped, 2, ReadNoise::Random, &mut rng);
        assert_eq!(r.levels().unwrap(), vec![ReadLevel::Top, ReadLevel::Absent]);

        let (s, _) = apply_action(&Stack::new(), &ActionVector::push(2, 1));
        let (s, popped) = apply_action(&s, &ActionVector::pop(2, 1));
        assert_eq!(s, Stack::new());
        assert_eq!(popped, Some(1));
        let r = read_vector(&s, popped, 2, ReadNoise::Random, &mut rng);
        assert_eq!(r.levels().unwrap(), vec![ReadLevel::Absent, ReadLevel::Popped]);

        let (s, popped) = apply_action(&Stack::new(), &ActionVector::noop(2));
        let r = read_vector(&s, popped, 2, ReadNoise::Random, &mut rng);
        assert_eq!(r.levels().unwrap(), vec![ReadLevel::Absent; 2]);
    }

    #[test]
    fn illegal_pops_are_flagged() {
        let (s, popped) = apply_action(&Stack::new(), &ActionVector::pop(2, 0));
        assert!(s.illegal_pop());
        assert_eq!(s.items(), &[StackSym::Bottom]);
        assert_eq!(popped, None);

        let (s, _) = apply_action(&Stack::new(), &ActionVector::push(2, 1));
        let (s, popped) = apply_action(&s, &ActionVector::pop(2, 0));
        assert!(s.illegal_pop());
        assert_eq!(s.depth(), 0);
        assert_eq!(popped, Some(1));
    }

    #[test]
    fn popped_symbol_that_is_still_top_reads_high() {
        let mut s = Stack::new();
        s.apply(&ActionVector::push(2, 0));
        s.apply(&ActionVector::push(2, 0));
        let popped = s.apply(&ActionVector::pop(2, 0));
        assert_eq!(read_levels(&s, popped, 2), vec![ReadLevel::Top, ReadLevel::Absent]);
    }

    #[test]
    fn intervals_are_disjoint() {
        let mut all = [ALPHA1, ALPHA3, ALPHA2];
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in all.windows(2) {
            assert!(w[0].1 < w[1].0);
        }
    }

    #[test]
    fn trace_format() {
        let a = Alphabet::new(["a", "b"]).unwrap();
        let mut s = Stack::new();
        let act = ActionVector::push(2, 0);
        s.apply(&act);
        let r = read_vector(&s, None, 2, ReadNoise::Midpoint, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(trace_line(1, &act, &s, &r, Some(&a)), "1 push(a) [⊥ a] [α2 α1]");
    }
}
