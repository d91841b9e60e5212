//! Pushdown automata, the benchmark grammars and labeled datasets.

mod builtin;
mod dataset;

pub use builtin::{builtin_grammar, closed_form_member, Grammar};
pub use dataset::{
    curriculum_slice, sample_dataset, sample_length_set, Dataset, LabeledString,
};

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of input tokens; token `i` is one-hot position `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.len() < 2 {
            return Err(Error::Input("alphabet needs at least two symbols".into()));
        }
        let unique: HashSet<&String> = symbols.iter().collect();
        if unique.len() != symbols.len() {
            return Err(Error::Input("alphabet symbols must be unique".into()));
        }
        if symbols.iter().any(|s| s.is_empty() || s.contains(char::is_whitespace)) {
            return Err(Error::Input("alphabet symbols must be non-empty and whitespace-free".into()));
        }
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    /// Parses a whitespace-separated token string.
    pub fn parse_tokens(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|t| {
                self.index_of(t)
                    .ok_or_else(|| Error::Input(format!("token {t:?} not in alphabet")))
            })
            .collect()
    }

    /// Parses a string of single-character symbols ("aabb").
    pub fn parse_compact(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                let s = c.encode_utf8(&mut buf);
                self.index_of(s)
                    .ok_or_else(|| Error::Input(format!("token {s:?} not in alphabet")))
            })
            .collect()
    }

    pub fn render(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.symbols[t].as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn render_compact(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.symbols[t].as_str()).collect()
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.len()) {
            Some(t) => Err(Error::Input(format!("token index {t} outside alphabet of size {}", self.len()))),
            None => Ok(()),
        }
    }
}

/// Stack alphabet entry. The stack alphabet is the input alphabet plus ⊥.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StackSym {
    Bottom,
    Sym(usize),
}

impl StackSym {
    pub fn symbol(self) -> Option<usize> {
        match self {
            StackSym::Bottom => None,
            StackSym::Sym(s) => Some(s),
        }
    }
}

/// Replacement of the stack top, restricted to single-symbol normal form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StackOp {
    /// Keep the top and push a symbol above it.
    Push(usize),
    /// Remove the top.
    Pop,
    NoOp,
}

/// One element of δ: `(from, input or ε, top) -> (to, op)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub input: Option<usize>,
    pub top: StackSym,
    pub to: usize,
    pub op: StackOp,
}

impl Transition {
    pub const fn new(from: usize, input: usize, top: StackSym, to: usize, op: StackOp) -> Self {
        Self { from, input: Some(input), top, to, op }
    }
}

type TransitionKey = (usize, Option<usize>, StackSym);

/// The 7-tuple (Q, Σ, Γ, δ, q⁰, ⊥, F).
#[derive(Debug, Clone)]
pub struct PdaSpec {
    name: String,
    states: Vec<String>,
    alphabet: Alphabet,
    transitions: Vec<Transition>,
    start: usize,
    accepting: Vec<bool>,
    index: HashMap<TransitionKey, Vec<usize>>,
    has_epsilon: bool,
}

impl PdaSpec {
    pub fn new(
        name: impl Into<String>,
        states: Vec<String>,
        alphabet: Alphabet,
        transitions: Vec<Transition>,
        start: usize,
        accepting: &[usize],
    ) -> Result<Self> {
        let m = states.len();
        if m == 0 {
            return Err(Error::Input("PDA needs at least one state".into()));
        }
        if start >= m {
            return Err(Error::Input("start state not in Q".into()));
        }
        let mut acc = vec![false; m];
        for &f in accepting {
            if f >= m {
                return Err(Error::Input(format!("accepting state {f} not in Q")));
            }
            acc[f] = true;
        }
        let l = alphabet.len();
        let mut index: HashMap<TransitionKey, Vec<usize>> = HashMap::new();
        for (n, t) in transitions.iter().enumerate() {
            if t.from >= m || t.to >= m {
                return Err(Error::Input(format!("transition {n} references a state outside Q")));
            }
            if t.input.is_some_and(|i| i >= l) {
                return Err(Error::Input(format!("transition {n} reads a symbol outside Σ")));
            }
            if matches!(t.top, StackSym::Sym(s) if s >= l) {
                return Err(Error::Input(format!("transition {n} tests a symbol outside Γ")));
            }
            match t.op {
                StackOp::Push(s) if s >= l => {
                    return Err(Error::Input(format!("transition {n} pushes a symbol outside Γ")))
                }
                StackOp::Pop if t.top == StackSym::Bottom => {
                    return Err(Error::Input(format!("transition {n} pops ⊥")))
                }
                _ => {}
            }
            index.entry((t.from, t.input, t.top)).or_default().push(n);
        }
        let has_epsilon = transitions.iter().any(|t| t.input.is_none());
        Ok(Self {
            name: name.into(),
            states,
            alphabet,
            transitions,
            start,
            accepting: acc,
            index,
            has_epsilon,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// M = |Q|.
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_name(&self, q: usize) -> &str {
        &self.states[q]
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting[q]
    }

    pub fn accepting_states(&self) -> Vec<usize> {
        (0..self.num_states()).filter(|&q| self.accepting[q]).collect()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn has_epsilon(&self) -> bool {
        self.has_epsilon
    }

    pub fn lookup(&self, state: usize, input: Option<usize>, top: StackSym) -> impl Iterator<Item = &Transition> {
        self.index
            .get(&(state, input, top))
            .into_iter()
            .flatten()
            .map(move |&n| &self.transitions[n])
    }

    /// True when every (state, input, top) has at most one move and there are no ε-moves.
    pub fn is_deterministic(&self) -> bool {
        !self.has_epsilon && self.index.values().all(|v| v.len() == 1)
    }

    /// Symbols that no transition ever pushes.
    pub fn unpushed_symbols(&self) -> Vec<usize> {
        let pushed: HashSet<usize> = self
            .transitions
            .iter()
            .filter_map(|t| match t.op {
                StackOp::Push(s) => Some(s),
                _ => None,
            })
            .collect();
        (0..self.alphabet.len()).filter(|s| !pushed.contains(s)).collect()
    }

    /// Even-length palindromes ww^R over {a,b}; genuinely non-deterministic.
    pub fn even_palindrome() -> Self {
        use StackOp::*;
        use StackSym::*;
        let alphabet = Alphabet::new(["a", "b"]).expect("static alphabet");
        let mut t = Vec::new();
        for x in 0..2 {
            for top in [Bottom, Sym(0), Sym(1)] {
                t.push(Transition::new(0, x, top, 0, Push(x)));
            }
            // guess the centre
            t.push(Transition::new(0, x, Sym(x), 1, Pop));
            t.push(Transition::new(1, x, Sym(x), 1, Pop));
        }
        PdaSpec::new("even_palindrome", vec!["push".into(), "match".into()], alphabet, t, 0, &[1])
            .expect("static PDA")
    }
}

impl fmt::Display for PdaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PDA {} (M={}, L={})", self.name, self.num_states(), self.alphabet.len())?;
        for t in &self.transitions {
            let input = t.input.map_or("ε", |i| self.alphabet.symbol(i));
            let top = match t.top {
                StackSym::Bottom => "⊥",
                StackSym::Sym(s) => self.alphabet.symbol(s),
            };
            let op = match t.op {
                StackOp::Push(s) => format!("push {}", self.alphabet.symbol(s)),
                StackOp::Pop => "pop".into(),
                StackOp::NoOp => "no-op".into(),
            };
            writeln!(f, "  ({}, {input}, {top}) -> ({}, {op})", self.states[t.from], self.states[t.to])?;
        }
        Ok(())
    }
}

fn apply_op(stack: &mut Vec<StackSym>, op: StackOp) {
    match op {
        StackOp::Push(s) => stack.push(StackSym::Sym(s)),
        StackOp::Pop => {
            stack.pop();
        }
        StackOp::NoOp => {}
    }
}

type Config = (usize, Vec<StackSym>);

fn epsilon_closure(spec: &PdaSpec, frontier: Vec<Config>, max_depth: usize) -> Vec<Config> {
    let mut seen: HashSet<Config> = frontier.iter().cloned().collect();
    let mut queue: std::collections::VecDeque<Config> = frontier.into_iter().collect();
    let mut out = Vec::new();
    while let Some((q, stack)) = queue.pop_front() {
        let top = *stack.last().expect("⊥ is never popped");
        for t in spec.lookup(q, None, top) {
            let mut next = stack.clone();
            apply_op(&mut next, t.op);
            if next.len() > max_depth {
                continue;
            }
            let cfg = (t.to, next);
            if seen.insert(cfg.clone()) {
                queue.push_back(cfg);
            }
        }
        out.push((q, stack));
    }
    out
}

/// Membership by breadth-first search over configurations.
///
/// Accepts iff some path consumes every token and ends in F with the stack
/// reduced to `[⊥]`. Stack depth is bounded by `|tokens| + 1`.
pub fn pda_accepts(spec: &PdaSpec, tokens: &[usize]) -> Result<bool> {
    spec.alphabet.check_tokens(tokens)?;
    let max_depth = tokens.len() + 1;
    let mut frontier: Vec<Config> = vec![(spec.start, vec![StackSym::Bottom])];
    if spec.has_epsilon {
        frontier = epsilon_closure(spec, frontier, max_depth);
    }
    for &x in tokens {
        let mut next: Vec<Config> = Vec::with_capacity(frontier.len());
        for (q, stack) in frontier.drain(..) {
            let top = *stack.last().expect("⊥ is never popped");
            let moves: Vec<&Transition> = spec.lookup(q, Some(x), top).collect();
            let n = moves.len();
            let mut stack = Some(stack);
            for (i, t) in moves.into_iter().enumerate() {
                let mut s = if i + 1 == n { stack.take().unwrap() } else { stack.as_ref().unwrap().clone() };
                apply_op(&mut s, t.op);
                if s.len() <= max_depth {
                    next.push((t.to, s));
                }
            }
        }
        if next.len() > 1 {
            let mut seen = HashSet::with_capacity(next.len());
            next.retain(|c| seen.insert(c.clone()));
        }
        if spec.has_epsilon {
            next = epsilon_closure(spec, next, max_depth);
        }
        if next.is_empty() {
            return Ok(false);
        }
        frontier = next;
    }
    Ok(frontier
        .iter()
        .any(|(q, stack)| spec.accepting[*q] && stack.len() == 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_rejects_duplicates_and_singletons() {
        assert!(Alphabet::new(["a"]).is_err());
        assert!(Alphabet::new(["a", "a"]).is_err());
        let a = Alphabet::new(["a", "b"]).unwrap();
        assert_eq!(a.parse_compact("abba").unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(a.render(&[0, 1]), "a b");
        assert!(a.parse_tokens("a x").is_err());
    }

    #[test]
    fn even_palindrome_needs_search() {
        let p = PdaSpec::even_palindrome();
        assert!(!p.is_deterministic());
        let a = p.alphabet().clone();
        for (s, want) in [("abba", true), ("aa", true), ("abab", false), ("aba", false), ("baab", true), ("", false)] {
            assert_eq!(pda_accepts(&p, &a.parse_compact(s).unwrap()).unwrap(), want, "{s}");
        }
    }

    #[test]
    fn rejects_tokens_outside_alphabet() {
        let p = PdaSpec::even_palindrome();
        assert!(matches!(pda_accepts(&p, &[0, 7]), Err(Error::Input(_))));
    }

    #[test]
    fn epsilon_moves_are_followed() {
        use StackOp::*;
        use StackSym::*;
        // a^n then an ε-move to a popping state: a^n b^n with an explicit ε hop
        let alpha = Alphabet::new(["a", "b"]).unwrap();
        let t = vec![
            Transition::new(0, 0, Bottom, 0, Push(0)),
            Transition::new(0, 0, Sym(0), 0, Push(0)),
            Transition { from: 0, input: None, top: Sym(0), to: 1, op: NoOp },
            Transition::new(1, 1, Sym(0), 1, Pop),
        ];
        let p = PdaSpec::new("eps", vec!["p".into(), "q".into()], alpha.clone(), t, 0, &[1]).unwrap();
        assert!(p.has_epsilon());
        assert!(pda_accepts(&p, &alpha.parse_compact("aabb").unwrap()).unwrap());
        assert!(!pda_accepts(&p, &alpha.parse_compact("aab").unwrap()).unwrap());
    }

    #[test]
    fn malformed_transitions_are_rejected() {
        let alpha = Alphabet::new(["a", "b"]).unwrap();
        let bad = vec![Transition::new(0, 0, StackSym::Bottom, 0, StackOp::Pop)];
        assert!(PdaSpec::new("x", vec!["q".into()], alpha.clone(), bad, 0, &[]).is_err());
        let bad = vec![Transition::new(0, 0, StackSym::Bottom, 3, StackOp::NoOp)];
        assert!(PdaSpec::new("x", vec!["q".into()], alpha, bad, 0, &[]).is_err());
    }
}
