use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Alphabet, PdaSpec, StackOp, StackSym, Transition};
use crate::error::{Error, Result};

/// The five benchmark languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grammar {
    /// w c w^R with w ∈ {a,b}+.
    Palindrome,
    /// aⁿbⁿ, n ≥ 1.
    Anbn,
    /// aⁿbⁿcbᵐaᵐ, n,m ≥ 1.
    Anbncbmam,
    /// aⁿ⁺ᵐbⁿcᵐ, n,m ≥ 1.
    Anmbncm,
    /// Balanced strings over "()" and "[]".
    Dyck2,
}

impl Grammar {
    pub const ALL: [Grammar; 5] =
        [Grammar::Palindrome, Grammar::Anbn, Grammar::Anbncbmam, Grammar::Anmbncm, Grammar::Dyck2];

    pub fn name(self) -> &'static str {
        match self {
            Grammar::Palindrome => "palindrome",
            Grammar::Anbn => "anbn",
            Grammar::Anbncbmam => "anbncbmam",
            Grammar::Anmbncm => "anmbncm",
            Grammar::Dyck2 => "dyck2",
        }
    }

    pub fn alphabet(self) -> Alphabet {
        let symbols: &[&str] = match self {
            Grammar::Anbn => &["a", "b"],
            Grammar::Palindrome | Grammar::Anbncbmam | Grammar::Anmbncm => &["a", "b", "c"],
            Grammar::Dyck2 => &["(", ")", "[", "]"],
        };
        Alphabet::new(symbols.iter().copied()).expect("static alphabet")
    }

    pub fn pda(self) -> PdaSpec {
        use StackOp::*;
        use StackSym::*;
        let alphabet = self.alphabet();
        let names = |n: usize| (0..n).map(|q| format!("q{q}")).collect::<Vec<_>>();
        let tr = Transition::new;
        let (states, t, accepting): (Vec<String>, Vec<Transition>, Vec<usize>) = match self {
            Grammar::Anbn => (
                names(2),
                vec![
                    tr(0, 0, Bottom, 0, Push(0)),
                    tr(0, 0, Sym(0), 0, Push(0)),
                    tr(0, 1, Sym(0), 1, Pop),
                    tr(1, 1, Sym(0), 1, Pop),
                ],
                vec![1],
            ),
            Grammar::Palindrome => {
                let mut t = Vec::new();
                for x in 0..2 {
                    t.push(tr(0, x, Bottom, 1, Push(x)));
                    for y in 0..2 {
                        t.push(tr(1, x, Sym(y), 1, Push(x)));
                    }
                    t.push(tr(1, 2, Sym(x), 2, NoOp));
                    t.push(tr(2, x, Sym(x), 2, Pop));
                }
                (names(3), t, vec![2])
            }
            Grammar::Anbncbmam => (
                names(4),
                vec![
                    tr(0, 0, Bottom, 0, Push(0)),
                    tr(0, 0, Sym(0), 0, Push(0)),
                    tr(0, 1, Sym(0), 1, Pop),
                    tr(1, 1, Sym(0), 1, Pop),
                    tr(1, 2, Bottom, 2, NoOp),
                    tr(2, 1, Bottom, 2, Push(1)),
                    tr(2, 1, Sym(1), 2, Push(1)),
                    tr(2, 0, Sym(1), 3, Pop),
                    tr(3, 0, Sym(1), 3, Pop),
                ],
                vec![3],
            ),
            Grammar::Anmbncm => (
                names(3),
                vec![
                    tr(0, 0, Bottom, 0, Push(0)),
                    tr(0, 0, Sym(0), 0, Push(0)),
                    tr(0, 1, Sym(0), 1, Pop),
                    tr(1, 1, Sym(0), 1, Pop),
                    tr(1, 2, Sym(0), 2, Pop),
                    tr(2, 2, Sym(0), 2, Pop),
                ],
                vec![2],
            ),
            Grammar::Dyck2 => {
                let mut t = Vec::new();
                for (open, close) in [(0, 1), (2, 3)] {
                    t.push(tr(0, open, Bottom, 1, Push(open)));
                    for top in [Bottom, Sym(0), Sym(2)] {
                        t.push(tr(1, open, top, 1, Push(open)));
                    }
                    t.push(tr(1, close, Sym(open), 1, Pop));
                }
                (names(2), t, vec![1])
            }
        };
        PdaSpec::new(self.name(), states, alphabet, t, 0, &accepting).expect("static PDA")
    }

    /// Looks up the builtin whose name matches the given PDA's.
    pub fn for_spec(spec: &PdaSpec) -> Option<Grammar> {
        spec.name().parse().ok()
    }

    pub fn is_feasible_length(self, n: usize) -> bool {
        match self {
            Grammar::Anbn | Grammar::Dyck2 => n >= 2 && n.is_multiple_of(2),
            Grammar::Palindrome => n >= 3 && !n.is_multiple_of(2),
            Grammar::Anbncbmam => n >= 5 && !n.is_multiple_of(2),
            Grammar::Anmbncm => n >= 4 && n.is_multiple_of(2),
        }
    }

    /// Feasible length nearest to `target` within `[lo, hi]`; ties go to the shorter.
    pub fn snap_length(self, target: usize, lo: usize, hi: usize) -> Option<usize> {
        (0..=hi.saturating_sub(lo))
            .flat_map(|d| [target.checked_sub(d), target.checked_add(d)])
            .flatten()
            .find(|&n| n >= lo && n <= hi && self.is_feasible_length(n))
    }

    /// Smallest feasible length ≥ `n`.
    pub fn feasible_at_least(self, n: usize) -> usize {
        (n..).find(|&m| self.is_feasible_length(m)).expect("unbounded")
    }

    /// Draws a member of exactly length `n`; `n` must be feasible.
    pub fn sample_member<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Vec<usize> {
        debug_assert!(self.is_feasible_length(n));
        let block = |out: &mut Vec<usize>, sym: usize, count: usize| out.extend(std::iter::repeat_n(sym, count));
        let mut out = Vec::with_capacity(n);
        match self {
            Grammar::Anbn => {
                block(&mut out, 0, n / 2);
                block(&mut out, 1, n / 2);
            }
            Grammar::Palindrome => {
                let w: Vec<usize> = (0..n / 2).map(|_| rng.random_range(0..2)).collect();
                out.extend(&w);
                out.push(2);
                out.extend(w.iter().rev());
            }
            Grammar::Anbncbmam => {
                let s = (n - 1) / 2;
                let a = rng.random_range(1..s);
                block(&mut out, 0, a);
                block(&mut out, 1, a);
                out.push(2);
                block(&mut out, 1, s - a);
                block(&mut out, 0, s - a);
            }
            Grammar::Anmbncm => {
                let s = n / 2;
                let b = rng.random_range(1..s);
                block(&mut out, 0, s);
                block(&mut out, 1, b);
                block(&mut out, 2, s - b);
            }
            Grammar::Dyck2 => {
                let mut stack = Vec::new();
                for step in 0..n {
                    let remaining = n - step;
                    let can_open = stack.len() < remaining - 1;
                    let can_close = !stack.is_empty();
                    let open = can_open && (!can_close || rng.random_bool(0.5));
                    if open {
                        let kind = if rng.random_bool(0.5) { 0 } else { 2 };
                        stack.push(kind);
                        out.push(kind);
                    } else {
                        out.push(stack.pop().expect("close only when open") + 1);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grammar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grammar::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::NotFound(format!("unknown grammar {s:?}")))
    }
}

/// The builtin PDA for `name`.
pub fn builtin_grammar(name: &str) -> Result<PdaSpec> {
    Ok(name.parse::<Grammar>()?.pda())
}

fn runs(tokens: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &t in tokens {
        match out.last_mut() {
            Some((s, n)) if *s == t => *n += 1,
            _ => out.push((t, 1)),
        }
    }
    out
}

/// Membership by direct block counting, reversal and bracket matching.
pub fn closed_form_member(grammar: Grammar, tokens: &[usize]) -> Result<bool> {
    grammar.alphabet().check_tokens(tokens)?;
    let r = runs(tokens);
    Ok(match grammar {
        Grammar::Anbn => matches!(r[..], [(0, n), (1, m)] if n == m),
        Grammar::Anbncbmam => {
            matches!(r[..], [(0, n1), (1, n2), (2, 1), (1, m1), (0, m2)] if n1 == n2 && m1 == m2)
        }
        Grammar::Anmbncm => matches!(r[..], [(0, a), (1, b), (2, c)] if a == b + c),
        Grammar::Palindrome => {
            let n = tokens.len();
            n % 2 == 1
                && n >= 3
                && tokens[n / 2] == 2
                && tokens.iter().enumerate().all(|(i, &t)| i == n / 2 || t != 2)
                && tokens.iter().eq(tokens.iter().rev())
        }
        Grammar::Dyck2 => {
            let mut open = Vec::new();
            let ok = tokens.iter().all(|&t| match t {
                0 | 2 => {
                    open.push(t);
                    true
                }
                _ => open.pop() == Some(t - 1),
            });
            ok && open.is_empty() && !tokens.is_empty()
        }
    })
}
