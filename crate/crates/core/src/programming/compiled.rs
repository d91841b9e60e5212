//! Compilation of a deterministic PDA into a one-hot machine the quantized
//! network can run exactly.
//!
//! The network stack holds an extra sentinel symbol `c*` (a symbol the PDA
//! never pushes) directly above ⊥, pushed on the first step by a biased action
//! row. The PDA's bottom-most symbol lives in the neuron instead:
//! network stack = `[⊥, c*] ++ pda_stack[1..]` and each neuron is a pair
//! (PDA state, bottom symbol or none). This way every read the gates need is a
//! high component; an all-low read only ever occurs on the first step, which is
//! handled from a dedicated init neuron into bias-0 copy neurons.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{PdaSpec, StackOp, StackSym};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeuronKind {
    Init,
    /// Target of a first-step rule (fires from an all-low read).
    Copy,
    /// Target of read-gated rules.
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Neuron {
    pub state: usize,
    pub bottom: Option<usize>,
    pub kind: NeuronKind,
}

/// What the network stack does on a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetAction {
    Push(usize),
    Pop(usize),
    NoOp,
    /// First step: push the sentinel.
    Sentinel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub from: usize,
    pub input: usize,
    /// Network top required; `None` for the first-step rules (read all low).
    pub top: Option<usize>,
    pub to: usize,
    pub action: NetAction,
    /// Index of the PDA transition this rule realizes.
    pub transition: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompiledMachine {
    pub neurons: Vec<Neuron>,
    pub rules: Vec<Rule>,
    pub sentinel: usize,
    pub start_state: usize,
    pub accepting: Vec<bool>,
    pub alphabet_len: usize,
    index: HashMap<(usize, usize, Option<usize>), usize>,
}

impl CompiledMachine {
    pub fn compile(pda: &PdaSpec) -> Result<Self> {
        if !pda.is_deterministic() {
            return Err(Error::Programming(format!("{} is not deterministic; exact programming needs a real-time DPDA", pda.name())));
        }
        let sentinel = *pda
            .unpushed_symbols()
            .first()
            .ok_or_else(|| Error::Programming(format!("{}: every symbol is pushed, no sentinel available", pda.name())))?;
        let l = pda.alphabet().len();
        let mut stack_syms: Vec<usize> = pda
            .transitions()
            .iter()
            .filter_map(|t| match t.op {
                StackOp::Push(s) => Some(s),
                _ => None,
            })
            .collect();
        stack_syms.sort_unstable();
        stack_syms.dedup();

        let mut neurons = vec![Neuron { state: pda.start(), bottom: None, kind: NeuronKind::Init }];
        let mut lookup: HashMap<Neuron, usize> = HashMap::new();
        let mut rules = Vec::new();
        let transition_index = |t: &crate::grammar::Transition| {
            pda.transitions().iter().position(|u| u == t).expect("transition from spec")
        };

        for x in 0..l {
            let Some(t) = pda.lookup(pda.start(), Some(x), StackSym::Bottom).next() else { continue };
            let bottom = match t.op {
                StackOp::Push(s) => Some(s),
                StackOp::NoOp => None,
                StackOp::Pop => unreachable!("⊥ is never popped"),
            };
            let n = Neuron { state: t.to, bottom, kind: NeuronKind::Copy };
            let to = *lookup.entry(n).or_insert_with(|| {
                neurons.push(n);
                neurons.len() - 1
            });
            rules.push(Rule { from: 0, input: x, top: None, to, action: NetAction::Sentinel, transition: transition_index(t) });
        }

        let mut cursor = 1;
        while cursor < neurons.len() {
            let n = neurons[cursor];
            for x in 0..l {
                for &tau in stack_syms.iter().chain(std::iter::once(&sentinel)) {
                    let pda_top = if tau == sentinel {
                        n.bottom.map_or(StackSym::Bottom, StackSym::Sym)
                    } else if n.bottom.is_none() {
                        continue;
                    } else {
                        StackSym::Sym(tau)
                    };
                    let Some(t) = pda.lookup(n.state, Some(x), pda_top).next() else { continue };
                    let (bottom, action) = match (n.bottom, tau == sentinel, t.op) {
                        (None, _, StackOp::Push(s)) => (Some(s), NetAction::NoOp),
                        (None, _, _) => (None, NetAction::NoOp),
                        (b, true, StackOp::Pop) => {
                            debug_assert!(b.is_some());
                            (None, NetAction::NoOp)
                        }
                        (b, false, StackOp::Pop) => (b, NetAction::Pop(tau)),
                        (b, _, StackOp::Push(s)) => (b, NetAction::Push(s)),
                        (b, _, StackOp::NoOp) => (b, NetAction::NoOp),
                    };
                    let target = Neuron { state: t.to, bottom, kind: NeuronKind::Main };
                    let to = *lookup.entry(target).or_insert_with(|| {
                        neurons.push(target);
                        neurons.len() - 1
                    });
                    rules.push(Rule { from: cursor, input: x, top: Some(tau), to, action, transition: transition_index(t) });
                }
            }
            cursor += 1;
        }

        let index = rules.iter().enumerate().map(|(i, r)| ((r.from, r.input, r.top), i)).collect();
        Ok(Self {
            neurons,
            rules,
            sentinel,
            start_state: pda.start(),
            accepting: (0..pda.num_states()).map(|q| pda.is_accepting(q)).collect(),
            alphabet_len: l,
            index,
        })
    }

    pub fn neuron_count(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_accepting_neuron(&self, n: usize) -> bool {
        let nr = &self.neurons[n];
        nr.kind != NeuronKind::Init && nr.bottom.is_none() && self.accepting[nr.state]
    }

    pub fn rule(&self, from: usize, input: usize, top: Option<usize>) -> Option<&Rule> {
        self.index.get(&(from, input, top)).map(|&i| &self.rules[i])
    }

    /// Runs the machine symbolically; returns acceptance and the rule used per step.
    pub fn simulate(&self, tokens: &[usize]) -> (bool, Vec<Option<usize>>) {
        let mut used = Vec::with_capacity(tokens.len());
        let mut current = Some(0usize);
        let mut stack: Vec<usize> = Vec::new();
        for &x in tokens {
            let Some(n) = current else {
                used.push(None);
                continue;
            };
            let top = if n == 0 { None } else { stack.last().copied() };
            match self.index.get(&(n, x, top)) {
                None => {
                    current = None;
                    used.push(None);
                }
                Some(&ri) => {
                    let r = &self.rules[ri];
                    match r.action {
                        NetAction::Sentinel => stack.push(self.sentinel),
                        NetAction::Push(s) => stack.push(s),
                        NetAction::Pop(_) => {
                            stack.pop();
                        }
                        NetAction::NoOp => {}
                    }
                    current = Some(r.to);
                    used.push(Some(ri));
                }
            }
        }
        (current.is_some_and(|n| self.is_accepting_neuron(n)), used)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{pda_accepts, Grammar};

    #[test]
    fn anbn_machine_layout() {
        let m = CompiledMachine::compile(&Grammar::Anbn.pda()).unwrap();
        assert_eq!(m.sentinel, 1);
        assert_eq!(m.neurons[0].kind, NeuronKind::Init);
        assert_eq!(m.neurons[1], Neuron { state: 0, bottom: Some(0), kind: NeuronKind::Copy });
        // init, copy (q0,a), main (q0,a), main (q1,none), main (q1,a)
        assert_eq!(m.neuron_count(), 5);
        assert_eq!(m.rule(0, 0, None).unwrap().action, NetAction::Sentinel);
        assert!(m.rule(0, 1, None).is_none());
    }

    #[test]
    fn simulation_matches_oracle_exhaustively() {
        for g in Grammar::ALL {
            let pda = g.pda();
            let m = CompiledMachine::compile(&pda).unwrap();
            let l = pda.alphabet().len();
            for n in 1..=8u32 {
                for mut code in 0..l.pow(n) {
                    let s: Vec<usize> = (0..n).map(|_| { let t = code % l; code /= l; t }).collect();
                    assert_eq!(m.simulate(&s).0, pda_accepts(&pda, &s).unwrap(), "{g} {s:?}");
                }
            }
        }
    }

    #[test]
    fn nondeterministic_specs_are_refused() {
        assert!(matches!(CompiledMachine::compile(&PdaSpec::even_palindrome()), Err(Error::Programming(_))));
    }
}
