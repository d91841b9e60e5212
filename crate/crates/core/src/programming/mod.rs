//! Writing PDA knowledge into network weights.

mod compiled;

pub use compiled::{CompiledMachine, NetAction, Neuron, NeuronKind, Rule};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{PdaSpec, StackOp, StackSym, Transition};
use crate::model::{ModelOrder, ModelParams};

/// Default programming strength for W_s.
pub const STRENGTH: f64 = 6.0;
/// Default output strength θ.
pub const THETA: f64 = 6.0;
/// Bias of read-gated third-order targets.
pub const GATE_BIAS: f64 = -0.5;
/// Bias of second-order split targets, which also gate on the input.
pub const SPLIT_GATE_BIAS: f64 = -1.5;
/// Bias of the sentinel action row.
pub const SENTINEL_BIAS: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HintLevel {
    None,
    Hint1,
    Hint2,
    Full,
}

impl FromStr for HintLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(HintLevel::None),
            "hint1" => Ok(HintLevel::Hint1),
            "hint2" => Ok(HintLevel::Hint2),
            "full" => Ok(HintLevel::Full),
            _ => Err(Error::Input(format!("unknown hint level {s:?}"))),
        }
    }
}

impl fmt::Display for HintLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HintLevel::None => "none",
            HintLevel::Hint1 => "hint1",
            HintLevel::Hint2 => "hint2",
            HintLevel::Full => "full",
        })
    }
}

/// PDA state ordinal → neuron index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAssignment {
    pub neuron_of: Vec<usize>,
    pub j: usize,
}

impl StateAssignment {
    pub fn neuron(&self, state: usize) -> Result<usize> {
        self.neuron_of
            .get(state)
            .copied()
            .ok_or_else(|| Error::Programming(format!("state {state} is not assigned")))
    }
}

/// State m ↦ neuron m; needs J > M.
pub fn assign_states(pda: &PdaSpec, j: usize) -> Result<StateAssignment> {
    let m = pda.num_states();
    if j <= m {
        return Err(Error::Capacity(format!("J={j} must exceed M={m}")));
    }
    Ok(StateAssignment { neuron_of: (0..m).collect(), j })
}

fn read_indices(params: &ModelParams, top: StackSym) -> Vec<usize> {
    match top {
        StackSym::Sym(k) => vec![k],
        StackSym::Bottom => (0..params.l).collect(),
    }
}

/// Direct one-hot programming of a single transition: `W_s[i][j][k][l] = +H`,
/// `W_s[j][j][k][l] = −H` and the action entry. ⊥-conditioned transitions are
/// written at every read index.
pub fn program_transition(params: &mut ModelParams, assignment: &StateAssignment, t: &Transition, h: f64) -> Result<()> {
    let j = assignment.neuron(t.from)?;
    let i = assignment.neuron(t.to)?;
    let l = t.input.ok_or_else(|| Error::Programming("ε-transitions cannot be programmed".into()))?;
    if i >= params.j || j >= params.j || l >= params.l {
        return Err(Error::Programming("transition outside the model's dimensions".into()));
    }
    for k in read_indices(params, t.top) {
        let m = match params.order {
            ModelOrder::Third => k * params.l + l,
            ModelOrder::Second => k,
        };
        let idx = params.ws_index(i, j, m);
        params.w_s[idx] = h;
        if i != j {
            let idx = params.ws_index(j, j, m);
            params.w_s[idx] = -h;
        }
        if params.order == ModelOrder::Second {
            let idx = params.ws_index(i, j, params.l + l);
            params.w_s[idx] = h;
        }
        match t.op {
            StackOp::Push(c) => {
                let idx = params.wa_index(c, j, m);
                params.w_a[idx] = 1.0;
            }
            StackOp::Pop => {
                let c = t.top.symbol().expect("⊥ is never popped");
                let idx = params.wa_index(c, j, m);
                params.w_a[idx] = -1.0;
            }
            StackOp::NoOp => {}
        }
    }
    Ok(())
}

/// W_o = +θ on accepting neurons, −θ on other assigned ones, 0 elsewhere; b_o = −θ/2.
pub fn program_acceptance(params: &mut ModelParams, assignment: &StateAssignment, accepting: &[usize], theta: f64) {
    params.w_o.iter_mut().for_each(|w| *w = 0.0);
    for (q, &n) in assignment.neuron_of.iter().enumerate() {
        params.w_o[n] = if accepting.contains(&q) { theta } else { -theta };
    }
    params.b_o = -theta / 2.0;
}

/// Which compiled rules a hint level carries.
pub fn rule_is_hinted(machine: &CompiledMachine, rule: &Rule, level: HintLevel) -> bool {
    match level {
        HintLevel::None | HintLevel::Hint1 => false,
        HintLevel::Hint2 => machine.neurons[rule.from].state == machine.start_state,
        HintLevel::Full => true,
    }
}

/// Network layout of a compiled machine for a given order.
#[derive(Debug, Clone)]
pub struct Layout {
    pub order: ModelOrder,
    pub machine: CompiledMachine,
    /// Network neuron → (compiled neuron, entering input for second-order splits).
    pub units: Vec<(usize, Option<usize>)>,
}

impl Layout {
    pub fn new(pda: &PdaSpec, order: ModelOrder) -> Result<Self> {
        let machine = CompiledMachine::compile(pda)?;
        let units = match order {
            ModelOrder::Third => (0..machine.neuron_count()).map(|n| (n, None)).collect(),
            ModelOrder::Second => {
                let mut units = vec![(0, None)];
                for r in &machine.rules {
                    let u = (r.to, Some(r.input));
                    if !units.contains(&u) {
                        units.push(u);
                    }
                }
                units
            }
        };
        Ok(Self { order, machine, units })
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    fn units_of(&self, neuron: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.units.len()).filter(move |&u| self.units[u].0 == neuron)
    }

    fn unit(&self, neuron: usize, input: usize) -> usize {
        match self.order {
            ModelOrder::Third => neuron,
            ModelOrder::Second => self
                .units
                .iter()
                .position(|&u| u == (neuron, Some(input)))
                .expect("split unit exists for every rule target"),
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if params.order != self.order {
            return Err(Error::Programming("model order differs from layout".into()));
        }
        if params.j < self.unit_count() {
            return Err(Error::Capacity(format!(
                "compiled machine needs J >= {} state neurons, model has {}",
                self.unit_count(),
                params.j
            )));
        }
        Ok(())
    }

    fn write_rule(&self, p: &mut ModelParams, rule: &Rule, h: f64) {
        let l = rule.input;
        let to = self.unit(rule.to, l);
        let sources: Vec<usize> = self.units_of(rule.from).collect();
        for src in sources {
            match (self.order, rule.top) {
                (ModelOrder::Third, None) => {
                    for k in 0..p.l {
                        let idx = p.ws_index(to, src, k * p.l + l);
                        p.w_s[idx] = h;
                    }
                    p.b_s[to] = 0.0;
                }
                (ModelOrder::Third, Some(tau)) => {
                    let m = tau * p.l + l;
                    let idx = p.ws_index(to, src, m);
                    p.w_s[idx] = h;
                    if to != src {
                        let idx = p.ws_index(src, src, m);
                        p.w_s[idx] = -h;
                    }
                    p.b_s[to] = GATE_BIAS;
                    match rule.action {
                        NetAction::Push(c) => {
                            let idx = p.wa_index(c, src, m);
                            p.w_a[idx] = 1.0;
                        }
                        NetAction::Pop(c) => {
                            let idx = p.wa_index(c, src, m);
                            p.w_a[idx] = -1.0;
                        }
                        NetAction::NoOp | NetAction::Sentinel => {}
                    }
                }
                (ModelOrder::Second, None) => {
                    let idx = p.ws_index(to, src, p.l + l);
                    p.w_s[idx] = h;
                    p.b_s[to] = GATE_BIAS;
                }
                (ModelOrder::Second, Some(tau)) => {
                    let idx = p.ws_index(to, src, tau);
                    p.w_s[idx] = h;
                    let idx = p.ws_index(to, src, p.l + l);
                    p.w_s[idx] = h;
                    p.b_s[to] = SPLIT_GATE_BIAS;
                    match rule.action {
                        NetAction::Push(c) => {
                            let idx = p.wa_index(c, src, p.l + l);
                            p.w_a[idx] = 1.0;
                        }
                        NetAction::Pop(c) => {
                            let idx = p.wa_index(c, src, tau);
                            p.w_a[idx] = -1.0;
                        }
                        NetAction::NoOp | NetAction::Sentinel => {}
                    }
                }
            }
        }
    }

    /// Sentinel push on the first step, suppressed on every later one.
    fn write_sentinel(&self, p: &mut ModelParams) {
        let c = self.machine.sentinel;
        p.b_a[c] = SENTINEL_BIAS;
        let reads: Vec<usize> = match self.order {
            ModelOrder::Third => (0..p.l * p.l).collect(),
            ModelOrder::Second => (0..p.l).collect(),
        };
        for u in 1..self.unit_count() {
            for &m in &reads {
                let idx = p.wa_index(c, u, m);
                p.w_a[idx] = -1.0;
            }
        }
    }

    fn write_output(&self, p: &mut ModelParams, theta: f64) {
        p.w_o.iter_mut().for_each(|w| *w = 0.0);
        for (u, &(n, _)) in self.units.iter().enumerate() {
            p.w_o[u] = if self.machine.is_accepting_neuron(n) { theta } else { -theta };
        }
        p.b_o = -theta / 2.0;
    }

    /// Writes the hint level's entries over `params`, leaving all others as they are.
    pub fn apply(&self, params: &mut ModelParams, level: HintLevel, h: f64, theta: f64) -> Result<()> {
        self.check(params)?;
        if level == HintLevel::None {
            return Ok(());
        }
        self.write_output(params, theta);
        if level >= HintLevel::Hint2 {
            self.write_sentinel(params);
        }
        for rule in &self.machine.rules {
            if rule_is_hinted(&self.machine, rule, level) {
                self.write_rule(params, rule, h);
            }
        }
        Ok(())
    }
}

/// Zero-initialized model with every rule, the sentinel row and the output
/// programmed. Third order is exact; second order uses split states and
/// input-keyed pushes.
pub fn program_full(pda: &PdaSpec, order: ModelOrder, j: usize, h: f64) -> Result<ModelParams> {
    let layout = Layout::new(pda, order)?;
    if j <= pda.num_states() {
        return Err(Error::Capacity(format!("J={j} must exceed M={}", pda.num_states())));
    }
    let mut params = ModelParams::zeros(order, j, pda.alphabet().len())?;
    layout.apply(&mut params, HintLevel::Full, h, THETA)?;
    Ok(params)
}

/// Smallest J that [`program_full`] and [`insert_hints`] accept.
pub fn required_state_count(pda: &PdaSpec, order: ModelOrder) -> Result<usize> {
    Ok(Layout::new(pda, order)?.unit_count().max(pda.num_states() + 1))
}

/// Overwrites the entries a hint level fixes; everything else stays trainable as is.
pub fn insert_hints(params: &ModelParams, pda: &PdaSpec, level: HintLevel, h: f64) -> Result<ModelParams> {
    let mut out = params.clone();
    if level != HintLevel::None {
        Layout::new(pda, params.order)?.apply(&mut out, level, h, THETA)?;
    }
    Ok(out)
}

/// h_t = 1 iff the compiled rule used at step t is hinted; 0 once the machine dies.
pub fn hint_mask(pda: &PdaSpec, level: HintLevel, tokens: &[usize]) -> Result<Vec<bool>> {
    if level == HintLevel::None {
        return Ok(vec![false; tokens.len()]);
    }
    let machine = CompiledMachine::compile(pda)?;
    Ok(hint_mask_with(&machine, level, tokens))
}

pub fn hint_mask_with(machine: &CompiledMachine, level: HintLevel, tokens: &[usize]) -> Vec<bool> {
    let (_, used) = machine.simulate(tokens);
    used.iter()
        .map(|r| r.is_some_and(|ri| rule_is_hinted(machine, &machine.rules[ri], level)))
        .collect()
}

/// Counts of quantized values: (W_s zeros, W_s ones, W_a −1, W_a 0, W_a +1).
pub fn quantized_census(params: &ModelParams) -> [usize; 5] {
    let q = crate::model::quantize_weights(params);
    let mut c = [0; 5];
    for &w in &q.w_s {
        c[usize::from(w == 1.0)] += 1;
    }
    for &w in &q.w_a {
        c[(w as i64 + 3) as usize] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{pda_accepts, Grammar};
    use crate::model::{classify, forward_sequence, quantize_weights, ForwardOptions, Mode};
    use crate::stack::ReadNoise;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn assignment_is_ordinal() {
        let pda = Grammar::Anbn.pda();
        let a = assign_states(&pda, 5).unwrap();
        assert_eq!(a.neuron_of, vec![0, 1]);
        assert_eq!(a.neuron(pda.start()).unwrap(), 0);
        assert!(matches!(assign_states(&pda, 2), Err(Error::Capacity(_))));
    }

    #[test]
    fn single_transition_entries() {
        let pda = Grammar::Anbn.pda();
        let a = assign_states(&pda, 4).unwrap();
        let mut p = ModelParams::zeros(ModelOrder::Third, 4, 2).unwrap();
        let t = pda.transitions()[0];
        program_transition(&mut p, &a, &t, STRENGTH).unwrap();
        for k in 0..2 {
            assert_eq!(p.ws4(0, 0, k, 0), STRENGTH);
            assert_eq!(p.wa4(0, 0, k, 0), 1.0);
        }
        let once = p.clone();
        program_transition(&mut p, &a, &t, STRENGTH).unwrap();
        assert_eq!(p, once);
        let q = quantize_weights(&p);
        assert!(q.w_s.iter().all(|&w| w == 0.0 || w == 1.0));
    }

    #[test]
    fn acceptance_head() {
        let pda = Grammar::Anbn.pda();
        let a = assign_states(&pda, 4).unwrap();
        let mut p = ModelParams::zeros(ModelOrder::Third, 4, 2).unwrap();
        program_acceptance(&mut p, &a, &pda.accepting_states(), THETA);
        assert_eq!(p.w_o, vec![-THETA, THETA, 0.0, 0.0]);
        assert_eq!(p.b_o, -THETA / 2.0);
    }

    #[test]
    fn programmed_anbn_examples() {
        let pda = Grammar::Anbn.pda();
        let p = program_full(&pda, ModelOrder::Third, 6, STRENGTH).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (s, want) in [("aabb", true), ("aab", false), ("ab", true), ("ba", false), ("abab", false)] {
            let t = pda.alphabet().parse_compact(s).unwrap();
            assert_eq!(classify(&p, &t, ReadNoise::Random, &mut rng).unwrap(), want, "{s}");
        }
        // final z is one-hot on an accepting neuron
        let t = pda.alphabet().parse_compact("ab").unwrap();
        let f = forward_sequence(&p, &t, &[1, 1], ForwardOptions::quantized(ReadNoise::Midpoint), &mut rng).unwrap();
        let layout = Layout::new(&pda, ModelOrder::Third).unwrap();
        let on: Vec<usize> = (0..6).filter(|&i| f.state.z[i] == 1.0).collect();
        assert_eq!(on.len(), 1);
        assert!(layout.machine.is_accepting_neuron(on[0]));
        assert!(f.state.z.iter().all(|&z| z == 0.0 || z == 1.0));
    }

    #[test]
    fn capacity_is_enforced() {
        let pda = Grammar::Palindrome.pda();
        let need = required_state_count(&pda, ModelOrder::Third).unwrap();
        assert!(program_full(&pda, ModelOrder::Third, need, STRENGTH).is_ok());
        assert!(matches!(program_full(&pda, ModelOrder::Third, need - 1, STRENGTH), Err(Error::Capacity(_))));
    }

    #[test]
    fn hint_levels_nest() {
        for g in Grammar::ALL {
            let pda = g.pda();
            let j = required_state_count(&pda, ModelOrder::Third).unwrap() + 2;
            let base = crate::model::init_params(ModelOrder::Third, j, pda.alphabet().len(), 3).unwrap();
            let levels = [HintLevel::Hint1, HintLevel::Hint2, HintLevel::Full];
            let hinted: Vec<ModelParams> = levels.iter().map(|&l| insert_hints(&base, &pda, l, STRENGTH).unwrap()).collect();
            use crate::learning::FlatParams;
            let flat_base = base.to_flat();
            let changed = |p: &ModelParams| -> Vec<usize> {
                p.to_flat().iter().zip(&flat_base).enumerate().filter(|(_, (a, b))| a != b).map(|(i, _)| i).collect()
            };
            for w in hinted.windows(2) {
                let (lo, hi) = (w[0].to_flat(), w[1].to_flat());
                for i in changed(&w[0]) {
                    assert_eq!(lo[i], hi[i], "{g}: entry {i}");
                }
            }
            assert_eq!(insert_hints(&base, &pda, HintLevel::None, STRENGTH).unwrap(), base);
            assert_eq!(hinted[0].w_s, base.w_s);
        }
    }

    #[test]
    fn masks() {
        let pda = Grammar::Anbn.pda();
        let t = pda.alphabet().parse_compact("aabb").unwrap();
        assert_eq!(hint_mask(&pda, HintLevel::None, &t).unwrap(), vec![false; 4]);
        assert_eq!(hint_mask(&pda, HintLevel::Full, &t).unwrap(), vec![true; 4]);
        assert_eq!(hint_mask(&pda, HintLevel::Hint2, &t).unwrap(), vec![true, true, true, false]);
        let bad = pda.alphabet().parse_compact("ba").unwrap();
        assert_eq!(hint_mask(&pda, HintLevel::Full, &bad).unwrap(), vec![false, false]);
    }

    #[test]
    fn programmed_tensors_are_sparse_and_discrete() {
        for g in Grammar::ALL {
            let pda = g.pda();
            let j = required_state_count(&pda, ModelOrder::Third).unwrap();
            let p = program_full(&pda, ModelOrder::Third, j, STRENGTH).unwrap();
            let layout = Layout::new(&pda, ModelOrder::Third).unwrap();
            let nonzero = p.w_s.iter().filter(|&&w| w != 0.0).count();
            let init_rules = layout.machine.rules.iter().filter(|r| r.top.is_none()).count();
            assert!(nonzero <= 2 * layout.machine.rules.len() + init_rules * pda.alphabet().len(), "{g}");
            let c = quantized_census(&p);
            assert_eq!(c[0] + c[1], p.w_s.len());
            assert_eq!(c[2] + c[3] + c[4], p.w_a.len());
        }
    }

    #[test]
    fn second_order_programming_runs() {
        let pda = Grammar::Dyck2.pda();
        let j = required_state_count(&pda, ModelOrder::Second).unwrap();
        let p = program_full(&pda, ModelOrder::Second, j, STRENGTH).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agree = 0;
        let samples = ["()", "[]", "([])", "(]", "(()", "[()]()"];
        for s in samples {
            let t = pda.alphabet().parse_compact(s).unwrap();
            let got = classify(&p, &t, ReadNoise::Midpoint, &mut rng).unwrap();
            agree += usize::from(got == pda_accepts(&pda, &t).unwrap());
        }
        assert!(agree >= 1);
        let _ = Mode::Quantized;
    }
}
