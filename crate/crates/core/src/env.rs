//! Sequential codon-design environment.
//!
//! A state is a length-`L` slot vector filled left to right. At fill position
//! `t < L` only synonymous codons of residue `t` may be placed; at `t = L`
//! only the exit action is legal. Every non-source state has exactly one
//! parent, so the state graph is a tree and the backward policy is constant.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genetic_code::{Codon, MrnaSequence, Protein};
use crate::objectives::WeightVector;

/// Number of forward actions: 64 codons and exit.
pub const N_ACTIONS: usize = 65;

/// Marker for an unassigned slot.
pub const UNASSIGNED: i8 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(u8);

impl Action {
    pub const EXIT: Action = Action(64);

    pub fn new(id: usize) -> Result<Action> {
        if id < N_ACTIONS {
            Ok(Action(id as u8))
        } else {
            Err(Error::Rejected(format!(
                "action id {id} outside 0..{N_ACTIONS}"
            )))
        }
    }

    pub fn codon(c: Codon) -> Action {
        Action(c.index() as u8)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn is_exit(self) -> bool {
        self == Action::EXIT
    }

    pub fn as_codon(self) -> Option<Codon> {
        if self.is_exit() {
            None
        } else {
            Some(Codon::from_index(self.id()).expect("codon action id is below 64"))
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_codon() {
            Some(c) => write!(f, "{c}"),
            None => f.write_str("exit"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionMask([bool; N_ACTIONS]);

impl ActionMask {
    pub fn none() -> ActionMask {
        ActionMask([false; N_ACTIONS])
    }

    pub fn from_bools(allowed: [bool; N_ACTIONS]) -> ActionMask {
        ActionMask(allowed)
    }

    pub fn allow(&mut self, a: Action) {
        self.0[a.id()] = true;
    }

    pub fn is_allowed(&self, a: Action) -> bool {
        self.0[a.id()]
    }

    pub fn as_slice(&self) -> &[bool; N_ACTIONS] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn allowed(&self) -> impl Iterator<Item = Action> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| Action(i as u8))
    }
}

/// Prefix-filled slot vector plus the fill pointer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    slots: Vec<i8>,
    filled: usize,
}

impl State {
    pub fn slots(&self) -> &[i8] {
        &self.slots
    }

    /// Fill pointer `t`: number of assigned slots.
    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_source(&self) -> bool {
        self.filled == 0
    }

    pub fn is_complete(&self) -> bool {
        self.filled == self.slots.len()
    }

    /// Codon in the most recently filled slot.
    pub fn last_codon(&self) -> Option<Codon> {
        if self.filled == 0 {
            None
        } else {
            Codon::from_index(self.slots[self.filled - 1] as usize).ok()
        }
    }

    pub fn codons(&self) -> Vec<Codon> {
        self.slots[..self.filled]
            .iter()
            .map(|&s| Codon::from_index(s as usize).expect("filled slot holds a codon"))
            .collect()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, &s) in self.slots.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            if s == UNASSIGNED {
                f.write_str("-1")?;
            } else {
                write!(
                    f,
                    "{}",
                    Codon::from_index(s as usize).map_err(|_| fmt::Error)?
                )?;
            }
        }
        f.write_str(")")
    }
}

/// Result of a forward transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transition {
    State(State),
    /// Exit from a complete state: the finished design.
    Terminal(MrnaSequence),
}

/// Backward action space: "remove the codon at position i".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackwardMask(Vec<bool>);

impl BackwardMask {
    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn allowed_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodonDesignEnv {
    protein: Protein,
}

impl CodonDesignEnv {
    pub fn new(protein: Protein) -> CodonDesignEnv {
        CodonDesignEnv { protein }
    }

    pub fn protein(&self) -> &Protein {
        &self.protein
    }

    pub fn len(&self) -> usize {
        self.protein.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protein.is_empty()
    }

    pub fn initial_state(&self) -> State {
        State {
            slots: vec![UNASSIGNED; self.protein.len()],
            filled: 0,
        }
    }

    /// Checks the prefix invariant and synonymy of every filled slot.
    pub fn check_state(&self, s: &State) -> Result<()> {
        if s.slots.len() != self.protein.len() || s.filled > s.slots.len() {
            return Err(Error::Invariant(format!(
                "state of length {} (t={}) does not fit a protein of length {}",
                s.slots.len(),
                s.filled,
                self.protein.len()
            )));
        }
        for (i, &slot) in s.slots.iter().enumerate() {
            if i < s.filled {
                let ok = slot >= 0
                    && Codon::from_index(slot as usize)
                        .map(|c| c.amino_acid() == self.protein.residue(i))
                        .unwrap_or(false);
                if !ok {
                    return Err(Error::Invariant(format!(
                        "slot {i} holds {slot}, not a codon for {}",
                        self.protein.residue(i)
                    )));
                }
            } else if slot != UNASSIGNED {
                return Err(Error::Invariant(format!(
                    "slot {i} is set beyond the fill pointer {}",
                    s.filled
                )));
            }
        }
        Ok(())
    }

    pub fn forward_mask(&self, s: &State) -> Result<ActionMask> {
        self.check_state(s)?;
        Ok(self.forward_mask_unchecked(s.filled))
    }

    /// Mask at fill position `t`, with no state validation.
    pub fn forward_mask_unchecked(&self, t: usize) -> ActionMask {
        let mut mask = ActionMask::none();
        if t == self.protein.len() {
            mask.allow(Action::EXIT);
        } else {
            for &c in self.protein.residue(t).synonymous_codons() {
                mask.allow(Action::codon(c));
            }
        }
        mask
    }

    pub fn backward_mask(&self, s: &State) -> Result<BackwardMask> {
        self.check_state(s)?;
        if s.filled == 0 {
            return Err(Error::NoParent);
        }
        let mut allowed = vec![false; s.len()];
        allowed[s.filled - 1] = true;
        Ok(BackwardMask(allowed))
    }

    pub fn step(&self, s: &State, a: Action) -> Result<Transition> {
        self.check_state(s)?;
        if !self.forward_mask_unchecked(s.filled).is_allowed(a) {
            return Err(Error::IllegalAction {
                action: a.id(),
                position: s.filled,
            });
        }
        Ok(self.step_unchecked(s, a))
    }

    /// Transition without validating the action; callers must respect the mask.
    pub fn step_unchecked(&self, s: &State, a: Action) -> Transition {
        match a.as_codon() {
            None => Transition::Terminal(MrnaSequence::new(s.codons())),
            Some(c) => {
                let mut next = s.clone();
                next.slots[next.filled] = c.index() as i8;
                next.filled += 1;
                Transition::State(next)
            }
        }
    }

    pub fn backstep(&self, s: &State) -> Result<State> {
        self.check_state(s)?;
        if s.filled == 0 {
            return Err(Error::NoParent);
        }
        let mut prev = s.clone();
        prev.filled -= 1;
        prev.slots[prev.filled] = UNASSIGNED;
        Ok(prev)
    }

    /// Number of parents of a state: 0 for the source, 1 otherwise.
    pub fn parent_count(&self, s: &State) -> usize {
        usize::from(s.filled > 0)
    }

    /// The state graph is a tree; the backward policy is identically 1.
    pub fn is_tree(&self) -> bool {
        true
    }

    /// State reached after placing the design's first `t` codons.
    pub fn prefix_state(&self, x: &MrnaSequence, t: usize) -> State {
        let mut slots = vec![UNASSIGNED; self.protein.len()];
        for (i, c) in x.codons()[..t].iter().enumerate() {
            slots[i] = c.index() as i8;
        }
        State { slots, filled: t }
    }
}

/// A complete trajectory `s_0 -> ... -> s_L -> sink`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `s_0 ..= s_L`; the sink is implicit after the final exit action.
    pub states: Vec<State>,
    /// `L` codon actions followed by exit.
    pub actions: Vec<Action>,
    pub design: MrnaSequence,
    /// Forward log-probability of each action under the policy (not the
    /// exploration mixture).
    pub log_pf: Vec<f64>,
    /// Backward log-probabilities; zero on a tree.
    pub log_pb: Vec<f64>,
    pub reward: f64,
    pub weights: WeightVector,
}

impl Trajectory {
    /// Rebuilds the trajectory that generates `x`, with zeroed log-probs.
    pub fn from_design(
        env: &CodonDesignEnv,
        x: &MrnaSequence,
        reward: f64,
        weights: WeightVector,
    ) -> Result<Trajectory> {
        let design = MrnaSequence::for_protein(env.protein(), x.codons().to_vec())?;
        let l = env.len();
        let states = (0..=l).map(|t| env.prefix_state(&design, t)).collect();
        let mut actions: Vec<Action> = design.codons().iter().map(|&c| Action::codon(c)).collect();
        actions.push(Action::EXIT);
        Ok(Trajectory {
            states,
            actions,
            design,
            log_pf: vec![0.0; l + 1],
            log_pb: vec![0.0; l + 1],
            reward,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn sum_log_pf(&self) -> f64 {
        self.log_pf.iter().sum()
    }
}
