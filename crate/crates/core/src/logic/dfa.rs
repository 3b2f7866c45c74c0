use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::formula::Formula;
use super::LogicError;

/// Default guardrail on the number of progression residuals.
pub const DEFAULT_CLOSURE_CAP: usize = 1_000_000;

/// Deterministic finite automaton with accepting sinks.
///
/// Letters are bitmasks over [`Dfa::atoms`]: bit `k` is set when `atoms[k]`
/// holds. The transition table is total.
#[derive(Clone, Debug, PartialEq)]
pub struct Dfa {
    atoms: Vec<String>,
    initial: usize,
    delta: Vec<Vec<usize>>,
    accepting: Vec<bool>,
    traps: Vec<bool>,
    pre_sinks: Vec<bool>,
    names: Vec<String>,
}

/// Exact partition of the locations of a [`Dfa`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocationClasses {
    pub accepting: Vec<usize>,
    pub traps: Vec<usize>,
    pub live: Vec<usize>,
}

impl Dfa {
    /// Build an automaton from an explicit transition table.
    ///
    /// Traps are recomputed; pre-sinks are not inserted (see
    /// [`insert_pre_sinks`]).
    pub fn from_table(
        atoms: Vec<String>,
        initial: usize,
        delta: Vec<Vec<usize>>,
        accepting: &[usize],
    ) -> Result<Dfa, LogicError> {
        let n = delta.len();
        if n == 0 || initial >= n {
            return Err(LogicError::InvalidDfa("initial location out of range".into()));
        }
        if atoms.len() > 20 {
            return Err(LogicError::InvalidDfa("too many atoms (limit 20)".into()));
        }
        let letters = 1usize << atoms.len();
        for (q, row) in delta.iter().enumerate() {
            if row.len() != letters {
                return Err(LogicError::InvalidDfa(format!(
                    "location {q} has {} transitions, expected {letters}",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|&&t| t >= n) {
                return Err(LogicError::InvalidDfa(format!(
                    "location {q} targets unknown location {bad}"
                )));
            }
        }
        let mut acc = vec![false; n];
        for &q in accepting {
            if q >= n {
                return Err(LogicError::InvalidDfa(format!("accepting location {q} out of range")));
            }
            acc[q] = true;
        }
        for q in 0..n {
            if acc[q] && delta[q].iter().any(|&t| t != q) {
                return Err(LogicError::InvalidDfa(format!("accepting location {q} is not a sink")));
            }
        }
        let names = (0..n).map(|q| format!("q{q}")).collect();
        let mut dfa = Dfa {
            atoms,
            initial,
            delta,
            accepting: acc,
            traps: vec![false; n],
            pre_sinks: vec![false; n],
            names,
        };
        dfa.refresh_classes();
        Ok(dfa)
    }

    fn refresh_classes(&mut self) {
        let classes = classify_locations(self);
        self.traps = vec![false; self.num_locations()];
        for q in classes.traps {
            self.traps[q] = true;
        }
        self.pre_sinks = (0..self.num_locations())
            .map(|q| !self.accepting[q] && self.delta[q].iter().all(|&t| self.accepting[t]))
            .collect();
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn num_letters(&self) -> usize {
        1 << self.atoms.len()
    }

    pub fn num_locations(&self) -> usize {
        self.delta.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting[q]
    }

    pub fn is_trap(&self, q: usize) -> bool {
        self.traps[q]
    }

    pub fn is_pre_sink(&self, q: usize) -> bool {
        self.pre_sinks[q]
    }

    /// Task ended: accomplished or failed.
    pub fn is_done(&self, q: usize) -> bool {
        self.accepting[q] || self.traps[q]
    }

    pub fn has_pre_sinks(&self) -> bool {
        self.pre_sinks.iter().any(|&p| p)
    }

    /// Human-readable name of a location (the residual formula when built
    /// from LTL).
    pub fn name(&self, q: usize) -> &str {
        &self.names[q]
    }

    pub fn step(&self, q: usize, letter: usize) -> usize {
        self.delta[q][letter]
    }

    pub fn successors(&self, q: usize) -> BTreeSet<usize> {
        self.delta[q].iter().copied().collect()
    }

    /// Project a set of atom names onto this automaton's alphabet.
    pub fn letter<'a>(&self, holds: impl IntoIterator<Item = &'a str>) -> usize {
        let mut mask = 0;
        for a in holds {
            if let Ok(k) = self.atoms.binary_search_by(|x| x.as_str().cmp(a)) {
                mask |= 1 << k;
            }
        }
        mask
    }

    /// Whether the run over `word` visits an accepting location.
    pub fn accepts(&self, word: &[usize]) -> bool {
        let mut q = self.initial;
        if self.accepting[q] {
            return true;
        }
        for &letter in word {
            q = self.delta[q][letter];
            if self.accepting[q] {
                return true;
            }
        }
        false
    }

    /// Bound the number of letters the task may consume before acceptance.
    ///
    /// Locations become pairs (location, letters read). Reading the `k`-th
    /// letter without reaching acceptance moves to a fresh trap. Pre-sinks are
    /// re-derived on the result, so call [`insert_pre_sinks`] afterwards.
    pub fn with_deadline(&self, k: usize) -> Result<Dfa, LogicError> {
        if k == 0 {
            return Err(LogicError::InvalidDfa("deadline must be positive".into()));
        }
        let letters = self.num_letters();
        // 0 = accepting sink, 1 = trap sink
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut keys: Vec<(usize, usize)> = vec![(usize::MAX, 0), (usize::MAX, 1)];
        let mut delta: Vec<Vec<usize>> = vec![vec![0; letters], vec![1; letters]];
        let classify = |q: usize,
                        c: usize,
                        index: &mut HashMap<(usize, usize), usize>,
                        keys: &mut Vec<(usize, usize)>,
                        delta: &mut Vec<Vec<usize>>|
         -> usize {
            if self.accepting[q] {
                0
            } else if self.traps[q] || c >= k {
                1
            } else {
                *index.entry((q, c)).or_insert_with(|| {
                    keys.push((q, c));
                    delta.push(Vec::new());
                    keys.len() - 1
                })
            }
        };
        let initial = classify(self.initial, 0, &mut index, &mut keys, &mut delta);
        let mut cursor = 2;
        while cursor < keys.len() {
            let (q, c) = keys[cursor];
            let row: Vec<usize> = (0..letters)
                .map(|l| classify(self.delta[q][l], c + 1, &mut index, &mut keys, &mut delta))
                .collect();
            delta[cursor] = row;
            cursor += 1;
        }
        let mut dfa = Dfa::from_table(self.atoms.clone(), initial, delta, &[0])?;
        dfa.names = keys
            .iter()
            .enumerate()
            .map(|(id, &(q, c))| match id {
                0 => "true".to_string(),
                1 => "deadline".to_string(),
                _ => format!("{}@{c}", self.names[q]),
            })
            .collect();
        Ok(dfa)
    }

    pub fn to_json(&self) -> DfaJson {
        let mut edges: BTreeMap<(usize, usize), Vec<Vec<String>>> = BTreeMap::new();
        for (q, row) in self.delta.iter().enumerate() {
            for (letter, &t) in row.iter().enumerate() {
                let set = (0..self.atoms.len())
                    .filter(|k| letter & (1 << k) != 0)
                    .map(|k| self.atoms[k].clone())
                    .collect();
                edges.entry((q, t)).or_default().push(set);
            }
        }
        let pick = |flags: &[bool]| flags.iter().enumerate().filter(|(_, &f)| f).map(|(q, _)| q).collect();
        DfaJson {
            locations: (0..self.num_locations()).collect(),
            initial: self.initial,
            accepting: pick(&self.accepting),
            traps: pick(&self.traps),
            pre_sinks: pick(&self.pre_sinks),
            edges: edges
                .into_iter()
                .map(|((from, to), guard)| DfaEdge { from, guard, to })
                .collect(),
        }
    }

    /// Rebuild from the JSON exchange format. The alphabet is the set of atoms
    /// mentioned in guards; every letter must be covered exactly once per
    /// location. Traps are recomputed from the edges.
    pub fn from_json(json: &DfaJson) -> Result<Dfa, LogicError> {
        let ids: BTreeMap<usize, usize> = json.locations.iter().enumerate().map(|(k, &q)| (q, k)).collect();
        if ids.len() != json.locations.len() {
            return Err(LogicError::InvalidDfa("duplicate location ids".into()));
        }
        let lookup = |q: usize| {
            ids.get(&q)
                .copied()
                .ok_or_else(|| LogicError::InvalidDfa(format!("unknown location {q}")))
        };
        let atoms: Vec<String> = json
            .edges
            .iter()
            .flat_map(|e| e.guard.iter().flatten().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if atoms.len() > 20 {
            return Err(LogicError::InvalidDfa("too many atoms (limit 20)".into()));
        }
        let letters = 1usize << atoms.len();
        let mut delta = vec![vec![usize::MAX; letters]; json.locations.len()];
        for edge in &json.edges {
            let from = lookup(edge.from)?;
            let to = lookup(edge.to)?;
            for set in &edge.guard {
                let mut mask = 0;
                for a in set {
                    mask |= 1 << atoms.binary_search(a).unwrap();
                }
                if delta[from][mask] != usize::MAX && delta[from][mask] != to {
                    return Err(LogicError::InvalidDfa(format!(
                        "location {} has two successors for {set:?}",
                        edge.from
                    )));
                }
                delta[from][mask] = to;
            }
        }
        if let Some(q) = delta.iter().position(|row| row.contains(&usize::MAX)) {
            return Err(LogicError::InvalidDfa(format!(
                "transition function is not total at location {}",
                json.locations[q]
            )));
        }
        let accepting = json
            .accepting
            .iter()
            .map(|&q| lookup(q))
            .collect::<Result<Vec<_>, _>>()?;
        let mut dfa = Dfa::from_table(atoms, lookup(json.initial)?, delta, &accepting)?;
        dfa.names = json.locations.iter().map(|q| format!("q{q}")).collect();
        Ok(dfa)
    }
}

/// JSON exchange format; guards are lists of letters, each letter being the
/// set of atoms that hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DfaJson {
    pub locations: Vec<usize>,
    pub initial: usize,
    pub accepting: Vec<usize>,
    #[serde(default)]
    pub traps: Vec<usize>,
    #[serde(default)]
    pub pre_sinks: Vec<usize>,
    pub edges: Vec<DfaEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfaEdge {
    pub from: usize,
    pub guard: Vec<Vec<String>>,
    pub to: usize,
}

pub fn formula_to_dfa(formula: &Formula) -> Result<Dfa, LogicError> {
    formula_to_dfa_with_cap(formula, DEFAULT_CLOSURE_CAP)
}

/// Closure of `formula` under progression over every letter of its atoms.
///
/// The accepting location is `true`; `false` (when reachable) is a trap.
pub fn formula_to_dfa_with_cap(formula: &Formula, cap: usize) -> Result<Dfa, LogicError> {
    let atoms: Vec<String> = formula.atoms().into_iter().collect();
    if atoms.len() > 20 {
        return Err(LogicError::InvalidDfa("too many atoms (limit 20)".into()));
    }
    let letters = 1usize << atoms.len();
    let mut index: HashMap<Formula, usize> = HashMap::new();
    let mut residuals: Vec<Formula> = Vec::new();
    let mut delta: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();

    let mut intern =
        |f: Formula, residuals: &mut Vec<Formula>, queue: &mut VecDeque<usize>| -> Result<usize, LogicError> {
            if let Some(&id) = index.get(&f) {
                return Ok(id);
            }
            if residuals.len() >= cap {
                return Err(LogicError::ClosureBlowup { cap });
            }
            let id = residuals.len();
            index.insert(f.clone(), id);
            residuals.push(f);
            queue.push_back(id);
            Ok(id)
        };

    intern(formula.normalize(), &mut residuals, &mut queue)?;
    while let Some(q) = queue.pop_front() {
        let current = residuals[q].clone();
        let mut row = Vec::with_capacity(letters);
        for letter in 0..letters {
            let holds = |a: &str| {
                let k = atoms.binary_search_by(|x| x.as_str().cmp(a)).unwrap();
                letter & (1 << k) != 0
            };
            let next = current.progress_with(&holds).normalize();
            row.push(intern(next, &mut residuals, &mut queue)?);
        }
        if delta.len() <= q {
            delta.resize(q + 1, Vec::new());
        }
        delta[q] = row;
    }
    let accepting: Vec<usize> = residuals.iter().position(|f| *f == Formula::True).into_iter().collect();
    let mut dfa = Dfa::from_table(atoms, 0, delta, &accepting)?;
    dfa.names = residuals.iter().map(|f| f.to_string()).collect();
    Ok(dfa)
}

/// Traps are the locations with no path to an accepting location.
pub fn classify_locations(dfa: &Dfa) -> LocationClasses {
    let n = dfa.num_locations();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (q, row) in dfa.delta.iter().enumerate() {
        for &t in row {
            preds[t].push(q);
        }
    }
    let mut reaches = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&q| dfa.accepting[q]).collect();
    for &q in &stack {
        reaches[q] = true;
    }
    while let Some(q) = stack.pop() {
        for &p in &preds[q] {
            if !reaches[p] {
                reaches[p] = true;
                stack.push(p);
            }
        }
    }
    let mut classes = LocationClasses {
        accepting: Vec::new(),
        traps: Vec::new(),
        live: Vec::new(),
    };
    for q in 0..n {
        if dfa.accepting[q] {
            classes.accepting.push(q);
        } else if !reaches[q] {
            classes.traps.push(q);
        } else {
            classes.live.push(q);
        }
    }
    classes
}

/// Route every edge into an accepting location through a pre-sink.
///
/// Edges leaving an existing pre-sink are kept. Any other edge from a
/// non-accepting location into accepting location `a` is redirected to a
/// fresh location that moves to `a` on every letter. When the initial
/// location is itself accepting, a pre-sink is placed in front of it and
/// becomes the new initial location.
pub fn insert_pre_sinks(dfa: Dfa) -> Dfa {
    let mut dfa = dfa;
    dfa.refresh_classes();
    let letters = dfa.num_letters();
    let original = dfa.num_locations();
    let mut fresh: BTreeMap<usize, usize> = BTreeMap::new();

    for q in 0..original {
        if dfa.accepting[q] || dfa.pre_sinks[q] {
            continue;
        }
        for letter in 0..letters {
            let t = dfa.delta[q][letter];
            if !dfa.accepting[t] {
                continue;
            }
            let pre = *fresh.entry(t).or_insert_with(|| {
                dfa.delta.push(vec![t; letters]);
                dfa.accepting.push(false);
                dfa.names.push(format!("pre({})", dfa.names[t]));
                dfa.delta.len() - 1
            });
            dfa.delta[q][letter] = pre;
        }
    }
    if dfa.accepting[dfa.initial] {
        let target = dfa.initial;
        dfa.delta.push(vec![target; letters]);
        dfa.accepting.push(false);
        dfa.names.push(format!("pre({})", dfa.names[target]));
        dfa.initial = dfa.delta.len() - 1;
    }
    dfa.refresh_classes();
    dfa
}
