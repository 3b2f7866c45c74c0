use std::collections::BTreeSet;
use std::fmt;

/// Co-safe LTL formula in positive normal form.
///
/// Values are only built through the smart constructors below, which keep
/// every node canonical: conjunctions and disjunctions are flattened, sorted
/// and deduplicated, and constants are absorbed. Two residuals that are equal
/// up to these rewrites are therefore structurally identical, which keeps the
/// progression closure small.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    True,
    False,
    Atom(String),
    NotAtom(String),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Next(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
}

impl Formula {
    pub fn atom(name: impl Into<String>) -> Formula {
        Formula::Atom(name.into())
    }

    pub fn not_atom(name: impl Into<String>) -> Formula {
        Formula::NotAtom(name.into())
    }

    pub fn and(items: impl IntoIterator<Item = Formula>) -> Formula {
        let mut flat = Vec::new();
        for item in items {
            match item {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        match flat.len() {
            0 => Formula::True,
            1 => flat.pop().unwrap(),
            _ => Formula::And(flat),
        }
    }

    pub fn or(items: impl IntoIterator<Item = Formula>) -> Formula {
        let mut flat = Vec::new();
        for item in items {
            match item {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        match flat.len() {
            0 => Formula::False,
            1 => flat.pop().unwrap(),
            _ => Formula::Or(flat),
        }
    }

    pub fn next(inner: Formula) -> Formula {
        match inner {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            other => Formula::Next(Box::new(other)),
        }
    }

    pub fn until(left: Formula, right: Formula) -> Formula {
        match (left, right) {
            (_, Formula::True) => Formula::True,
            (_, Formula::False) => Formula::False,
            (Formula::False, right) => right,
            (Formula::True, right) => Formula::eventually(right),
            (left, right) => Formula::Until(Box::new(left), Box::new(right)),
        }
    }

    pub fn eventually(inner: Formula) -> Formula {
        match inner {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            f @ Formula::Eventually(_) => f,
            other => Formula::Eventually(Box::new(other)),
        }
    }

    /// Atoms occurring anywhere in the formula.
    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(a) | Formula::NotAtom(a) => {
                out.insert(a.clone());
            }
            Formula::And(items) | Formula::Or(items) => {
                items.iter().for_each(|f| f.collect_atoms(out));
            }
            Formula::Next(f) | Formula::Eventually(f) => f.collect_atoms(out),
            Formula::Until(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
        }
    }

    /// The obligation left for the rest of the word after reading one letter.
    ///
    /// `holds` reports whether an atom is in the letter.
    pub fn progress_with(&self, holds: &dyn Fn(&str) -> bool) -> Formula {
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Atom(a) => bool_formula(holds(a)),
            Formula::NotAtom(a) => bool_formula(!holds(a)),
            Formula::And(items) => Formula::and(items.iter().map(|f| f.progress_with(holds))),
            Formula::Or(items) => Formula::or(items.iter().map(|f| f.progress_with(holds))),
            Formula::Next(f) => (**f).clone(),
            Formula::Until(l, r) => Formula::or([
                r.progress_with(holds),
                Formula::and([l.progress_with(holds), self.clone()]),
            ]),
            Formula::Eventually(f) => Formula::or([f.progress_with(holds), self.clone()]),
        }
    }

    /// Progression over an explicit letter (the set of atoms that hold),
    /// returned in normal form.
    pub fn progress(&self, letter: &BTreeSet<String>) -> Formula {
        self.progress_with(&|a| letter.contains(a)).normalize()
    }

    /// Disjunctive normal form over the temporal and literal subformulas,
    /// with absorbed clauses removed.
    ///
    /// Residuals under progression are positive boolean combinations of a
    /// finite set of such subformulas; this form makes each combination
    /// unique up to propositional absorption, so the closure is finite.
    pub fn normalize(&self) -> Formula {
        Formula::or(self.clauses().into_iter().map(Formula::and))
    }

    fn clauses(&self) -> Vec<BTreeSet<Formula>> {
        match self {
            Formula::True => vec![BTreeSet::new()],
            Formula::False => Vec::new(),
            Formula::Or(items) => absorb(items.iter().flat_map(|f| f.clauses()).collect()),
            Formula::And(items) => items.iter().fold(vec![BTreeSet::new()], |acc, item| {
                let rhs = item.clauses();
                let mut out = Vec::with_capacity(acc.len() * rhs.len());
                for l in &acc {
                    for r in &rhs {
                        out.push(l.union(r).cloned().collect());
                    }
                }
                absorb(out)
            }),
            basic => vec![BTreeSet::from([basic.clone()])],
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Or(_) => 0,
            Formula::And(_) => 1,
            Formula::Until(..) => 2,
            _ => 3,
        }
    }
}

fn absorb(mut clauses: Vec<BTreeSet<Formula>>) -> Vec<BTreeSet<Formula>> {
    clauses.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    clauses.dedup();
    let mut kept: Vec<BTreeSet<Formula>> = Vec::with_capacity(clauses.len());
    for c in clauses {
        if !kept.iter().any(|k| k.is_subset(&c)) {
            kept.push(c);
        }
    }
    kept
}

fn bool_formula(b: bool) -> Formula {
    if b {
        Formula::True
    } else {
        Formula::False
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, parent: u8, c: &Formula, strict: bool) -> fmt::Result {
            let p = c.precedence();
            if p < parent || (strict && p == parent) {
                write!(f, "({c})")
            } else {
                write!(f, "{c}")
            }
        }
        match self {
            Formula::True => write!(f, "true"),
            Formula::False => write!(f, "false"),
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::NotAtom(a) => write!(f, "!{a}"),
            Formula::And(items) | Formula::Or(items) => {
                let (op, prec) = if matches!(self, Formula::And(_)) {
                    (" & ", 1)
                } else {
                    (" | ", 0)
                };
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        f.write_str(op)?;
                    }
                    child(f, prec, item, true)?;
                }
                Ok(())
            }
            Formula::Next(g) => {
                f.write_str("X ")?;
                child(f, 3, g, false)
            }
            Formula::Eventually(g) => {
                f.write_str("F ")?;
                child(f, 3, g, false)
            }
            Formula::Until(l, r) => {
                // right-associative
                child(f, 2, l, true)?;
                f.write_str(" U ")?;
                child(f, 2, r, false)
            }
        }
    }
}
