//! SMILES parsing into heavy-atom molecular graphs.
//!
//! Supported grammar: organic-subset atoms (`B C N O P S F Cl Br I` and the
//! aromatic `b c n o p s`), bracket atoms with charge and hydrogen count,
//! bond symbols `- = # :`, branches, ring closures `1`-`9` and `%nn`, and
//! `.` component separators. Stereo marks (`/ \ @`), isotopes and atom
//! classes are accepted and dropped.

mod writer;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::hash::Fnv1a32;

pub use writer::{write_smiles, write_smiles_randomized};

/// Elements of the organic subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::P => 15,
            Element::S => 16,
            Element::F => 9,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Position in [`Element::ALL`].
    pub fn index(self) -> usize {
        Element::ALL.iter().position(|&e| e == self).unwrap_or(0)
    }

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == symbol)
    }

    /// Allowed valences, ascending.
    pub fn valences(self) -> &'static [u8] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N | Element::P => &[3, 5],
            Element::O => &[2],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
        }
    }

    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Stable categorical code used in hashing.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    fn valence_contribution(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    pub implicit_h: u8,
    /// Number of heavy-atom neighbours.
    pub degree: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Atoms plus undirected bonds. Only constructed by the parser, so the
/// adjacency lists always mirror the bond list.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Per atom: `(neighbour, bond index)`.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolecularGraph {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[atom].iter().map(|&(n, _)| n)
    }

    /// `(neighbour, bond index)` pairs of `atom`.
    pub fn incident(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, bi)| &self.bonds[bi])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesErrorKind {
    #[error("empty SMILES string")]
    Empty,
    #[error("ring closure {0} is never closed")]
    UnbalancedRing(u16),
    #[error("unmatched parenthesis")]
    UnbalancedBranch,
    #[error("unsupported atom `{0}`")]
    UnknownAtom(String),
    #[error("atom {atom} ({element}) exceeds its maximum valence")]
    ValenceError { atom: usize, element: Element },
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("ring closure {0} has conflicting bond symbols")]
    RingBondMismatch(u16),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SMILES error at byte {position}: {kind}")]
pub struct SmilesError {
    pub position: usize,
    pub kind: SmilesErrorKind,
}

impl SmilesError {
    fn new(position: usize, kind: SmilesErrorKind) -> Self {
        Self { position, kind }
    }
}

struct PendingAtom {
    element: Element,
    aromatic: bool,
    charge: i8,
    /// `Some` for bracket atoms, which never receive implicit hydrogens.
    explicit_h: Option<u8>,
}

struct RingOpening {
    atom: usize,
    order: Option<BondOrder>,
    position: usize,
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    atoms: Vec<PendingAtom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    prev: Option<usize>,
    branches: Vec<(Option<usize>, usize)>,
    pending_bond: Option<BondOrder>,
    rings: HashMap<u16, RingOpening>,
}

/// Parses `text` into a [`MolecularGraph`].
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(SmilesError::new(0, SmilesErrorKind::Empty));
    }
    Parser {
        input: trimmed.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        adjacency: Vec::new(),
        prev: None,
        branches: Vec::new(),
        pending_bond: None,
        rings: HashMap::new(),
    }
    .run()
}

impl<'a> Parser<'a> {
    fn err(&self, kind: SmilesErrorKind) -> SmilesError {
        SmilesError::new(self.pos, kind)
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn run(mut self) -> Result<MolecularGraph, SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if self.prev.is_none() || self.pending_bond.is_some() {
                        return Err(self.err(SmilesErrorKind::UnbalancedBranch));
                    }
                    self.branches.push((self.prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    if self.pending_bond.is_some() {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar(')')));
                    }
                    let (prev, _) = self
                        .branches
                        .pop()
                        .ok_or_else(|| self.err(SmilesErrorKind::UnbalancedBranch))?;
                    self.prev = prev;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.pending_bond.is_some() || self.prev.is_none() {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar(c as char)));
                    }
                    self.pending_bond = Some(match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    });
                    self.pos += 1;
                }
                // directional single bonds: stereo is dropped
                b'/' | b'\\' => {
                    if self.prev.is_none() {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar(c as char)));
                    }
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending_bond.is_some() || self.prev.is_none() {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar('.')));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    let number = u16::from(c - b'0');
                    let at = self.pos;
                    self.pos += 1;
                    self.ring_closure(number, at)?;
                }
                b'%' => {
                    let at = self.pos;
                    let digits = self.input.get(self.pos + 1..self.pos + 3);
                    let number = match digits {
                        Some(d) if d.iter().all(u8::is_ascii_digit) => {
                            u16::from(d[0] - b'0') * 10 + u16::from(d[1] - b'0')
                        }
                        _ => return Err(self.err(SmilesErrorKind::UnexpectedChar('%'))),
                    };
                    self.pos += 3;
                    self.ring_closure(number, at)?;
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.push_atom(atom)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.push_atom(atom)?;
                }
            }
        }

        if self.pending_bond.is_some() {
            return Err(self.err(SmilesErrorKind::UnexpectedEnd));
        }
        if let Some((_, position)) = self.branches.last() {
            return Err(SmilesError::new(*position, SmilesErrorKind::UnbalancedBranch));
        }
        if let Some((&number, opening)) = self.rings.iter().min_by_key(|(n, _)| **n) {
            return Err(SmilesError::new(
                opening.position,
                SmilesErrorKind::UnbalancedRing(number),
            ));
        }
        if self.atoms.is_empty() {
            return Err(self.err(SmilesErrorKind::Empty));
        }
        self.finish()
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<(), SmilesError> {
        if a == b || self.adjacency[a].iter().any(|&(n, _)| n == b) {
            return Err(self.err(SmilesErrorKind::DuplicateBond(a.min(b), a.max(b))));
        }
        let index = self.bonds.len();
        self.bonds.push(Bond { a, b, order });
        self.adjacency[a].push((b, index));
        self.adjacency[b].push((a, index));
        Ok(())
    }

    fn push_atom(&mut self, atom: PendingAtom) -> Result<(), SmilesError> {
        let index = self.atoms.len();
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        if let Some(prev) = self.prev {
            let order = self
                .pending_bond
                .take()
                .unwrap_or_else(|| self.default_order(prev, index));
            self.add_bond(prev, index, order)?;
        }
        self.prev = Some(index);
        Ok(())
    }

    fn ring_closure(&mut self, number: u16, at: usize) -> Result<(), SmilesError> {
        let current = self
            .prev
            .ok_or_else(|| SmilesError::new(at, SmilesErrorKind::UnexpectedChar('0')))?;
        let order = self.pending_bond.take();
        match self.rings.remove(&number) {
            Some(opening) => {
                let order = match (opening.order, order) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(SmilesError::new(
                            at,
                            SmilesErrorKind::RingBondMismatch(number),
                        ))
                    }
                    (Some(x), _) | (None, Some(x)) => x,
                    (None, None) => self.default_order(opening.atom, current),
                };
                self.add_bond(opening.atom, current, order)
            }
            None => {
                self.rings.insert(
                    number,
                    RingOpening {
                        atom: current,
                        order,
                        position: at,
                    },
                );
                Ok(())
            }
        }
    }

    fn organic_atom(&mut self) -> Result<PendingAtom, SmilesError> {
        let start = self.pos;
        let c = self.input[self.pos];
        let next = self.input.get(self.pos + 1).copied();
        let (symbol, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (std::str::from_utf8(&self.input[start..start + 1]).unwrap_or(""), false, 1)
            }
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            _ if c.is_ascii_alphabetic() || c == b'*' => {
                return Err(self.err(SmilesErrorKind::UnknownAtom((c as char).to_string())))
            }
            _ => return Err(self.err(SmilesErrorKind::UnexpectedChar(c as char))),
        };
        let element = Element::from_symbol(symbol)
            .ok_or_else(|| self.err(SmilesErrorKind::UnknownAtom(symbol.to_string())))?;
        self.pos += len;
        Ok(PendingAtom {
            element,
            aromatic,
            charge: 0,
            explicit_h: None,
        })
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.input[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }

    fn bracket_atom(&mut self) -> Result<PendingAtom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        // isotope
        self.read_number();

        let symbol_start = self.pos;
        let first = self
            .peek()
            .ok_or_else(|| self.err(SmilesErrorKind::UnexpectedEnd))?;
        let (symbol, aromatic) = if first.is_ascii_uppercase() {
            self.pos += 1;
            if self.peek().is_some_and(|c| c.is_ascii_lowercase()) {
                self.pos += 1;
            }
            let s = std::str::from_utf8(&self.input[symbol_start..self.pos]).unwrap_or("");
            (s.to_string(), false)
        } else if first.is_ascii_lowercase() {
            self.pos += 1;
            if self.peek().is_some_and(|c| c.is_ascii_lowercase()) {
                self.pos += 1;
            }
            let s = std::str::from_utf8(&self.input[symbol_start..self.pos]).unwrap_or("");
            let mut upper = s.to_string();
            upper[..1].make_ascii_uppercase();
            (upper, true)
        } else {
            return Err(self.err(SmilesErrorKind::UnknownAtom((first as char).to_string())));
        };
        let element = match Element::from_symbol(&symbol) {
            Some(e) if !aromatic || e.can_be_aromatic() => e,
            _ => {
                let shown = std::str::from_utf8(&self.input[symbol_start..self.pos])
                    .unwrap_or("")
                    .to_string();
                return Err(SmilesError::new(
                    symbol_start,
                    SmilesErrorKind::UnknownAtom(shown),
                ));
            }
        };

        // chirality: @, @@, @TH1, @SP2, @OH12 ...
        while self.peek() == Some(b'@') {
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_uppercase() && c != b'H') {
                self.pos += 1;
            }
            self.read_number();
        }

        let mut hcount = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hcount = self.read_number().map_or(1, |n| n.min(8) as u8);
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                charge = unit * n.min(15) as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }

        if self.peek() == Some(b':') {
            self.pos += 1;
            self.read_number();
        }

        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(c) => return Err(self.err(SmilesErrorKind::UnexpectedChar(c as char))),
            None => return Err(SmilesError::new(open, SmilesErrorKind::UnexpectedEnd)),
        }

        Ok(PendingAtom {
            element,
            aromatic,
            charge: charge.clamp(-15, 15) as i8,
            explicit_h: Some(hcount),
        })
    }

    fn finish(self) -> Result<MolecularGraph, SmilesError> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (i, pending) in self.atoms.iter().enumerate() {
            let bond_sum: u32 = self.adjacency[i]
                .iter()
                .map(|&(_, bi)| u32::from(self.bonds[bi].order.valence_contribution()))
                .sum();
            let degree = self.adjacency[i].len().min(usize::from(u8::MAX)) as u8;
            let implicit_h = match pending.explicit_h {
                Some(h) => {
                    let max = u32::from(*pending.element.valences().last().unwrap_or(&4))
                        + pending.charge.unsigned_abs() as u32;
                    let used = bond_sum + u32::from(h) + u32::from(pending.aromatic);
                    if used > max {
                        return Err(SmilesError::new(
                            0,
                            SmilesErrorKind::ValenceError {
                                atom: i,
                                element: pending.element,
                            },
                        ));
                    }
                    h
                }
                None => organic_implicit_h(pending.element, pending.aromatic, bond_sum)
                    .ok_or_else(|| {
                        SmilesError::new(
                            0,
                            SmilesErrorKind::ValenceError {
                                atom: i,
                                element: pending.element,
                            },
                        )
                    })?,
            };
            atoms.push(Atom {
                element: pending.element,
                aromatic: pending.aromatic,
                formal_charge: pending.charge,
                implicit_h,
                degree,
            });
        }
        Ok(MolecularGraph {
            atoms,
            bonds: self.bonds,
            adjacency: self.adjacency,
        })
    }
}

/// Implicit hydrogens of an unbracketed atom given the sum of its bond
/// valence contributions (aromatic bonds count one). `None` when the bonds
/// exceed every allowed valence.
pub(crate) fn organic_implicit_h(element: Element, aromatic: bool, bond_sum: u32) -> Option<u8> {
    let valences = element.valences();
    let max = u32::from(*valences.last()?);
    if aromatic {
        // one extra electron is shared with the aromatic system
        let used = bond_sum + 1;
        let lowest = u32::from(valences[0]);
        if used <= lowest {
            Some((lowest - used) as u8)
        } else if used <= max + 1 {
            Some(0)
        } else {
            None
        }
    } else {
        valences
            .iter()
            .map(|&v| u32::from(v))
            .find(|&v| v >= bond_sum)
            .map(|v| (v - bond_sum) as u8)
    }
}

/// Per-atom integer codes hashing `(element, degree, implicit_h,
/// formal_charge, aromatic)`. Seeds the circular fingerprint.
pub fn canonical_invariants(graph: &MolecularGraph) -> Vec<u32> {
    graph.atoms.iter().map(atom_invariant).collect()
}

pub fn atom_invariant(atom: &Atom) -> u32 {
    Fnv1a32::new()
        .write(&[
            atom.element.atomic_number(),
            atom.degree,
            atom.implicit_h,
            atom.formal_charge as u8,
            u8::from(atom.aromatic),
        ])
        .finish()
}
