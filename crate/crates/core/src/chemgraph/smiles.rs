use std::collections::HashMap;

use thiserror::Error;

use super::elements::{atomic_mass, standard_valence};
use super::{Atom, Bond, BondOrder, BondStereo, Chirality, Hybridization, MoleculeGraph};

#[derive(Debug, Error, PartialEq)]
pub enum SmilesError {
    #[error("byte {offset}: {what} is not supported")]
    UnsupportedFeature { offset: usize, what: &'static str },
    #[error("ring bond {digit} opened but never closed")]
    UnbalancedRingBond { digit: u16 },
    #[error("byte {offset}: unknown element `{symbol}`")]
    UnknownElement { offset: usize, symbol: String },
    #[error("byte {offset}: {message}")]
    SyntaxError { offset: usize, message: String },
}

fn syntax(offset: usize, message: impl Into<String>) -> SmilesError {
    SmilesError::SyntaxError {
        offset,
        message: message.into(),
    }
}

/// Parse a SMILES string into a molecular graph.
///
/// Grammar subset: organic-subset bare atoms (`B C N O P S F Cl Br I` and
/// aromatic `b c n o p s`), bracket atoms with charge / H-count / `@` / `@@`,
/// ring closures `0`-`9` and `%nn`, branches, and the bond symbols
/// `- = # : / \`. Directional bonds parse as single bonds whose stereo flag is
/// `Any` (recorded, not perceived). Isotopes, wildcards, multi-fragment `.`
/// and reaction arrows are rejected loudly.
///
/// Atoms appear in the graph in first-appearance order, so `smiles_order` is
/// the identity permutation. Implicit hydrogens on bare atoms come from the
/// standard valence minus the bond-order sum (aromatic bonds count 1.5, the
/// total is rounded up) minus the formal charge, clamped to 0..=4; bracket
/// atoms carry exactly their declared H count.
pub fn parse_smiles(text: &str) -> Result<MoleculeGraph, SmilesError> {
    if text.is_empty() {
        return Err(syntax(0, "empty SMILES"));
    }
    if !text.is_ascii() {
        return Err(syntax(0, "SMILES must be ASCII"));
    }

    let bytes = text.as_bytes();
    let mut parser = Parser {
        bytes,
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        explicit_h: Vec::new(),
        prev: None,
        pending: None,
        branch_stack: Vec::new(),
        ring_open: HashMap::new(),
    };
    parser.run()?;
    parser.finish()
}

/// Bond symbol as written, before aromaticity resolution.
#[derive(Clone, Copy, PartialEq)]
enum BondSym {
    Single,
    Double,
    Triple,
    Aromatic,
    Up,
    Down,
}

struct PendingAtom {
    element: String,
    aromatic: bool,
    charge: i32,
    chirality: Chirality,
    bracket_h: Option<u8>,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<PendingAtom>,
    bonds: Vec<(usize, usize, BondSym, bool)>, // (a, b, symbol, explicit)
    explicit_h: Vec<Option<u8>>,
    prev: Option<usize>,
    pending: Option<BondSym>,
    branch_stack: Vec<Option<usize>>,
    ring_open: HashMap<u16, (usize, Option<BondSym>, usize)>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if self.prev.is_none() {
                        return Err(syntax(self.pos, "branch before any atom"));
                    }
                    self.branch_stack.push(self.prev);
                    self.pos += 1;
                }
                b')' => {
                    let restored = self
                        .branch_stack
                        .pop()
                        .ok_or_else(|| syntax(self.pos, "unmatched `)`"))?;
                    self.prev = restored;
                    self.pending = None;
                    self.pos += 1;
                }
                b'-' => {
                    self.set_pending(BondSym::Single)?;
                    self.pos += 1;
                }
                b'=' => {
                    self.set_pending(BondSym::Double)?;
                    self.pos += 1;
                }
                b'#' => {
                    self.set_pending(BondSym::Triple)?;
                    self.pos += 1;
                }
                b':' => {
                    self.set_pending(BondSym::Aromatic)?;
                    self.pos += 1;
                }
                b'/' => {
                    self.set_pending(BondSym::Up)?;
                    self.pos += 1;
                }
                b'\\' => {
                    self.set_pending(BondSym::Down)?;
                    self.pos += 1;
                }
                b'.' => {
                    return Err(SmilesError::UnsupportedFeature {
                        offset: self.pos,
                        what: "multi-fragment `.`",
                    })
                }
                b'*' => {
                    return Err(SmilesError::UnsupportedFeature {
                        offset: self.pos,
                        what: "wildcard atom `*`",
                    })
                }
                b'>' => {
                    return Err(SmilesError::UnsupportedFeature {
                        offset: self.pos,
                        what: "reaction arrow",
                    })
                }
                b'0'..=b'9' => {
                    let digit = (c - b'0') as u16;
                    self.pos += 1;
                    self.ring_closure(digit)?;
                }
                b'%' => {
                    let start = self.pos;
                    self.pos += 1;
                    let d1 = self.peek().filter(u8::is_ascii_digit);
                    self.pos += 1;
                    let d2 = self.peek().filter(u8::is_ascii_digit);
                    self.pos += 1;
                    match (d1, d2) {
                        (Some(a), Some(b)) => {
                            let digit = (a - b'0') as u16 * 10 + (b - b'0') as u16;
                            self.ring_closure(digit)?;
                        }
                        _ => return Err(syntax(start, "`%` must be followed by two digits")),
                    }
                }
                b'[' => self.bracket_atom()?,
                _ => self.organic_atom()?,
            }
        }
        Ok(())
    }

    fn set_pending(&mut self, sym: BondSym) -> Result<(), SmilesError> {
        if self.pending.is_some() {
            return Err(syntax(self.pos, "two bond symbols in a row"));
        }
        if self.prev.is_none() {
            return Err(syntax(self.pos, "bond symbol before any atom"));
        }
        self.pending = Some(sym);
        Ok(())
    }

    fn push_atom(&mut self, atom: PendingAtom, bracket_h: Option<u8>) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        self.explicit_h.push(bracket_h);
        if let Some(prev) = self.prev {
            let sym = self.pending.take();
            self.bonds
                .push((prev, idx, sym.unwrap_or(BondSym::Single), sym.is_some()));
        } else if self.pending.is_some() {
            return Err(syntax(self.pos, "dangling bond symbol"));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self, digit: u16) -> Result<(), SmilesError> {
        let here = self
            .prev
            .ok_or_else(|| syntax(self.pos, "ring closure before any atom"))?;
        let pending = self.pending.take();
        match self.ring_open.remove(&digit) {
            None => {
                self.ring_open.insert(digit, (here, pending, self.pos));
                Ok(())
            }
            Some((other, open_sym, open_pos)) => {
                if other == here {
                    return Err(syntax(self.pos, "ring closure to the same atom"));
                }
                let sym = match (open_sym, pending) {
                    (None, None) => None,
                    (Some(s), None) | (None, Some(s)) => Some(s),
                    (Some(a), Some(b)) if a == b => Some(a),
                    _ => {
                        return Err(syntax(
                            open_pos,
                            format!("conflicting bond orders on ring closure {digit}"),
                        ))
                    }
                };
                self.bonds
                    .push((other, here, sym.unwrap_or(BondSym::Single), sym.is_some()));
                Ok(())
            }
        }
    }

    fn organic_atom(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let c = self.bytes[start];
        let (element, aromatic): (&str, bool) = match c {
            b'C' if self.bytes.get(start + 1) == Some(&b'l') => ("Cl", false),
            b'B' if self.bytes.get(start + 1) == Some(&b'r') => ("Br", false),
            b'B' => ("B", false),
            b'C' => ("C", false),
            b'N' => ("N", false),
            b'O' => ("O", false),
            b'P' => ("P", false),
            b'S' => ("S", false),
            b'F' => ("F", false),
            b'I' => ("I", false),
            b'b' => ("B", true),
            b'c' => ("C", true),
            b'n' => ("N", true),
            b'o' => ("O", true),
            b'p' => ("P", true),
            b's' => ("S", true),
            _ => {
                return Err(syntax(
                    start,
                    format!("unexpected character `{}`", c as char),
                ))
            }
        };
        self.pos += element.len();
        self.push_atom(
            PendingAtom {
                element: element.to_string(),
                aromatic,
                charge: 0,
                chirality: Chirality::None,
                bracket_h: None,
            },
            None,
        )
    }

    fn bracket_atom(&mut self) -> Result<(), SmilesError> {
        let open = self.pos;
        self.pos += 1; // consume '['

        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(SmilesError::UnsupportedFeature {
                offset: self.pos,
                what: "isotope specification",
            });
        }
        if self.peek() == Some(b'*') {
            return Err(SmilesError::UnsupportedFeature {
                offset: self.pos,
                what: "wildcard atom `*`",
            });
        }

        // Element symbol: one upper or lower letter plus optional lowercase.
        let sym_start = self.pos;
        let first = self
            .peek()
            .filter(|c| c.is_ascii_alphabetic())
            .ok_or_else(|| syntax(self.pos, "expected element symbol in brackets"))?;
        self.pos += 1;
        let mut symbol = String::new();
        symbol.push(first as char);
        // A following lowercase letter extends the symbol unless it is a
        // modifier position (bare 'H' handled below as hydrogen count).
        if let Some(c2) = self.peek() {
            if c2.is_ascii_lowercase() {
                let two: String = format!("{}{}", first as char, c2 as char);
                let canon = canonical_symbol(&two);
                if atomic_mass(&canon).is_some() {
                    symbol = two;
                    self.pos += 1;
                }
            }
        }
        let aromatic = symbol.chars().next().unwrap().is_lowercase();
        let canonical = canonical_symbol(&symbol);
        if atomic_mass(&canonical).is_none() {
            return Err(SmilesError::UnknownElement {
                offset: sym_start,
                symbol,
            });
        }

        let mut chirality = Chirality::None;
        let mut h_count: u8 = 0;
        let mut charge: i32 = 0;
        loop {
            match self.peek() {
                Some(b'@') => {
                    self.pos += 1;
                    if self.peek() == Some(b'@') {
                        self.pos += 1;
                        chirality = Chirality::Cw;
                    } else {
                        chirality = Chirality::Ccw;
                    }
                }
                Some(b'H') => {
                    self.pos += 1;
                    let mut count = 1u8;
                    if let Some(c) = self.peek().filter(u8::is_ascii_digit) {
                        count = c - b'0';
                        self.pos += 1;
                    }
                    h_count = count;
                }
                Some(b'+') => {
                    self.pos += 1;
                    charge += 1;
                    while self.peek() == Some(b'+') {
                        charge += 1;
                        self.pos += 1;
                    }
                    if let Some(c) = self.peek().filter(u8::is_ascii_digit) {
                        charge = (c - b'0') as i32;
                        self.pos += 1;
                    }
                }
                Some(b'-') => {
                    self.pos += 1;
                    charge -= 1;
                    while self.peek() == Some(b'-') {
                        charge -= 1;
                        self.pos += 1;
                    }
                    if let Some(c) = self.peek().filter(u8::is_ascii_digit) {
                        charge = -((c - b'0') as i32);
                        self.pos += 1;
                    }
                }
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                Some(c) => {
                    return Err(syntax(
                        self.pos,
                        format!("unexpected `{}` inside brackets", c as char),
                    ))
                }
                None => return Err(syntax(open, "unterminated bracket atom")),
            }
        }

        self.push_atom(
            PendingAtom {
                element: canonical,
                aromatic,
                charge,
                chirality,
                bracket_h: Some(h_count),
            },
            Some(h_count),
        )
    }

    fn finish(mut self) -> Result<MoleculeGraph, SmilesError> {
        if let Some((&digit, _)) = self.ring_open.iter().next() {
            return Err(SmilesError::UnbalancedRingBond { digit });
        }
        if !self.branch_stack.is_empty() {
            return Err(syntax(self.pos, "unclosed branch"));
        }
        if self.pending.is_some() {
            return Err(syntax(self.pos, "dangling bond symbol at end of input"));
        }
        if self.atoms.is_empty() {
            return Err(syntax(0, "no atoms"));
        }

        // Resolve bond orders: explicit symbols win; an implicit bond between
        // two aromatic atoms is aromatic, otherwise single.
        let bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|&(a, b, sym, explicit)| {
                let (order, stereo) = match sym {
                    BondSym::Double => (BondOrder::Double, BondStereo::None),
                    BondSym::Triple => (BondOrder::Triple, BondStereo::None),
                    BondSym::Aromatic => (BondOrder::Aromatic, BondStereo::None),
                    BondSym::Up | BondSym::Down => (BondOrder::Single, BondStereo::Any),
                    BondSym::Single => {
                        if !explicit && self.atoms[a].aromatic && self.atoms[b].aromatic {
                            (BondOrder::Aromatic, BondStereo::None)
                        } else {
                            (BondOrder::Single, BondStereo::None)
                        }
                    }
                };
                Bond {
                    endpoints: (a, b),
                    order,
                    is_conjugated: false,
                    in_ring: false,
                    stereo,
                }
            })
            .collect();

        // Implicit hydrogens for bare atoms: valence minus rounded-up bond
        // order sum minus charge, clamped to 0..=4. Bracket atoms keep their
        // declared count.
        let n = self.atoms.len();
        let mut order_sum = vec![0.0f64; n];
        for bond in &bonds {
            let v = bond.order.valence();
            order_sum[bond.endpoints.0] += v;
            order_sum[bond.endpoints.1] += v;
        }

        let atoms: Vec<Atom> = self
            .atoms
            .drain(..)
            .enumerate()
            .map(|(i, pa)| {
                let mass = atomic_mass(&pa.element).expect("validated above");
                let num_hydrogens = match pa.bracket_h {
                    Some(h) => h.min(4),
                    None => {
                        let valence = standard_valence(&pa.element).unwrap_or(0) as i32;
                        (valence - order_sum[i].ceil() as i32 - pa.charge).clamp(0, 4) as u8
                    }
                };
                Atom {
                    element: pa.element,
                    relative_mass: mass,
                    degree: 0,
                    formal_charge: pa.charge,
                    is_aromatic: pa.aromatic,
                    num_hydrogens,
                    hybridization: Hybridization::Other,
                    chirality: pa.chirality,
                }
            })
            .collect();

        let smiles_order: Vec<usize> = (0..n).collect();
        Ok(MoleculeGraph::assemble(atoms, bonds, smiles_order, None))
    }
}

/// `cl` -> `Cl`, `c` -> `C` (aromatic lowercase normalizes to the element).
fn canonical_symbol(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methane() {
        let mol = parse_smiles("C").unwrap();
        assert_eq!(mol.atom_count(), 1);
        assert_eq!(mol.bond_count(), 0);
        assert_eq!(mol.atoms[0].num_hydrogens, 4);
    }

    #[test]
    fn benzene() {
        let mol = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(mol.atom_count(), 6);
        assert_eq!(mol.bond_count(), 6);
        for atom in &mol.atoms {
            assert!(atom.is_aromatic);
            assert_eq!(atom.num_hydrogens, 1);
        }
        for bond in &mol.bonds {
            assert_eq!(bond.order, BondOrder::Aromatic);
            assert!(bond.in_ring);
        }
    }

    #[test]
    fn acetic_acid_orders_and_order() {
        let mol = parse_smiles("CC(=O)O").unwrap();
        assert_eq!(mol.atom_count(), 4);
        let orders: Vec<BondOrder> = mol.bonds.iter().map(|b| b.order).collect();
        assert_eq!(
            orders,
            vec![BondOrder::Single, BondOrder::Double, BondOrder::Single]
        );
        assert_eq!(mol.smiles_order, vec![0, 1, 2, 3]);
        // Hand-traced hydrogen counts (matches standard toolkit perception).
        let h: Vec<u8> = mol.atoms.iter().map(|a| a.num_hydrogens).collect();
        assert_eq!(h, vec![3, 0, 0, 1]);
    }

    #[test]
    fn ring_closure_double_bond() {
        let mol = parse_smiles("C=1CCCCC=1").unwrap();
        assert_eq!(mol.bond_between(0, 5).unwrap().order, BondOrder::Double);
    }

    #[test]
    fn percent_ring_closure() {
        let mol = parse_smiles("C%12CCC%12").unwrap();
        assert_eq!(mol.bond_count(), 4);
        assert!(mol.bond_between(0, 3).is_some());
    }

    #[test]
    fn bracket_charge_and_hydrogens() {
        let mol = parse_smiles("[NH4+]").unwrap();
        assert_eq!(mol.atoms[0].formal_charge, 1);
        assert_eq!(mol.atoms[0].num_hydrogens, 4);
        let mol = parse_smiles("[O-2]").unwrap();
        assert_eq!(mol.atoms[0].formal_charge, -2);
        assert_eq!(mol.atoms[0].num_hydrogens, 0);
    }

    #[test]
    fn chirality_flags() {
        let mol = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        assert_eq!(mol.atoms[1].chirality, Chirality::Cw);
        assert_eq!(mol.atoms[1].num_hydrogens, 1);
        let mol = parse_smiles("N[C@H](C)C(=O)O").unwrap();
        assert_eq!(mol.atoms[1].chirality, Chirality::Ccw);
    }

    #[test]
    fn pyridine_nitrogen_no_hydrogen() {
        let mol = parse_smiles("c1ccncc1").unwrap();
        let n = mol.atoms.iter().find(|a| a.element == "N").unwrap();
        assert_eq!(n.num_hydrogens, 0);
    }

    #[test]
    fn directional_bond_records_stereo_marker() {
        let mol = parse_smiles("C/C=C/C").unwrap();
        assert_eq!(mol.bonds[0].stereo, BondStereo::Any);
        assert_eq!(mol.bonds[1].order, BondOrder::Double);
        assert_eq!(mol.bonds[1].stereo, BondStereo::None);
    }

    #[test]
    fn unbalanced_ring_bond() {
        assert!(matches!(
            parse_smiles("C1CC"),
            Err(SmilesError::UnbalancedRingBond { digit: 1 })
        ));
    }

    #[test]
    fn unsupported_features_error() {
        assert!(matches!(
            parse_smiles("CC.O"),
            Err(SmilesError::UnsupportedFeature {
                what: "multi-fragment `.`",
                ..
            })
        ));
        assert!(matches!(
            parse_smiles("[13C]"),
            Err(SmilesError::UnsupportedFeature {
                what: "isotope specification",
                ..
            })
        ));
        assert!(matches!(
            parse_smiles("C*"),
            Err(SmilesError::UnsupportedFeature {
                what: "wildcard atom `*`",
                ..
            })
        ));
    }

    #[test]
    fn unknown_element_in_brackets() {
        assert!(matches!(
            parse_smiles("[Zq]"),
            Err(SmilesError::UnknownElement { .. })
        ));
    }

    #[test]
    fn syntax_error_carries_offset() {
        match parse_smiles("CC)C") {
            Err(SmilesError::SyntaxError { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_parse() {
        let a = parse_smiles("CC(=O)Oc1ccccc1C(=O)O").unwrap();
        let b = parse_smiles("CC(=O)Oc1ccccc1C(=O)O").unwrap();
        assert_eq!(a.atom_count(), b.atom_count());
        assert_eq!(a.smiles_order, b.smiles_order);
        for (x, y) in a.atom_features.iter().zip(&b.atom_features) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn branch_connectivity() {
        // Isobutane: central carbon bonded to three methyls.
        let mol = parse_smiles("CC(C)C").unwrap();
        assert_eq!(mol.atoms[1].degree, 3);
        assert_eq!(mol.atoms[1].num_hydrogens, 1);
    }
}
