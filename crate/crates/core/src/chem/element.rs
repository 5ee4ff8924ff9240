use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ChemError;

/// Non-hydrogen elements the pipeline accepts.
///
/// This is the union of the element sets of the four benchmark corpora the
/// pipeline was designed around (organic photovoltaics, reaction substrates,
/// emitters and ligands).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Element {
    B,
    C,
    N,
    O,
    F,
    Si,
    P,
    S,
    Cl,
    Ga,
    Ge,
    As,
    Se,
    Br,
    In,
    Sb,
    Te,
    I,
    Hg,
    Tl,
    Pb,
    Bi,
}

impl Element {
    pub const ALL: [Element; 22] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::Si,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Ga,
        Element::Ge,
        Element::As,
        Element::Se,
        Element::Br,
        Element::In,
        Element::Sb,
        Element::Te,
        Element::I,
        Element::Hg,
        Element::Tl,
        Element::Pb,
        Element::Bi,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::Si => "Si",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Ga => "Ga",
            Element::Ge => "Ge",
            Element::As => "As",
            Element::Se => "Se",
            Element::Br => "Br",
            Element::In => "In",
            Element::Sb => "Sb",
            Element::Te => "Te",
            Element::I => "I",
            Element::Hg => "Hg",
            Element::Tl => "Tl",
            Element::Pb => "Pb",
            Element::Bi => "Bi",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::Si => 14,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Ga => 31,
            Element::Ge => 32,
            Element::As => 33,
            Element::Se => 34,
            Element::Br => 35,
            Element::In => 49,
            Element::Sb => 51,
            Element::Te => 52,
            Element::I => 53,
            Element::Hg => 80,
            Element::Tl => 81,
            Element::Pb => 82,
            Element::Bi => 83,
        }
    }

    /// Elements that may be written without brackets in SMILES.
    pub fn is_organic_subset(self) -> bool {
        matches!(
            self,
            Element::B
                | Element::C
                | Element::N
                | Element::O
                | Element::P
                | Element::S
                | Element::F
                | Element::Cl
                | Element::Br
                | Element::I
        )
    }

    /// Valence used when deciding whether an aromatic atom takes a double
    /// bond during kekulization. Hypervalent states are not considered here.
    pub(crate) fn aromatic_valence(self) -> Option<u8> {
        match self {
            Element::B => Some(3),
            Element::C => Some(4),
            Element::N | Element::P | Element::As => Some(3),
            Element::O | Element::S | Element::Se | Element::Te => Some(2),
            _ => None,
        }
    }

    fn group(self) -> Group {
        match self {
            Element::B | Element::Ga | Element::In | Element::Tl => Group::Boron,
            Element::C | Element::Si | Element::Ge | Element::Pb => Group::Carbon,
            Element::N | Element::P | Element::As | Element::Sb | Element::Bi => Group::Pnictogen,
            Element::O | Element::S | Element::Se | Element::Te => Group::Chalcogen,
            Element::F | Element::Cl | Element::Br | Element::I => Group::Halogen,
            Element::Hg => Group::Metal,
        }
    }
}

#[derive(Clone, Copy)]
enum Group {
    Boron,
    Carbon,
    Pnictogen,
    Chalcogen,
    Halogen,
    Metal,
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = ChemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.symbol() == s)
            .ok_or_else(|| ChemError::UnknownElement(s.to_string()))
    }
}

/// Maximum total bond-order budget per element for a neutral atom.
///
/// Charged atoms are adjusted by [`ValenceTable::budget`]: cations of groups
/// 15-17 gain one unit per charge and anions lose one, group 13 does the
/// opposite, and group 14 and metals lose one unit per unit of |charge|.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValenceTable {
    max_valence: BTreeMap<Element, u8>,
}

impl Default for ValenceTable {
    fn default() -> Self {
        use Element::*;
        let max_valence = [
            (B, 3),
            (C, 4),
            (N, 3),
            (O, 2),
            (F, 1),
            (Si, 4),
            (P, 5),
            (S, 6),
            (Cl, 1),
            (Ga, 3),
            (Ge, 4),
            (As, 5),
            (Se, 6),
            (Br, 1),
            (In, 3),
            (Sb, 5),
            (Te, 6),
            (I, 1),
            (Hg, 2),
            (Tl, 3),
            (Pb, 4),
            (Bi, 5),
        ]
        .into_iter()
        .collect();
        ValenceTable { max_valence }
    }
}

impl ValenceTable {
    /// An empty table; every lookup fails until entries are set.
    pub fn empty() -> Self {
        ValenceTable {
            max_valence: BTreeMap::new(),
        }
    }

    pub fn with(mut self, element: Element, max_valence: u8) -> Self {
        self.max_valence.insert(element, max_valence);
        self
    }

    pub fn remove(&mut self, element: Element) {
        self.max_valence.remove(&element);
    }

    pub fn neutral_budget(&self, element: Element) -> Result<u8, ChemError> {
        self.max_valence
            .get(&element)
            .copied()
            .ok_or_else(|| ChemError::UnknownElement(element.symbol().to_string()))
    }

    /// Bond-order budget for an atom of `element` with formal `charge`.
    pub fn budget(&self, element: Element, charge: i8) -> Result<u8, ChemError> {
        let base = i32::from(self.neutral_budget(element)?);
        let q = i32::from(charge);
        let adjusted = match element.group() {
            Group::Pnictogen | Group::Chalcogen | Group::Halogen => base + q,
            Group::Boron => base - q,
            Group::Carbon | Group::Metal => base - q.abs(),
        };
        Ok(adjusted.clamp(0, i32::from(u8::MAX)) as u8)
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        self.max_valence.keys().copied()
    }
}
