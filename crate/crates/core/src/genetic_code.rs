//! Standard RNA genetic code (NCBI translation table 1).
//!
//! Bases use the stable encoding `A=0, U=1, G=2, C=3` and a codon index is
//! `16*b1 + 4*b2 + b3`. Tables are computed at compile time and never change.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Base {
    A = 0,
    U = 1,
    G = 2,
    C = 3,
}

impl Base {
    pub const ALL: [Base; 4] = [Base::A, Base::U, Base::G, Base::C];

    pub const fn from_index(i: u8) -> Base {
        match i & 3 {
            0 => Base::A,
            1 => Base::U,
            2 => Base::G,
            _ => Base::C,
        }
    }

    pub const fn index(self) -> u8 {
        self as u8
    }

    /// Parses one nucleotide letter. `T` is read as `U`; case is ignored.
    pub fn from_char(c: char) -> Option<Base> {
        match c.to_ascii_uppercase() {
            'A' => Some(Base::A),
            'U' | 'T' => Some(Base::U),
            'G' => Some(Base::G),
            'C' => Some(Base::C),
            _ => None,
        }
    }

    pub const fn as_char(self) -> char {
        match self {
            Base::A => 'A',
            Base::U => 'U',
            Base::G => 'G',
            Base::C => 'C',
        }
    }

    pub const fn is_strong(self) -> bool {
        matches!(self, Base::G | Base::C)
    }
}

/// Amino acids in alphabetical order of three-letter code, followed by the
/// stop signal. The discriminant doubles as the one-hot slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AminoAcid {
    Ala,
    Arg,
    Asn,
    Asp,
    Cys,
    Gln,
    Glu,
    Gly,
    His,
    Ile,
    Leu,
    Lys,
    Met,
    Phe,
    Pro,
    Ser,
    Thr,
    Trp,
    Tyr,
    Val,
    Stop,
}

impl AminoAcid {
    pub const CODING: [AminoAcid; 20] = [
        AminoAcid::Ala,
        AminoAcid::Arg,
        AminoAcid::Asn,
        AminoAcid::Asp,
        AminoAcid::Cys,
        AminoAcid::Gln,
        AminoAcid::Glu,
        AminoAcid::Gly,
        AminoAcid::His,
        AminoAcid::Ile,
        AminoAcid::Leu,
        AminoAcid::Lys,
        AminoAcid::Met,
        AminoAcid::Phe,
        AminoAcid::Pro,
        AminoAcid::Ser,
        AminoAcid::Thr,
        AminoAcid::Trp,
        AminoAcid::Tyr,
        AminoAcid::Val,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn is_stop(self) -> bool {
        matches!(self, AminoAcid::Stop)
    }

    pub const fn one_letter(self) -> char {
        match self {
            AminoAcid::Ala => 'A',
            AminoAcid::Arg => 'R',
            AminoAcid::Asn => 'N',
            AminoAcid::Asp => 'D',
            AminoAcid::Cys => 'C',
            AminoAcid::Gln => 'Q',
            AminoAcid::Glu => 'E',
            AminoAcid::Gly => 'G',
            AminoAcid::His => 'H',
            AminoAcid::Ile => 'I',
            AminoAcid::Leu => 'L',
            AminoAcid::Lys => 'K',
            AminoAcid::Met => 'M',
            AminoAcid::Phe => 'F',
            AminoAcid::Pro => 'P',
            AminoAcid::Ser => 'S',
            AminoAcid::Thr => 'T',
            AminoAcid::Trp => 'W',
            AminoAcid::Tyr => 'Y',
            AminoAcid::Val => 'V',
            AminoAcid::Stop => '*',
        }
    }

    pub const fn three_letter(self) -> &'static str {
        match self {
            AminoAcid::Ala => "Ala",
            AminoAcid::Arg => "Arg",
            AminoAcid::Asn => "Asn",
            AminoAcid::Asp => "Asp",
            AminoAcid::Cys => "Cys",
            AminoAcid::Gln => "Gln",
            AminoAcid::Glu => "Glu",
            AminoAcid::Gly => "Gly",
            AminoAcid::His => "His",
            AminoAcid::Ile => "Ile",
            AminoAcid::Leu => "Leu",
            AminoAcid::Lys => "Lys",
            AminoAcid::Met => "Met",
            AminoAcid::Phe => "Phe",
            AminoAcid::Pro => "Pro",
            AminoAcid::Ser => "Ser",
            AminoAcid::Thr => "Thr",
            AminoAcid::Trp => "Trp",
            AminoAcid::Tyr => "Tyr",
            AminoAcid::Val => "Val",
            AminoAcid::Stop => "Ter",
        }
    }

    pub fn from_one_letter(c: char) -> Option<AminoAcid> {
        let c = c.to_ascii_uppercase();
        if c == '*' {
            return Some(AminoAcid::Stop);
        }
        AminoAcid::CODING
            .iter()
            .copied()
            .find(|aa| aa.one_letter() == c)
    }

    /// Synonymous codons in ascending index order.
    pub fn synonymous_codons(self) -> &'static [Codon] {
        let (start, len) = SYNONYM_RANGES[self.index()];
        &SYNONYMS_FLAT[start..start + len]
    }
}

impl fmt::Display for AminoAcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.three_letter())
    }
}

impl FromStr for AminoAcid {
    type Err = Error;

    /// Accepts a one-letter code, a three-letter code (any case), or `Stop`.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        let mut chars = trimmed.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            return AminoAcid::from_one_letter(c)
                .ok_or_else(|| Error::UnknownAminoAcid(trimmed.to_string()));
        }
        if trimmed.eq_ignore_ascii_case("stop") {
            return Ok(AminoAcid::Stop);
        }
        AminoAcid::CODING
            .iter()
            .copied()
            .chain(std::iter::once(AminoAcid::Stop))
            .find(|aa| aa.three_letter().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| Error::UnknownAminoAcid(trimmed.to_string()))
    }
}

/// Synonymous codons for a coding amino acid or stop.
pub fn synonymous_codons(aa: AminoAcid) -> &'static [Codon] {
    aa.synonymous_codons()
}

/// Codon identified by its index `0..64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Codon(u8);

impl Codon {
    pub const COUNT: usize = 64;

    pub fn from_index(index: usize) -> Result<Codon> {
        if index < Self::COUNT {
            Ok(Codon(index as u8))
        } else {
            Err(Error::Rejected(format!("codon index {index} out of range")))
        }
    }

    pub const fn from_bases(b1: Base, b2: Base, b3: Base) -> Codon {
        Codon(16 * b1.index() + 4 * b2.index() + b3.index())
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub const fn bases(self) -> [Base; 3] {
        [
            Base::from_index(self.0 >> 4),
            Base::from_index(self.0 >> 2),
            Base::from_index(self.0),
        ]
    }

    pub const fn amino_acid(self) -> AminoAcid {
        CODON_TO_AA[self.0 as usize]
    }

    pub const fn is_stop(self) -> bool {
        self.amino_acid().is_stop()
    }

    pub fn all() -> impl Iterator<Item = Codon> {
        (0..64u8).map(Codon)
    }
}

impl fmt::Display for Codon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bases() {
            write!(f, "{}", b.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for Codon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        codon_from_string(s)
    }
}

/// Parses a three-letter codon; DNA `T` maps to `U`, case-insensitive.
pub fn codon_from_string(s: &str) -> Result<Codon> {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() != 3 {
        return Err(Error::Parse {
            position: chars.len().min(3),
            message: format!("codon '{s}' must have exactly 3 letters"),
        });
    }
    let mut bases = [Base::A; 3];
    for (i, &c) in chars.iter().enumerate() {
        bases[i] = Base::from_char(c).ok_or_else(|| Error::Parse {
            position: i,
            message: format!("'{c}' is not a nucleotide"),
        })?;
    }
    Ok(Codon::from_bases(bases[0], bases[1], bases[2]))
}

// Standard code written in the conventional U, C, A, G table order.
const TABLE_UCAG: &[u8; 64] = b"FFLLSSSSYY**CC*WLLLLPPPPHHQQRRRRIIIMTTTTNNKKSSRRVVVVAAAADDEEGGGG";

const fn ucag_position(b: u8) -> usize {
    // A=0, U=1, G=2, C=3 -> U=0, C=1, A=2, G=3
    match b {
        0 => 2,
        1 => 0,
        2 => 3,
        _ => 1,
    }
}

const fn aa_from_letter(c: u8) -> AminoAcid {
    match c {
        b'A' => AminoAcid::Ala,
        b'R' => AminoAcid::Arg,
        b'N' => AminoAcid::Asn,
        b'D' => AminoAcid::Asp,
        b'C' => AminoAcid::Cys,
        b'Q' => AminoAcid::Gln,
        b'E' => AminoAcid::Glu,
        b'G' => AminoAcid::Gly,
        b'H' => AminoAcid::His,
        b'I' => AminoAcid::Ile,
        b'L' => AminoAcid::Leu,
        b'K' => AminoAcid::Lys,
        b'M' => AminoAcid::Met,
        b'F' => AminoAcid::Phe,
        b'P' => AminoAcid::Pro,
        b'S' => AminoAcid::Ser,
        b'T' => AminoAcid::Thr,
        b'W' => AminoAcid::Trp,
        b'Y' => AminoAcid::Tyr,
        b'V' => AminoAcid::Val,
        _ => AminoAcid::Stop,
    }
}

const CODON_TO_AA: [AminoAcid; 64] = {
    let mut out = [AminoAcid::Stop; 64];
    let mut i = 0;
    while i < 64 {
        let b1 = (i >> 4) as u8 & 3;
        let b2 = (i >> 2) as u8 & 3;
        let b3 = i as u8 & 3;
        let pos = 16 * ucag_position(b1) + 4 * ucag_position(b2) + ucag_position(b3);
        out[i] = aa_from_letter(TABLE_UCAG[pos]);
        i += 1;
    }
    out
};

// Codons grouped by amino acid, ascending index inside each group.
const SYNONYMS_FLAT: [Codon; 64] = {
    let mut out = [Codon(0); 64];
    let mut k = 0;
    let mut aa = 0;
    while aa < 21 {
        let mut c = 0;
        while c < 64 {
            if CODON_TO_AA[c] as usize == aa {
                out[k] = Codon(c as u8);
                k += 1;
            }
            c += 1;
        }
        aa += 1;
    }
    out
};

const SYNONYM_RANGES: [(usize, usize); 21] = {
    let mut out = [(0usize, 0usize); 21];
    let mut start = 0;
    let mut aa = 0;
    while aa < 21 {
        let mut len = 0;
        let mut c = 0;
        while c < 64 {
            if CODON_TO_AA[c] as usize == aa {
                len += 1;
            }
            c += 1;
        }
        out[aa] = (start, len);
        start += len;
        aa += 1;
    }
    out
};

/// Target protein: at least one residue, no stop signal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Protein {
    residues: Vec<AminoAcid>,
}

impl Protein {
    pub fn new(residues: Vec<AminoAcid>) -> Result<Protein> {
        if residues.is_empty() {
            return Err(Error::Rejected(
                "protein must have at least one residue".into(),
            ));
        }
        if let Some(pos) = residues.iter().position(|aa| aa.is_stop()) {
            return Err(Error::Rejected(format!(
                "stop signal inside protein at position {pos}"
            )));
        }
        Ok(Protein { residues })
    }

    /// Parses one-letter residues. Whitespace is skipped and a single
    /// trailing `*` is dropped.
    pub fn parse(s: &str) -> Result<Protein> {
        let letters: Vec<(usize, char)> = s
            .chars()
            .enumerate()
            .filter(|(_, c)| !c.is_whitespace())
            .collect();
        let mut residues = Vec::with_capacity(letters.len());
        for (k, &(pos, c)) in letters.iter().enumerate() {
            if c == '*' && k + 1 == letters.len() {
                break;
            }
            match AminoAcid::from_one_letter(c) {
                Some(aa) if !aa.is_stop() => residues.push(aa),
                _ => {
                    return Err(Error::InvalidResidue {
                        letter: c,
                        position: pos,
                    })
                }
            }
        }
        Protein::new(residues)
    }

    pub fn residues(&self) -> &[AminoAcid] {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn residue(&self, i: usize) -> AminoAcid {
        self.residues[i]
    }
}

impl fmt::Display for Protein {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for aa in &self.residues {
            write!(f, "{}", aa.one_letter())?;
        }
        Ok(())
    }
}

impl FromStr for Protein {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protein::parse(s)
    }
}

/// A codon sequence. Designs produced by the environment never contain stop
/// codons; parsed sequences are checked by [`translate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MrnaSequence {
    codons: Vec<Codon>,
}

impl From<MrnaSequence> for String {
    fn from(x: MrnaSequence) -> String {
        x.to_string()
    }
}

impl TryFrom<String> for MrnaSequence {
    type Error = Error;

    fn try_from(s: String) -> Result<MrnaSequence> {
        s.parse()
    }
}

impl MrnaSequence {
    pub fn new(codons: Vec<Codon>) -> MrnaSequence {
        MrnaSequence { codons }
    }

    /// Builds a design and checks that it encodes `protein`.
    pub fn for_protein(protein: &Protein, codons: Vec<Codon>) -> Result<MrnaSequence> {
        if codons.len() != protein.len() {
            return Err(Error::InvalidDesign(format!(
                "{} codons for a protein of length {}",
                codons.len(),
                protein.len()
            )));
        }
        for (i, (c, aa)) in codons.iter().zip(protein.residues()).enumerate() {
            if c.amino_acid() != *aa {
                return Err(Error::InvalidDesign(format!(
                    "codon {c} at position {i} encodes {} not {aa}",
                    c.amino_acid()
                )));
            }
        }
        Ok(MrnaSequence { codons })
    }

    /// Parses a nucleotide string (RNA or DNA letters, whitespace ignored).
    pub fn parse(s: &str) -> Result<MrnaSequence> {
        let mut bases = Vec::with_capacity(s.len());
        for (pos, c) in s.chars().enumerate() {
            if c.is_whitespace() {
                continue;
            }
            let b = Base::from_char(c).ok_or_else(|| Error::Parse {
                position: pos,
                message: format!("'{c}' is not a nucleotide"),
            })?;
            bases.push(b);
        }
        if bases.len() % 3 != 0 {
            return Err(Error::Parse {
                position: bases.len(),
                message: format!(
                    "{} nucleotides is not a whole number of codons",
                    bases.len()
                ),
            });
        }
        let codons = bases
            .chunks(3)
            .map(|t| Codon::from_bases(t[0], t[1], t[2]))
            .collect();
        Ok(MrnaSequence { codons })
    }

    pub fn codons(&self) -> &[Codon] {
        &self.codons
    }

    pub fn len(&self) -> usize {
        self.codons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codons.is_empty()
    }

    pub fn nucleotides(&self) -> Vec<Base> {
        self.codons.iter().flat_map(|c| c.bases()).collect()
    }

    pub fn nucleotide_string(&self) -> String {
        self.to_string()
    }

    /// Codons joined by single spaces, e.g. `AUG UUU AAA`.
    pub fn spaced(&self) -> String {
        self.codons
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for MrnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.codons {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for MrnaSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MrnaSequence::parse(s)
    }
}

/// Translates a design back to its protein.
pub fn translate(x: &MrnaSequence) -> Result<Protein> {
    if x.is_empty() {
        return Err(Error::InvalidDesign("empty sequence".into()));
    }
    let mut residues = Vec::with_capacity(x.len());
    for (i, c) in x.codons().iter().enumerate() {
        if c.is_stop() {
            return Err(Error::InvalidDesign(format!(
                "stop codon {c} at position {i}"
            )));
        }
        residues.push(c.amino_acid());
    }
    Protein::new(residues)
}

/// Exact number of synonymous designs, the product of synonymous-set sizes.
pub fn design_space_size(p: &Protein) -> BigUint {
    p.residues().iter().fold(BigUint::from(1u32), |acc, aa| {
        acc * aa.synonymous_codons().len() as u32
    })
}

/// `log10` of the design-space size, computed without big integers.
pub fn design_space_log10(p: &Protein) -> f64 {
    p.residues()
        .iter()
        .map(|aa| (aa.synonymous_codons().len() as f64).log10())
        .sum()
}
