use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::so3::Parity;

/// Kind of a block: degree `l` and, in E(3) mode, a parity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Irrep {
    pub l: u32,
    pub parity: Option<Parity>,
}

impl Irrep {
    pub const fn new(l: u32, parity: Option<Parity>) -> Self {
        Self { l, parity }
    }

    pub fn dim(self) -> usize {
        2 * self.l as usize + 1
    }

    /// True scalar: `l = 0` and (in E(3) mode) even. Pseudo-scalars `(0, o)`
    /// behave like higher-degree blocks.
    pub fn is_scalar(self) -> bool {
        self.l == 0 && self.parity != Some(Parity::Odd)
    }

    /// Sign under inversion. SE(3)-mode blocks follow the harmonics, `(−1)^l`.
    pub fn inversion_sign(self) -> f64 {
        match self.parity {
            Some(p) => p.sign(),
            None if self.l % 2 == 1 => -1.0,
            None => 1.0,
        }
    }
}

impl fmt::Display for Irrep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parity {
            Some(p) => write!(f, "{},{}", self.l, p),
            None => write!(f, "{}", self.l),
        }
    }
}

/// `mul` channels of one irrep kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MulIr {
    pub mul: usize,
    pub ir: Irrep,
}

impl MulIr {
    pub fn dim(&self) -> usize {
        self.mul * self.ir.dim()
    }
}

/// Ordered list of `(multiplicity, degree[, parity])` blocks.
///
/// Text form follows the bracket notation `[(128,0),(64,1),(32,2)]`, or
/// `[(128,0,e),(32,0,o)]` with parities.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Irreps {
    blocks: Vec<MulIr>,
}

impl Irreps {
    pub fn new(blocks: Vec<MulIr>) -> Result<Self> {
        let irreps = Self { blocks };
        irreps.validate()?;
        Ok(irreps)
    }

    fn validate(&self) -> Result<()> {
        if self.blocks.iter().any(|b| b.mul == 0) {
            return Err(Error::Parse("irreps multiplicities must be positive".into()));
        }
        let with = self.blocks.iter().filter(|b| b.ir.parity.is_some()).count();
        if with != 0 && with != self.blocks.len() {
            return Err(Error::Parse(
                "irreps mix blocks with and without parity".into(),
            ));
        }
        Ok(())
    }

    /// SE(3)-mode blocks `(mul, l)`.
    pub fn se3(blocks: &[(usize, u32)]) -> Self {
        Self::new(
            blocks
                .iter()
                .map(|&(mul, l)| MulIr {
                    mul,
                    ir: Irrep::new(l, None),
                })
                .collect(),
        )
        .expect("positive multiplicities")
    }

    /// E(3)-mode blocks `(mul, l, parity)`.
    pub fn e3(blocks: &[(usize, u32, Parity)]) -> Self {
        Self::new(
            blocks
                .iter()
                .map(|&(mul, l, p)| MulIr {
                    mul,
                    ir: Irrep::new(l, Some(p)),
                })
                .collect(),
        )
        .expect("positive multiplicities")
    }

    pub fn empty() -> Self {
        Self { blocks: Vec::new() }
    }

    pub fn blocks(&self) -> &[MulIr] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(MulIr::dim).sum()
    }

    pub fn num_channels(&self) -> usize {
        self.blocks.iter().map(|b| b.mul).sum()
    }

    /// Column offset of each block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.dim();
                o
            })
            .collect()
    }

    pub fn is_e3(&self) -> bool {
        self.blocks.first().is_some_and(|b| b.ir.parity.is_some())
    }

    pub fn lmax(&self) -> u32 {
        self.blocks.iter().map(|b| b.ir.l).max().unwrap_or(0)
    }

    /// Total channels of true scalars.
    pub fn scalar_channels(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.ir.is_scalar())
            .map(|b| b.mul)
            .sum()
    }

    /// Total channels of the given kind.
    pub fn channels_of(&self, ir: Irrep) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.ir == ir)
            .map(|b| b.mul)
            .sum()
    }

    /// Scalar kind matching this descriptor's mode.
    pub fn scalar_irrep(&self) -> Irrep {
        if self.is_e3() {
            Irrep::new(0, Some(Parity::Even))
        } else {
            Irrep::new(0, None)
        }
    }

    /// Every multiplicity multiplied by `factor`.
    pub fn times(&self, factor: usize) -> Irreps {
        Irreps {
            blocks: self
                .blocks
                .iter()
                .map(|b| MulIr {
                    mul: b.mul * factor,
                    ir: b.ir,
                })
                .collect(),
        }
    }

    /// Concatenation.
    pub fn concat(&self, other: &Irreps) -> Result<Irreps> {
        let mut blocks = self.blocks.clone();
        blocks.extend_from_slice(&other.blocks);
        Irreps::new(blocks)
    }

    /// Only the true-scalar blocks.
    pub fn scalars_only(&self) -> Irreps {
        Irreps {
            blocks: self
                .blocks
                .iter()
                .copied()
                .filter(|b| b.ir.is_scalar())
                .collect(),
        }
    }

    /// `(block index, channel within block)` for every channel, in layout order.
    pub fn channels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(b, blk)| (0..blk.mul).map(move |c| (b, c)))
    }
}

impl fmt::Display for Irreps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "({},{})", b.mul, b.ir)?;
        }
        write!(f, "]")
    }
}

impl FromStr for Irreps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let inner = compact
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| Error::Parse(format!("irreps `{s}` must be bracketed")))?;
        if inner.is_empty() {
            return Ok(Irreps::empty());
        }
        let mut blocks = Vec::new();
        let mut rest = inner;
        loop {
            let body = rest
                .strip_prefix('(')
                .ok_or_else(|| Error::Parse(format!("expected `(` in irreps `{s}`")))?;
            let close = body
                .find(')')
                .ok_or_else(|| Error::Parse(format!("unclosed block in irreps `{s}`")))?;
            let fields: Vec<&str> = body[..close].split(',').collect();
            let bad = || Error::Parse(format!("bad block `({})` in irreps `{s}`", &body[..close]));
            let (mul, l, parity) = match fields.as_slice() {
                [m, l] => (m, l, None),
                [m, l, p] => {
                    let p = match *p {
                        "e" => Parity::Even,
                        "o" => Parity::Odd,
                        _ => return Err(bad()),
                    };
                    (m, l, Some(p))
                }
                _ => return Err(bad()),
            };
            blocks.push(MulIr {
                mul: mul.parse().map_err(|_| bad())?,
                ir: Irrep::new(l.parse().map_err(|_| bad())?, parity),
            });
            rest = &body[close + 1..];
            if rest.is_empty() {
                break;
            }
            rest = rest
                .strip_prefix(',')
                .ok_or_else(|| Error::Parse(format!("expected `,` between blocks in `{s}`")))?;
        }
        Irreps::new(blocks)
    }
}

impl Serialize for Irreps {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Irreps {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bracket_notation() {
        let ir: Irreps = "[(128, 0), (64, 1), (32, 2)]".parse().unwrap();
        assert_eq!(ir, Irreps::se3(&[(128, 0), (64, 1), (32, 2)]));
        assert_eq!(ir.dim(), 128 + 64 * 3 + 32 * 5);
        assert_eq!(ir.to_string(), "[(128,0),(64,1),(32,2)]");
        assert!(!ir.is_e3());
    }

    #[test]
    fn parses_parities() {
        let ir: Irreps = "[(128,0,e),(32,0,o),(32,1,e)]".parse().unwrap();
        assert!(ir.is_e3());
        assert_eq!(ir.scalar_channels(), 128);
        assert_eq!(ir.to_string(), "[(128,0,e),(32,0,o),(32,1,e)]");
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["(1,0)", "[(1,0", "[(1,0,x)]", "[(0,1)]", "[(1,0),(1,1,e)]", "[(a,0)]"] {
            assert!(bad.parse::<Irreps>().is_err(), "{bad}");
        }
        assert!("[]".parse::<Irreps>().unwrap().is_empty());
    }

    #[test]
    fn offsets_and_times() {
        let ir = Irreps::se3(&[(2, 0), (1, 1), (3, 2)]);
        assert_eq!(ir.offsets(), vec![0, 2, 5]);
        assert_eq!(ir.times(4), Irreps::se3(&[(8, 0), (4, 1), (12, 2)]));
    }
}
