use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// Behaviour under spatial inversion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    #[serde(rename = "e")]
    Even,
    #[serde(rename = "o")]
    Odd,
}

impl Parity {
    /// Sign picked up under inversion.
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Parity::Even => 'e',
            Parity::Odd => 'o',
        }
    }
}

impl Mul for Parity {
    type Output = Parity;
    fn mul(self, rhs: Parity) -> Parity {
        parity_mul(self, rhs)
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

pub fn parity_mul(a: Parity, b: Parity) -> Parity {
    if a == b {
        Parity::Even
    } else {
        Parity::Odd
    }
}

/// Parity carried by the degree-`l` spherical harmonics.
pub fn sh_parity(l: u32) -> Parity {
    if l.is_multiple_of(2) {
        Parity::Even
    } else {
        Parity::Odd
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Parity::*;

    #[test]
    fn multiplication_table() {
        assert_eq!(parity_mul(Even, Even), Even);
        assert_eq!(parity_mul(Odd, Odd), Even);
        assert_eq!(parity_mul(Even, Odd), Odd);
        assert_eq!(parity_mul(Odd, Even), Odd);
        for a in [Even, Odd] {
            for b in [Even, Odd] {
                assert_eq!(a * b, b * a);
            }
        }
    }

    #[test]
    fn harmonic_parity_alternates() {
        assert_eq!(sh_parity(0), Even);
        assert_eq!(sh_parity(1), Odd);
        assert_eq!(sh_parity(2), Even);
        assert_eq!(sh_parity(3), Odd);
    }
}
