use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Spin quantum number J, stored as the integer 2J.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Spin {
    twice: u32,
}

impl Spin {
    pub const HALF: Spin = Spin { twice: 1 };
    pub const ONE: Spin = Spin { twice: 2 };
    pub const THREE_HALVES: Spin = Spin { twice: 3 };
    pub const TWO: Spin = Spin { twice: 4 };
    pub const FIVE_HALVES: Spin = Spin { twice: 5 };

    pub fn from_twice(twice: u32) -> Result<Self> {
        if twice == 0 {
            return Err(Error::InvalidSpin(0.0));
        }
        Ok(Self { twice })
    }

    pub fn from_f64(j: f64) -> Result<Self> {
        let twice = 2.0 * j;
        if !(twice >= 1.0) || twice.fract() != 0.0 || twice > u32::MAX as f64 {
            return Err(Error::InvalidSpin(j));
        }
        Ok(Self {
            twice: twice as u32,
        })
    }

    pub fn twice(self) -> u32 {
        self.twice
    }

    pub fn value(self) -> f64 {
        self.twice as f64 / 2.0
    }

    /// 2J + 1
    pub fn dim(self) -> usize {
        self.twice as usize + 1
    }

    /// `m` for basis index `k` (descending order, `k = 0` is `m = +J`).
    pub fn m(self, k: usize) -> f64 {
        self.value() - k as f64
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.twice.is_multiple_of(2) {
            write!(f, "{}", self.twice / 2)
        } else {
            write!(f, "{}/2", self.twice)
        }
    }
}

impl FromStr for Spin {
    type Err = Error;

    /// Accepts `"3/2"`, `"1.5"` or `"2"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            let num: u32 = num
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad spin {s:?}")))?;
            return match den.trim() {
                "2" => Spin::from_twice(num),
                "1" => Spin::from_twice(2 * num),
                _ => Err(Error::Parse(format!("bad spin {s:?}"))),
            };
        }
        let j: f64 = s
            .parse()
            .map_err(|_| Error::Parse(format!("bad spin {s:?}")))?;
        Spin::from_f64(j)
    }
}

impl TryFrom<String> for Spin {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Spin> for String {
    fn from(s: Spin) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperators {
    pub j_plus: DMatrix<Complex64>,
    pub j_minus: DMatrix<Complex64>,
    pub j_z: DMatrix<Complex64>,
}

/// Ladder and z operators in the descending-`m` basis.
pub fn spin_ladder(spin: Spin) -> SpinOperators {
    let d = spin.dim();
    let j = spin.value();
    let mut j_plus = DMatrix::zeros(d, d);
    let mut j_z = DMatrix::zeros(d, d);
    for k in 0..d {
        let m = spin.m(k);
        j_z[(k, k)] = Complex64::new(m, 0.0);
        // <m+1| J+ |m> sits at row k-1, column k
        if k > 0 {
            j_plus[(k - 1, k)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let j_minus = j_plus.adjoint();
    SpinOperators {
        j_plus,
        j_minus,
        j_z,
    }
}
