//! Instances, signings, and the exact brute-force discrepancy oracle.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Default cap on `n` for exhaustive enumeration.
pub const BRUTE_FORCE_CAP: usize = 26;

/// An `m x n` instance: `n` column vectors of dimension `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    dim: usize,
    columns: Vec<Vec<f64>>,
}

impl VectorSet {
    pub fn new(dim: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dim must be positive".into()));
        }
        if columns.is_empty() {
            return Err(Error::Validation("instance must have at least one column".into()));
        }
        for (i, c) in columns.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            if let Some(j) = c.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "column {i} coordinate {j} is not finite"
                )));
            }
        }
        Ok(Self { dim, columns })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of columns `n`.
    pub fn count(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Instance with every column negated.
    pub fn negated(&self) -> Self {
        Self {
            dim: self.dim,
            columns: self
                .columns
                .iter()
                .map(|c| c.iter().map(|x| -x).collect())
                .collect(),
        }
    }

    /// Reads the instance CSV format: one line per column, `m` comma-separated
    /// floats per line. An optional leading `# m=<m> n=<n>` header is honored
    /// as a consistency check.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut declared: Option<(usize, usize)> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                declared = parse_header(rest);
                continue;
            }
            let col: Vec<f64> = line
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            columns.push(col);
        }
        let dim = columns
            .first()
            .map(|c| c.len())
            .ok_or_else(|| Error::Parse("empty instance file".into()))?;
        if let Some((m, n)) = declared {
            if m != dim || n != columns.len() {
                return Err(Error::Parse(format!(
                    "header declares m={m} n={n}, file has m={dim} n={}",
                    columns.len()
                )));
            }
        }
        Self::new(dim, columns)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# m={} n={}", self.dim, self.count())?;
        for c in &self.columns {
            let line: Vec<String> = c.iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

fn parse_header(rest: &str) -> Option<(usize, usize)> {
    let mut m = None;
    let mut n = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("m=") {
            m = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse().ok();
        }
    }
    m.zip(n)
}

/// A full signing `sigma in {-1,+1}^n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signing {
    signs: Vec<i8>,
}

impl Signing {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Validation("signing entries must be -1 or +1".into()));
        }
        Ok(Self { signs })
    }

    pub fn all_plus(n: usize) -> Self {
        Self { signs: vec![1; n] }
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn parse(s: &str) -> Result<Self> {
        let signs: Vec<i8> = s
            .trim()
            .chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::Parse(format!("unexpected signing character {other:?}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { signs })
    }

    /// `-1 < +1`, entry by entry.
    fn lex_less(&self, other: &Signing) -> bool {
        for (a, b) in self.signs.iter().zip(&other.signs) {
            if a != b {
                return a < b;
            }
        }
        false
    }
}

impl fmt::Display for Signing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.signs {
            f.write_str(if s > 0 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

/// A working vector in the differencing process: a value plus its provenance
/// as a disjoint-support signed sum of original columns.
#[derive(Debug, Clone)]
pub struct SignedCombination {
    pub value: Vec<f64>,
    pub support: BTreeMap<usize, i8>,
}

impl SignedCombination {
    /// The zero vector with empty support.
    pub fn zero(dim: usize) -> Self {
        Self {
            value: vec![0.0; dim],
            support: BTreeMap::new(),
        }
    }

    /// Column `i` of `x` taken with sign `+1`.
    pub fn column(x: &VectorSet, i: usize) -> Self {
        let mut support = BTreeMap::new();
        support.insert(i, 1);
        Self {
            value: x.column(i).to_vec(),
            support,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.value.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.value.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self - other`, consuming both; supports must be disjoint.
    pub fn difference(mut self, other: SignedCombination) -> Result<Self> {
        for (v, o) in self.value.iter_mut().zip(&other.value) {
            *v -= o;
        }
        for (idx, sign) in other.support {
            if self.support.insert(idx, -sign).is_some() {
                return Err(Error::ImpossibleState(format!(
                    "support collision on column {idx}"
                )));
            }
        }
        Ok(self)
    }

    /// `self + sign * other`, consuming both; supports must be disjoint.
    pub fn add_signed(mut self, sign: i8, other: SignedCombination) -> Result<Self> {
        let s = f64::from(sign);
        for (v, o) in self.value.iter_mut().zip(&other.value) {
            *v += s * o;
        }
        for (idx, sg) in other.support {
            if self.support.insert(idx, sign * sg).is_some() {
                return Err(Error::ImpossibleState(format!(
                    "support collision on column {idx}"
                )));
            }
        }
        Ok(self)
    }

    /// Recomputes the value from the support against the raw instance.
    pub fn recompute(&self, x: &VectorSet) -> Vec<f64> {
        let mut acc = vec![0.0; x.dim()];
        for (&idx, &sign) in &self.support {
            let s = f64::from(sign);
            for (a, v) in acc.iter_mut().zip(x.column(idx)) {
                *a += s * v;
            }
        }
        acc
    }
}

/// A signing with its achieved discrepancy, re-derivable from the instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub signing: Signing,
    pub sup_norm: f64,
    pub coordinate_sums: Vec<f64>,
}

/// `sum_i sigma_i X_i`, accumulated left to right.
pub fn signed_sum(x: &VectorSet, sigma: &Signing) -> Result<Vec<f64>> {
    if sigma.len() != x.count() {
        return Err(Error::DimensionMismatch {
            expected: x.count(),
            got: sigma.len(),
        });
    }
    let mut acc = vec![0.0; x.dim()];
    for (i, &s) in sigma.signs().iter().enumerate() {
        let s = f64::from(s);
        for (a, v) in acc.iter_mut().zip(x.column(i)) {
            *a += s * v;
        }
    }
    Ok(acc)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Evaluates a signing against an instance.
pub fn discrepancy(x: &VectorSet, sigma: &Signing) -> Result<DiscrepancyReport> {
    let sums = signed_sum(x, sigma)?;
    Ok(DiscrepancyReport {
        signing: sigma.clone(),
        sup_norm: sup_norm(&sums),
        coordinate_sums: sums,
    })
}

/// Exact minimizer of `|X sigma|_inf` over all signings.
///
/// Enumerates only signings with `sigma_1 = +1` (sign-flip symmetry) in
/// Gray-code order with incremental sum updates; ties are resolved toward the
/// lexicographically smallest signing (`-1 < +1`).
pub fn brute_force_min(x: &VectorSet, cap: usize) -> Result<DiscrepancyReport> {
    let n = x.count();
    if n > cap {
        return Err(Error::SizeExceeded { n, cap });
    }
    let m = x.dim();

    // sigma_1 = +1 fixed; bit j of the Gray counter controls sigma_{j+2}.
    let mut signs: Vec<i8> = vec![1; n];
    let mut sums: Vec<f64> = vec![0.0; m];
    for c in x.columns() {
        for (a, v) in sums.iter_mut().zip(c) {
            *a += v;
        }
    }

    let mut best_signs = signs.clone();
    let mut best_val = sup_norm(&sums);

    let steps: u64 = 1u64 << (n - 1);
    for i in 1..steps {
        let j = i.trailing_zeros() as usize + 1;
        let flip_to = -signs[j];
        signs[j] = flip_to;
        let s = 2.0 * f64::from(flip_to);
        for (a, v) in sums.iter_mut().zip(x.column(j)) {
            *a += s * v;
        }
        let val = sup_norm(&sums);
        if val < best_val {
            best_val = val;
            best_signs.copy_from_slice(&signs);
        } else if val == best_val {
            let cand = Signing { signs: signs.clone() };
            let cur = Signing { signs: best_signs.clone() };
            if cand.lex_less(&cur) {
                best_signs.copy_from_slice(&signs);
            }
        }
    }

    let signing = Signing { signs: best_signs };
    // Recompute from scratch so the report is independent of the incremental path.
    discrepancy(x, &signing)
}
