//! Pauli strings stored as bit masks and real linear combinations of them.
//!
//! Site `k` (1-based) of an `n`-qubit register lives on bit `n - k`, so site 1
//! is the most significant factor of the Kronecker product.

use faer::{c64, Mat};

/// Single-site Pauli axis: 1 = x, 2 = y, 3 = z.
pub type Axis = u8;

/// A Hermitian Pauli string `i^{n_y} X^x Z^z` on up to 64 qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    pub x: u64,
    pub z: u64,
}

impl PauliString {
    pub const IDENTITY: PauliString = PauliString { x: 0, z: 0 };

    fn site_bit(n_qubits: usize, site: usize) -> u64 {
        debug_assert!(site >= 1 && site <= n_qubits);
        1u64 << (n_qubits - site)
    }

    /// `sigma^axis` on one site.
    pub fn single(n_qubits: usize, site: usize, axis: Axis) -> Self {
        let b = Self::site_bit(n_qubits, site);
        match axis {
            1 => PauliString { x: b, z: 0 },
            2 => PauliString { x: b, z: b },
            3 => PauliString { x: 0, z: b },
            _ => panic!("pauli axis must be 1, 2 or 3, got {axis}"),
        }
    }

    /// `sigma^a_i sigma^b_j` for distinct sites.
    pub fn pair(n_qubits: usize, i: usize, a: Axis, j: usize, b: Axis) -> Self {
        Self::single(n_qubits, i, a).mul_commuting(Self::single(n_qubits, j, b))
    }

    // Only valid for strings acting on disjoint sites.
    fn mul_commuting(self, other: Self) -> Self {
        debug_assert_eq!((self.x | self.z) & (other.x | other.z), 0);
        PauliString { x: self.x | other.x, z: self.z | other.z }
    }

    /// Number of `sigma^y` factors.
    pub fn n_y(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    /// Image of basis state `b`: returns `(b', phase)` with `P|b> = phase |b'>`.
    #[inline]
    pub fn apply(&self, b: usize) -> (usize, c64) {
        let sign = if ((b as u64) & self.z).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
        let phase = match self.n_y() % 4 {
            0 => c64::new(sign, 0.0),
            1 => c64::new(0.0, sign),
            2 => c64::new(-sign, 0.0),
            _ => c64::new(0.0, -sign),
        };
        (b ^ self.x as usize, phase)
    }

    /// Split into the factor on the leading `n_high` qubits and the factor on
    /// the trailing `n_low` qubits.
    pub fn split(&self, n_low: usize) -> (PauliString, PauliString) {
        let mask = if n_low == 64 { u64::MAX } else { (1u64 << n_low) - 1 };
        (
            PauliString { x: self.x >> n_low, z: self.z >> n_low },
            PauliString { x: self.x & mask, z: self.z & mask },
        )
    }

    /// Inverse of [`split`](Self::split).
    pub fn join(high: PauliString, low: PauliString, n_low: usize) -> Self {
        PauliString { x: (high.x << n_low) | low.x, z: (high.z << n_low) | low.z }
    }

    /// Site-ordered label such as `ZIXY`, site 1 first.
    pub fn label(&self, n_qubits: usize) -> String {
        (1..=n_qubits)
            .map(|k| {
                let b = 1u64 << (n_qubits - k);
                match (self.x & b != 0, self.z & b != 0) {
                    (false, false) => 'I',
                    (true, false) => 'X',
                    (true, true) => 'Y',
                    (false, true) => 'Z',
                }
            })
            .collect()
    }

    /// Dense matrix of the string on `n_qubits` qubits.
    pub fn to_dense(&self, n_qubits: usize) -> Mat<c64> {
        let n = 1usize << n_qubits;
        let mut m = Mat::zeros(n, n);
        for b in 0..n {
            let (row, ph) = self.apply(b);
            m[(row, b)] = ph;
        }
        m
    }
}

/// Real combination of Pauli strings, hence a Hermitian operator.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliSum {
    pub n_qubits: usize,
    pub terms: Vec<(f64, PauliString)>,
}

impl PauliSum {
    pub fn new(n_qubits: usize) -> Self {
        assert!(n_qubits <= 30, "dense dimension 2^{n_qubits} is not addressable");
        PauliSum { n_qubits, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn push(&mut self, coeff: f64, p: PauliString) {
        self.terms.push((coeff, p));
    }

    /// `Tr(H^2)/N`, i.e. the sum of squared coefficients after merging
    /// repeated strings.
    pub fn variance(&self) -> f64 {
        let mut merged: Vec<(PauliString, f64)> = Vec::with_capacity(self.terms.len());
        let mut sorted = self.terms.clone();
        sorted.sort_by_key(|a| a.1);
        for (c, p) in sorted {
            match merged.last_mut() {
                Some((q, acc)) if *q == p => *acc += c,
                _ => merged.push((p, c)),
            }
        }
        merged.iter().filter(|(p, _)| *p != PauliString::IDENTITY).map(|(_, c)| c * c).sum()
    }

    /// `Tr(H)/N`.
    pub fn trace_per_dim(&self) -> f64 {
        self.terms.iter().filter(|(_, p)| *p == PauliString::IDENTITY).map(|(c, _)| c).sum()
    }

    /// Add `scale * self` into a dense matrix of matching dimension.
    pub fn add_to_dense(&self, m: &mut Mat<c64>, scale: f64) {
        let n = self.dim();
        assert_eq!((m.nrows(), m.ncols()), (n, n));
        for &(c, p) in &self.terms {
            let c = c * scale;
            for b in 0..n {
                let (row, ph) = p.apply(b);
                m[(row, b)] += ph * c;
            }
        }
    }

    pub fn to_dense(&self) -> Mat<c64> {
        let mut m = Mat::zeros(self.dim(), self.dim());
        self.add_to_dense(&mut m, 1.0);
        m
    }

    /// Embed an operator on the leading qubits as `self (x) 1` on a register
    /// with `n_low` extra trailing qubits.
    pub fn embed_high(&self, n_low: usize) -> PauliSum {
        PauliSum {
            n_qubits: self.n_qubits + n_low,
            terms: self
                .terms
                .iter()
                .map(|&(c, p)| (c, PauliString::join(p, PauliString::IDENTITY, n_low)))
                .collect(),
        }
    }

    /// Embed an operator on the trailing qubits as `1 (x) self`.
    pub fn embed_low(&self, n_high: usize) -> PauliSum {
        PauliSum { n_qubits: self.n_qubits + n_high, terms: self.terms.clone() }
    }

    pub fn extend(&mut self, other: &PauliSum) {
        assert_eq!(self.n_qubits, other.n_qubits);
        self.terms.extend_from_slice(&other.terms);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_kron(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
        let (na, nb) = (a.nrows(), b.nrows());
        Mat::from_fn(na * nb, na * nb, |r, c| a[(r / nb, c / nb)] * b[(r % nb, c % nb)])
    }

    fn sigma(axis: Axis) -> Mat<c64> {
        let (o, l, i) = (c64::new(0.0, 0.0), c64::new(1.0, 0.0), c64::new(0.0, 1.0));
        match axis {
            1 => Mat::from_fn(2, 2, |r, c| if r != c { l } else { o }),
            2 => Mat::from_fn(2, 2, |r, c| match (r, c) {
                (0, 1) => -i,
                (1, 0) => i,
                _ => o,
            }),
            _ => Mat::from_fn(2, 2, |r, c| match (r, c) {
                (0, 0) => l,
                (1, 1) => -l,
                _ => o,
            }),
        }
    }

    #[test]
    fn strings_match_kronecker_products() {
        let id = Mat::<c64>::identity(2, 2);
        for a in 1..=3 {
            for b in 1..=3 {
                let p = PauliString::pair(3, 1, a, 3, b).to_dense(3);
                let k = dense_kron(&dense_kron(&sigma(a), &id), &sigma(b));
                assert!((&p - &k).norm_max() < 1e-15, "axes {a} {b}");
            }
        }
    }

    #[test]
    fn variance_merges_repeated_strings() {
        let mut s = PauliSum::new(2);
        let p = PauliString::single(2, 1, 3);
        s.push(0.5, p);
        s.push(0.25, p);
        s.push(2.0, PauliString::IDENTITY);
        assert!((s.variance() - 0.5625).abs() < 1e-15);
        assert_eq!(s.trace_per_dim(), 2.0);
    }

    #[test]
    fn split_and_join_round_trip() {
        let p = PauliString::pair(5, 1, 2, 4, 1);
        let (h, l) = p.split(3);
        assert_eq!(h, PauliString::single(2, 1, 2));
        assert_eq!(l, PauliString::single(3, 2, 1));
        assert_eq!(PauliString::join(h, l, 3), p);
    }
}
