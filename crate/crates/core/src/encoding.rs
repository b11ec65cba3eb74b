//! One-hot encoding of continuous grids into binary variables.
//!
//! A [`GridSpace`] is an ordered list of blocks. Block `b` holds `C_b` equally
//! spaced values on `[min, max]` and owns the contiguous bit range
//! `offset_b .. offset_b + C_b`. A bit-vector is feasible when each block has
//! exactly one bit set.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::fm::FmParams;
use crate::qubo::QuboMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Block {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::InvalidArgument(format!(
                "block bounds must satisfy min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.count < 2 {
            return Err(Error::InvalidArgument(format!(
                "block needs at least 2 levels, got {}",
                self.count
            )));
        }
        Ok(())
    }

    pub fn value(&self, c: usize) -> f64 {
        self.min + c as f64 * (self.max - self.min) / (self.count - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Block>", into = "Vec<Block>")]
pub struct GridSpace {
    blocks: Vec<Block>,
    offsets: Vec<usize>,
    n_bits: usize,
}

impl TryFrom<Vec<Block>> for GridSpace {
    type Error = Error;

    fn try_from(blocks: Vec<Block>) -> Result<Self> {
        GridSpace::new(blocks)
    }
}

impl From<GridSpace> for Vec<Block> {
    fn from(space: GridSpace) -> Self {
        space.blocks
    }
}

/// A block that does not have exactly one bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockViolation {
    pub block: usize,
    pub bits_set: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("bit-vector has length {actual}, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("not one-hot: {0:?}")]
    Infeasible(Vec<BlockViolation>),
}

impl GridSpace {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("grid space needs a block".into()));
        }
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut n_bits = 0;
        for block in &blocks {
            block.validate()?;
            offsets.push(n_bits);
            n_bits += block.count;
        }
        Ok(Self {
            blocks,
            offsets,
            n_bits,
        })
    }

    /// `n_blocks` identical blocks.
    pub fn uniform(n_blocks: usize, min: f64, max: f64, count: usize) -> Result<Self> {
        Self::new(vec![Block::new(min, max, count); n_blocks])
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn max_count(&self) -> usize {
        self.blocks.iter().map(|b| b.count).max().unwrap_or(0)
    }

    /// Number of feasible points, `prod_b C_b`.
    pub fn n_combinations(&self) -> u128 {
        self.blocks
            .iter()
            .map(|b| b.count as u128)
            .fold(1u128, |acc, c| acc.saturating_mul(c))
    }

    pub fn grid_value(&self, block: usize, c: usize) -> Result<f64> {
        let b = self.blocks.get(block).ok_or(Error::IndexOutOfRange {
            index: block,
            limit: self.blocks.len(),
        })?;
        if c >= b.count {
            return Err(Error::IndexOutOfRange {
                index: c,
                limit: b.count,
            });
        }
        Ok(b.value(c))
    }

    pub fn check_indices(&self, indices: &[usize]) -> Result<()> {
        ensure_len(self.blocks.len(), indices.len())?;
        for (&c, b) in indices.iter().zip(&self.blocks) {
            if c >= b.count {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    limit: b.count,
                });
            }
        }
        Ok(())
    }

    /// Continuous values at a grid point.
    pub fn values(&self, indices: &[usize]) -> Result<Vec<f64>> {
        self.check_indices(indices)?;
        Ok(indices
            .iter()
            .zip(&self.blocks)
            .map(|(&c, b)| b.value(c))
            .collect())
    }

    /// Global bit positions of a feasible point, one per block, ascending.
    pub fn active_bits(&self, indices: &[usize]) -> Result<Vec<usize>> {
        self.check_indices(indices)?;
        Ok(indices
            .iter()
            .zip(&self.offsets)
            .map(|(&c, &off)| off + c)
            .collect())
    }

    pub fn encode(&self, indices: &[usize]) -> Result<Vec<bool>> {
        let mut x = vec![false; self.n_bits];
        for bit in self.active_bits(indices)? {
            x[bit] = true;
        }
        Ok(x)
    }

    pub fn decode(&self, x: &[bool]) -> std::result::Result<Vec<usize>, DecodeError> {
        if x.len() != self.n_bits {
            return Err(DecodeError::Length {
                expected: self.n_bits,
                actual: x.len(),
            });
        }
        let mut indices = Vec::with_capacity(self.blocks.len());
        let mut violations = Vec::new();
        for (block, (b, &off)) in self.blocks.iter().zip(&self.offsets).enumerate() {
            let bits = &x[off..off + b.count];
            let set = bits.iter().filter(|&&bit| bit).count();
            if set == 1 {
                indices.push(bits.iter().position(|&bit| bit).unwrap());
            } else {
                violations.push(BlockViolation {
                    block,
                    bits_set: set,
                });
            }
        }
        if violations.is_empty() {
            Ok(indices)
        } else {
            Err(DecodeError::Infeasible(violations))
        }
    }

    /// Within-block neighbor pairs `(i, i + 1)`; no pair crosses a block boundary.
    pub fn adjacency_pairs(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .zip(&self.offsets)
            .flat_map(|(b, &off)| (off..off + b.count - 1).map(|i| (i, i + 1)))
            .collect()
    }

    /// Expansion of `alpha * ((sum_k x_k) - 1)^2` for every block, using `x^2 = x`.
    pub fn penalty_qubo(&self, alpha: f64) -> Result<QuboMatrix> {
        check_alpha(alpha)?;
        let mut q = QuboMatrix::new(self.n_bits);
        self.add_penalty(&mut q, alpha)?;
        Ok(q)
    }

    fn add_penalty(&self, q: &mut QuboMatrix, alpha: f64) -> Result<()> {
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            for i in off..off + b.count {
                q.add(i, i, -alpha)?;
                for j in i + 1..off + b.count {
                    q.add(i, j, 2.0 * alpha)?;
                }
            }
            q.add_offset(alpha);
        }
        Ok(())
    }

    /// QUBO of `H_FM + H_one-hot`. On feasible vectors its energy equals
    /// `params.predict`.
    pub fn assemble_qubo(&self, params: &FmParams, alpha: f64) -> Result<QuboMatrix> {
        ensure_len(self.n_bits, params.n_bits())?;
        check_alpha(alpha)?;
        let mut q = fm_qubo(params);
        self.add_penalty(&mut q, alpha)?;
        Ok(q)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "penalty strength must be positive, got {alpha}"
        )))
    }
}

impl GridSpace {
    /// `max_i |b_i| + sum over the other blocks B of max_{j in B} |<v_i, v_j>|`
    /// plus the largest same-block coupling of `i`. Any penalty above this
    /// makes every one-hot state stable against single-bit flips.
    pub fn flip_bound(&self, params: &FmParams) -> f64 {
        let mut bound = 0.0f64;
        for i in 0..self.n_bits {
            let mut acc = params.b()[i].abs();
            for blk in 0..self.n_blocks() {
                let start = self.offsets[blk];
                let max = (start..start + self.blocks[blk].count)
                    .filter(|&j| j != i)
                    .map(|j| params.pair_weight(i, j).abs())
                    .fold(0.0, f64::max);
                acc += max;
            }
            bound = bound.max(acc);
        }
        bound
    }
}

/// The factorization machine as a QUBO: `Q_ii = b_i`, `Q_ij = <v_i, v_j>`,
/// offset `a`.
pub fn fm_qubo(params: &FmParams) -> QuboMatrix {
    let n = params.n_bits();
    let mut q = QuboMatrix::new(n);
    q.set_offset(params.a());
    for i in 0..n {
        q.add(i, i, params.b()[i]).expect("index within n");
        for j in i + 1..n {
            q.add(i, j, params.pair_weight(i, j)).expect("index within n");
        }
    }
    q
}

/// How the one-hot penalty strength is chosen when a QUBO is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaPolicy {
    /// `2 * max|Q_FM| * (largest block size)`, recomputed per assembly.
    Auto,
    /// `factor` times the largest energy change a single bit can cause
    /// against a one-hot state, see [`GridSpace::flip_bound`].
    Local(f64),
    Fixed(f64),
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Local(0.5)
    }
}

impl AlphaPolicy {
    pub fn resolve(&self, params: &FmParams, space: &GridSpace) -> f64 {
        match *self {
            AlphaPolicy::Fixed(alpha) => alpha,
            AlphaPolicy::Auto => {
                let fm_scale = max_abs_fm_coefficient(params);
                let scale = if fm_scale > 0.0 { fm_scale } else { 1.0 };
                2.0 * scale * space.max_count() as f64
            }
            AlphaPolicy::Local(factor) => {
                let bound = space.flip_bound(params);
                factor * if bound > 0.0 { bound } else { 1.0 }
            }
        }
    }
}

/// Largest `|b_i|` or `|<v_i, v_j>|` over the FM part of the QUBO.
pub fn max_abs_fm_coefficient(params: &FmParams) -> f64 {
    let n = params.n_bits();
    let mut max = params.b().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for i in 0..n {
        for j in i + 1..n {
            max = max.max(params.pair_weight(i, j).abs());
        }
    }
    max
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_values() {
        let space = GridSpace::uniform(2, -5.12, 5.12, 101).unwrap();
        assert_eq!(space.grid_value(0, 0).unwrap(), -5.12);
        assert_eq!(space.grid_value(1, 50).unwrap(), 0.0);
        assert_eq!(space.grid_value(1, 100).unwrap(), 5.12);
        let chi = GridSpace::new(vec![Block::new(1.0, 4.0, 65)]).unwrap();
        assert_eq!(chi.grid_value(0, 32).unwrap(), 2.5);
        assert!(space.grid_value(2, 0).is_err());
        assert!(space.grid_value(0, 101).is_err());
    }

    #[test]
    fn invalid_blocks_rejected() {
        assert!(GridSpace::new(vec![]).is_err());
        assert!(GridSpace::new(vec![Block::new(1.0, 1.0, 3)]).is_err());
        assert!(GridSpace::new(vec![Block::new(0.0, 1.0, 1)]).is_err());
    }

    #[test]
    fn encode_layout() {
        let one = GridSpace::uniform(1, 0.0, 1.0, 4).unwrap();
        assert_eq!(one.encode(&[2]).unwrap(), vec![false, false, true, false]);
        let two = GridSpace::uniform(2, 0.0, 1.0, 2).unwrap();
        assert_eq!(two.encode(&[1, 0]).unwrap(), vec![false, true, true, false]);
        assert!(two.encode(&[2, 0]).is_err());
        assert!(two.encode(&[0]).is_err());
    }

    #[test]
    fn decode_reports_violations() {
        let one = GridSpace::uniform(1, 0.0, 1.0, 4).unwrap();
        assert_eq!(one.decode(&[false, false, true, false]), Ok(vec![2]));
        assert_eq!(
            one.decode(&[false, true, true, false]),
            Err(DecodeError::Infeasible(vec![BlockViolation {
                block: 0,
                bits_set: 2
            }]))
        );
        assert_eq!(
            one.decode(&[false; 4]),
            Err(DecodeError::Infeasible(vec![BlockViolation {
                block: 0,
                bits_set: 0
            }]))
        );
        assert!(matches!(one.decode(&[true]), Err(DecodeError::Length { .. })));
    }

    #[test]
    fn penalty_two_bits() {
        let space = GridSpace::uniform(1, 0.0, 1.0, 2).unwrap();
        let q = space.penalty_qubo(1.0).unwrap();
        assert_eq!(q.get(0, 0), -1.0);
        assert_eq!(q.get(1, 1), -1.0);
        assert_eq!(q.get(0, 1), 2.0);
        assert_eq!(q.offset(), 1.0);
        let e = |x: [bool; 2]| q.energy(&x).unwrap();
        assert_eq!(e([false, false]), 1.0);
        assert_eq!(e([true, false]), 0.0);
        assert_eq!(e([false, true]), 0.0);
        assert_eq!(e([true, true]), 1.0);
        assert!(space.penalty_qubo(0.0).is_err());
    }

    #[test]
    fn penalty_all_bits_set() {
        let space = GridSpace::uniform(1, 0.0, 1.0, 3).unwrap();
        let q = space.penalty_qubo(2.0).unwrap();
        assert_eq!(q.energy(&[true; 3]).unwrap(), 8.0);
    }

    #[test]
    fn adjacency_examples() {
        let one = GridSpace::uniform(1, 0.0, 1.0, 3).unwrap();
        assert_eq!(one.adjacency_pairs(), vec![(0, 1), (1, 2)]);
        let two = GridSpace::uniform(2, 0.0, 1.0, 2).unwrap();
        assert_eq!(two.adjacency_pairs(), vec![(0, 1), (2, 3)]);
        let big = GridSpace::uniform(2, -5.12, 5.12, 101).unwrap();
        assert_eq!(big.adjacency_pairs().len(), 200);
    }

    #[test]
    fn assemble_zero_params_is_penalty() {
        let space = GridSpace::new(vec![Block::new(0.0, 1.0, 3), Block::new(0.0, 1.0, 2)]).unwrap();
        let params = FmParams::zeros(5, 2).unwrap();
        let assembled = space.assemble_qubo(&params, 1.0).unwrap();
        let penalty = space.penalty_qubo(1.0).unwrap();
        // the zero FM part stores explicit zeros, so compare entry by entry
        for (i, j, q) in assembled.iter() {
            assert_eq!(q, penalty.get(i, j));
        }
        assert_eq!(assembled.offset(), penalty.offset());
        assert!(space
            .assemble_qubo(&FmParams::zeros(4, 2).unwrap(), 1.0)
            .is_err());
    }

    #[test]
    fn auto_alpha_scales_with_fm() {
        let space = GridSpace::uniform(2, 0.0, 1.0, 3).unwrap();
        let mut params = FmParams::zeros(6, 1).unwrap();
        assert_eq!(AlphaPolicy::Auto.resolve(&params, &space), 6.0);
        params.b_mut()[2] = -4.0;
        assert_eq!(AlphaPolicy::Auto.resolve(&params, &space), 24.0);
        assert_eq!(AlphaPolicy::Fixed(1.5).resolve(&params, &space), 1.5);
    }

    #[test]
    fn local_alpha_keeps_one_hot_states_stable() {
        let space = GridSpace::uniform(2, 0.0, 1.0, 3).unwrap();
        let zero = FmParams::zeros(6, 1).unwrap();
        assert_eq!(AlphaPolicy::Local(0.5).resolve(&zero, &space), 0.5);

        let mut params = FmParams::zeros(6, 1).unwrap();
        params.b_mut()[1] = -1.0;
        params.v_mut().copy_from_slice(&[1.0, 2.0, 0.0, -1.0, 0.5, 0.0]);
        // bit 1: |b| 1, same block max |<v1,v0>| = 2, other block max 2
        assert_eq!(space.flip_bound(&params), 5.0);
        let alpha = AlphaPolicy::Local(1.0).resolve(&params, &space);
        let q = space.assemble_qubo(&params, alpha).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let x = space.encode(&[i, j]).unwrap();
                let e = q.energy(&x).unwrap();
                for k in 0..6 {
                    let mut y = x.clone();
                    y[k] = !y[k];
                    assert!(q.energy(&y).unwrap() >= e, "flip {k} from {:?}", [i, j]);
                }
            }
        }
    }

    #[test]
    fn space_serde_validates() {
        let space = GridSpace::uniform(2, 0.0, 1.0, 3).unwrap();
        let text = serde_json::to_string(&space).unwrap();
        assert_eq!(serde_json::from_str::<GridSpace>(&text).unwrap(), space);
        assert!(serde_json::from_str::<GridSpace>(r#"[{"min":1,"max":0,"count":3}]"#).is_err());
    }
}
