//! Shape arithmetic and the strided loops behind broadcasting.

use crate::error::{shape_err, Result};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Strides of `src` viewed as broadcast to `out` (zero along broadcast axes).
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let base = contiguous_strides(src);
    let mut strides = vec![0; rank];
    for i in 0..src.len() {
        let j = rank - src.len() + i;
        if src[i] != 1 {
            strides[j] = base[i];
        }
    }
    strides
}

/// Splits a broadcast of `small` into `big` as `outer ++ trailing`, where
/// `small` is all ones over the trailing axes. Returns the outer shape of
/// `big`, the matching (left-padded) leading part of `small`, and the
/// trailing element count. `None` when there is no trailing block.
pub(crate) fn split_trailing(small: &[usize], big: &[usize]) -> Option<(Vec<usize>, Vec<usize>, usize)> {
    let rank = big.len();
    if small.len() > rank {
        return None;
    }
    let mut padded = vec![1; rank - small.len()];
    padded.extend_from_slice(small);
    let k = padded.iter().rev().take_while(|&&d| d == 1).count();
    if k == 0 {
        return None;
    }
    let cut = rank - k;
    let inner = numel(&big[cut..]);
    Some((big[..cut].to_vec(), padded[..cut].to_vec(), inner))
}

/// Returns true when `src` can be broadcast to `target`.
pub(crate) fn broadcastable_to(src: &[usize], target: &[usize]) -> bool {
    if src.len() > target.len() {
        return false;
    }
    let off = target.len() - src.len();
    src.iter()
        .enumerate()
        .all(|(i, &d)| d == 1 || d == target[off + i])
}

/// Visits every element of `shape` in row-major order, handing the closure
/// the linear output index and the offsets into two strided operands.
pub(crate) fn for_each2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    if numel(shape) == 0 {
        return;
    }
    let inner = shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut lin = 0usize;
    loop {
        for k in 0..inner {
            f(lin + k, oa + k * ia, ob + k * ib);
        }
        lin += inner;
        // odometer over the outer dimensions
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(
            broadcast_shapes("t", &[2, 3, 4, 4], &[1, 3, 1, 1]).unwrap(),
            vec![2, 3, 4, 4]
        );
        assert_eq!(broadcast_shapes("t", &[5], &[2, 1]).unwrap(), vec![2, 5]);
        assert!(broadcast_shapes("t", &[2, 3], &[4, 3]).is_err());
    }

    #[test]
    fn strided_walk_matches_naive_indexing() {
        let shape = [2, 3, 4];
        let sa = broadcast_strides(&[2, 1, 4], &shape);
        let sb = broadcast_strides(&[3, 1], &shape);
        let mut seen = Vec::new();
        for_each2(&shape, &sa, &sb, |o, a, b| seen.push((o, a, b)));
        assert_eq!(seen.len(), 24);
        // element (1, 2, 3)
        assert_eq!(seen[23], (23, 7, 2));
        // element (0, 1, 2)
        assert_eq!(seen[6], (6, 2, 1));
    }
}
