//! Plain forward kernels shared by the tape ops and the tape-free scoring
//! paths, so both routes produce bit-identical values.

/// W (rows x cols) times x (cols) -> rows.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    assert_eq!(w.len(), rows * cols, "matvec: weight size");
    assert_eq!(x.len(), cols, "matvec: input length {} != {}", x.len(), cols);
    let mut out = vec![0.0; rows];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "add: length mismatch");
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-layer perceptron: W2 * tanh(W1 * x + b1) + b2.
pub fn mlp2(
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
    hidden: usize,
    input: usize,
    output: usize,
    x: &[f64],
) -> Vec<f64> {
    let h = tanh_vec(&add(&matvec(w1, hidden, input, x), b1));
    add(&matvec(w2, output, hidden, &h), b2)
}

/// Truncated cosine similarity with the pieces the backward pass needs.
/// Zero-norm inputs yield value 0 (and a zero gradient downstream).
pub struct CosPlusParts {
    pub value: f64,
    pub raw_cos: f64,
    pub norm_a: f64,
    pub norm_b: f64,
}

pub fn cos_plus_parts(a: &[f64], b: &[f64]) -> CosPlusParts {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return CosPlusParts {
            value: 0.0,
            raw_cos: 0.0,
            norm_a: na,
            norm_b: nb,
        };
    }
    let raw = dot(a, b) / (na * nb);
    CosPlusParts {
        value: raw.max(0.0),
        raw_cos: raw,
        norm_a: na,
        norm_b: nb,
    }
}

/// max{0, cos(a, b)}; 0 for zero-norm inputs.
pub fn cos_plus(a: &[f64], b: &[f64]) -> f64 {
    cos_plus_parts(a, b).value
}

/// Componentwise mean of equal-length vectors; empty input yields `dim` zeros.
pub fn mean_rows(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    if rows.is_empty() {
        return vec![0.0; dim];
    }
    let mut out = vec![0.0; dim];
    for r in rows {
        assert_eq!(r.len(), dim, "mean_rows: length mismatch");
        for (o, v) in out.iter_mut().zip(*r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity() {
        let id = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(matvec(&id, 2, 2, &[3.0, -4.0]), vec![3.0, -4.0]);
    }

    #[test]
    fn cos_plus_identity_is_one() {
        let v = [0.3, -1.2, 4.0];
        assert!((cos_plus(&v, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cos_plus_antipodal_truncates_to_zero() {
        let v = [0.5, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(cos_plus(&v, &neg), 0.0);
    }

    #[test]
    fn cos_plus_hand_value() {
        // (1,0) vs (1,1): dot 1, norms 1 and sqrt(2).
        let got = cos_plus(&[1.0, 0.0], &[1.0, 1.0]);
        assert!((got - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cos_plus_zero_norm_is_zero() {
        assert_eq!(cos_plus(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn mean_rows_empty_is_zero() {
        assert_eq!(mean_rows(&[], 3), vec![0.0; 3]);
    }

    #[test]
    fn mean_rows_two_vectors() {
        let a = [1.0, 3.0];
        let b = [5.0, -1.0];
        assert_eq!(mean_rows(&[&a, &b], 2), vec![3.0, 1.0]);
    }
}
