//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (Higham 2005).

use nalgebra::DMatrix;

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norms for which each degree meets double-precision backward error.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539398330063230e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068;
const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(M t)` for a square real matrix.
///
/// # Panics
/// Panics if `m` is not square.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    assert!(m.is_square(), "matrix exponential needs a square matrix");
    let n = m.nrows();
    let a = m * t;
    let norm = one_norm(&a);
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }
    if norm <= THETA3 {
        return pade_low(&a, &PADE3);
    }
    if norm <= THETA5 {
        return pade_low(&a, &PADE5);
    }
    if norm <= THETA7 {
        return pade_low(&a, &PADE7);
    }
    if norm <= THETA9 {
        return pade_low(&a, &PADE9);
    }
    let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
    let scaled = &a * 2f64.powi(-s);
    let mut e = pade13(&scaled);
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let q = &v - &u;
    let p = v + u;
    q.lu()
        .solve(&p)
        .unwrap_or_else(|| DMatrix::from_element(p.nrows(), p.ncols(), f64::NAN))
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let a2 = a * a;
    let mut odd = DMatrix::identity(n, n) * b[1];
    let mut even = DMatrix::identity(n, n) * b[0];
    let mut power = DMatrix::identity(n, n);
    for k in (2..b.len()).step_by(2) {
        power = &power * &a2;
        even += &power * b[k];
        odd += &power * b[k + 1];
    }
    solve_pade(a * odd, even)
}

fn pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let b = &PADE13;
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + ident * b[0];
    solve_pade(u, v)
}
