//! Independent oracles for the moment functional and the Wishart moments.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use flatdiv_core::combinatorics::{catalan, narayana, phi, wishart_moment, PhiParams};
use flatdiv_core::numkernel::{gaussian_matrix, gram, sym_eigen, RngStream};

fn ratio(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn binom(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut r = BigInt::one();
    for i in 0..k {
        r = r * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    r
}

fn narayana_exact(m: u64, l: u64) -> BigRational {
    BigRational::new(binom(m - 1, l - 1) * binom(m, l - 1), BigInt::from(l))
}

/// `sum_l q^l N(m, l)`, exact.
fn moment_exact(q: &BigRational, m: u64) -> BigRational {
    if m == 0 {
        return BigRational::one();
    }
    let mut s = BigRational::zero();
    let mut ql = BigRational::one();
    for l in 1..=m {
        ql = &ql * q;
        s += &ql * narayana_exact(m, l);
    }
    s
}

fn poly_mul(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let mut out = vec![BigRational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `phi(i, j)` by expanding `(1 - eta x - eta rho x^2)^i x^j` and replacing `x^m` by its moment.
/// Returns the value and the sum of absolute term magnitudes.
fn phi_exact(
    eta: &BigRational,
    rho: &BigRational,
    q: &BigRational,
    i: usize,
    j: usize,
) -> (BigRational, f64) {
    let p = vec![BigRational::one(), -eta.clone(), -(eta * rho)];
    let mut poly = vec![BigRational::one()];
    for _ in 0..i {
        poly = poly_mul(&poly, &p);
    }
    let mut value = BigRational::zero();
    let mut scale = 0.0;
    for (m, c) in poly.iter().enumerate() {
        let t = c * moment_exact(q, (m + j) as u64);
        scale += t.to_f64().unwrap().abs();
        value += t;
    }
    (value, scale)
}

#[test]
fn narayana_and_catalan_exact() {
    assert_eq!(narayana(3, 2).unwrap(), 3.0);
    assert_eq!(narayana(4, 2).unwrap(), 6.0);
    for m in 1..=30u64 {
        let sum: BigRational = (1..=m).map(|l| narayana_exact(m, l)).sum();
        let cat = BigRational::from_integer(binom(2 * m, m) / BigInt::from(m + 1));
        assert_eq!(sum, cat, "m={m}");
        assert_eq!(catalan(m), cat.to_f64().unwrap(), "m={m}");
        for l in 1..=m {
            assert_eq!(
                narayana(m, l).unwrap(),
                narayana_exact(m, l).to_f64().unwrap()
            );
        }
    }
}

#[test]
fn phi_matches_exact_rational_expansion() {
    let cases = [
        (3000usize, 150usize, 1usize, (1i64, 100i64), (3i64, 10i64)),
        (3000, 150, 1, (5, 100), (4, 10)),
        (3000, 150, 1, (1, 10), (5, 10)),
        (3000, 150, 10, (1, 10), (3, 10)),
        (3000, 150, 10, (3, 10), (5, 10)),
        (300, 50, 1, (1, 200), (1, 2)),
    ];
    for (n, d, s, (ep, eq), (rp, rq)) in cases {
        let eta = ep as f64 / eq as f64;
        let rho = rp as f64 / rq as f64;
        let params = PhiParams::new(n, d, eta, rho, s).unwrap();
        let q = ratio(n as i64, (s * d) as i64);
        for (i, j) in [
            (0, 1),
            (1, 0),
            (2, 0),
            (2, 2),
            (4, 0),
            (8, 0),
            (8, 2),
            (12, 2),
            (16, 0),
            (16, 4),
            (24, 4),
            (32, 4),
            (48, 4),
        ] {
            let (exact, scale) = phi_exact(&ratio(ep, eq), &ratio(rp, rq), &q, i, j);
            let got = phi(&params, i, j).unwrap();
            let want = exact.to_f64().unwrap();
            // relative to the value itself, not to the far larger expansion terms
            assert!(
                (got - want).abs() <= 1e-11 * want.abs(),
                "n={n} d={d} S={s} eta={eta} rho={rho} phi({i},{j}) = {got}, exact {want}, terms up to {scale:e}"
            );
        }
    }
}

#[test]
fn phi_hand_expansion() {
    let p = PhiParams::new(3000, 150, 0.01, 0.3, 1).unwrap();
    let q = 20.0;
    let want = 1.0 - 0.01 * q - 0.01 * 0.3 * (q * q + q);
    assert!((phi(&p, 1, 0).unwrap() - want).abs() < 1e-12);
    assert_eq!(phi(&p, 0, 0).unwrap(), 1.0);
    assert!((phi(&p, 0, 2).unwrap() - (q * q + q)).abs() < 1e-9);
}

/// Moments of the Marchenko-Pastur law with ratio `c < 1` and unit variance,
/// by Chebyshev-substituted trapezoid quadrature on its support.
fn mp_moment(c: f64, m: i32) -> f64 {
    let (a, b) = ((1.0 - c.sqrt()).powi(2), (1.0 + c.sqrt()).powi(2));
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    let n = 4000;
    let mut s = 0.0;
    for k in 0..n {
        let t = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
        let x = mid + half * t.cos();
        // density sqrt((b-x)(x-a)) / (2 pi c x), dx = half sin t dt, sqrt(...) = half sin t
        let w = half * t.sin() * half * t.sin() / (2.0 * std::f64::consts::PI * c * x);
        s += x.powi(m) * w * std::f64::consts::PI / n as f64;
    }
    s
}

#[test]
fn wishart_moments_match_marchenko_pastur_quadrature() {
    for (n, d) in [(3000usize, 150usize), (300, 50), (600, 200), (1000, 900)] {
        let p = PhiParams::new(n, d, 0.01, 0.3, 1).unwrap();
        let q = n as f64 / d as f64;
        for m in 0..=12 {
            let quad = q.powi(m) * mp_moment(1.0 / q, m);
            let got = wishart_moment(&p, m as usize);
            assert!(
                (got - quad).abs() <= 1e-9 * got,
                "q={q} m={m}: {got} vs {quad}"
            );
        }
    }
}

/// `tr(B^i M^j) / d` averaged over draws of `A` with `N(0, 1/d)` entries.
fn mc_phi(n: usize, d: usize, eta: f64, rho: f64, i: i32, j: i32, draws: u64) -> f64 {
    let mut acc = 0.0;
    for s in 0..draws {
        let a = gaussian_matrix(&RngStream::new(77, s), n, d, 1.0 / d as f64);
        let eig = sym_eigen(&gram(&a)).unwrap();
        let tr: f64 = eig
            .values
            .as_slice()
            .iter()
            .map(|&l| (1.0 - eta * l - eta * rho * l * l).powi(i) * l.powi(j))
            .sum();
        acc += tr / d as f64;
    }
    acc / draws as f64
}

#[test]
fn phi_matches_monte_carlo_at_low_order() {
    let (n, d) = (3000, 150);
    for (eta, rho, i, j) in [
        (0.01, 0.3, 1, 0),
        (0.01, 0.3, 2, 0),
        (0.01, 0.5, 2, 1),
        (0.005, 0.3, 4, 2),
        (0.02, 0.4, 3, 0),
    ] {
        let p = PhiParams::new(n, d, eta, rho, 1).unwrap();
        let want = phi(&p, i as usize, j as usize).unwrap();
        let got = mc_phi(n, d, eta, rho, i, j, 4);
        assert!(
            (got - want).abs() <= 0.03 * want.abs().max(1e-3),
            "phi({i},{j}) eta={eta} rho={rho}: mc {got} vs {want}"
        );
    }
}
