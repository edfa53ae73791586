//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use koopctl::envsim::{generate_skill_series, CartPoleGains, Env, Policy};
use koopctl::trajmodel::{EnvSpec, Trajectory, TrajectorySet};
use nalgebra::{Complex, DMatrix, DVector};
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

pub fn spec(name: &str, dim: usize, actions: usize) -> EnvSpec {
    EnvSpec::new(name, dim, actions, (0..dim).map(|i| format!("x{i}")).collect()).unwrap()
}

/// Real `n × n` matrix with a prescribed spectrum, plus that spectrum.
/// Eigenvalues have modulus in `[0.2, max_radius]` and are separated by at
/// least 0.05 so the multiset comparison is well conditioned.
pub fn matrix_with_spectrum<R: Rng>(rng: &mut R, n: usize, max_radius: f64) -> (DMatrix<f64>, Vec<Complex<f64>>) {
    let mut eig: Vec<Complex<f64>> = Vec::new();
    let mut d = DMatrix::zeros(n, n);
    let mut i = 0;
    while i < n {
        let pair = i + 1 < n && rng.random_bool(0.5);
        let candidate = loop {
            let rho = rng.random_range(0.2..max_radius);
            let th = if pair { rng.random_range(0.2..3.0) } else if rng.random_bool(0.5) { 0.0 } else { std::f64::consts::PI };
            let l = Complex::from_polar(rho, th);
            let l = if pair { l } else { Complex::new(l.re, 0.0) };
            if eig.iter().all(|e| (e - l).norm() > 0.05 && (e.conj() - l).norm() > 0.05) {
                break l;
            }
        };
        if pair {
            d[(i, i)] = candidate.re;
            d[(i, i + 1)] = -candidate.im;
            d[(i + 1, i)] = candidate.im;
            d[(i + 1, i + 1)] = candidate.re;
            eig.push(candidate);
            eig.push(candidate.conj());
            i += 2;
        } else {
            d[(i, i)] = candidate.re;
            eig.push(candidate);
            i += 1;
        }
    }
    let p = DMatrix::identity(n, n) + gaussian_matrix(rng, n, n) * (0.3 / (n as f64).sqrt());
    let p_inv = p.clone().try_inverse().expect("near-identity is invertible");
    (&p * d * p_inv, eig)
}

/// Largest distance in an optimal pairing of two small multisets.
pub fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    fn go(a: &[Complex<f64>], b: &mut Vec<Complex<f64>>) -> f64 {
        let Some((first, rest)) = a.split_first() else {
            return 0.0;
        };
        let mut best = f64::INFINITY;
        for k in 0..b.len() {
            let d = (*first - b[k]).norm();
            if d >= best {
                continue;
            }
            let taken = b.swap_remove(k);
            best = best.min(d.max(go(rest, b)));
            b.push(taken);
            let last = b.len() - 1;
            b.swap(k, last);
        }
        best
    }
    go(a, &mut b.to_vec())
}

/// Trajectories of `x⁺ = A x + B e_a` under uniformly random actions.
pub fn lti_set<R: Rng>(
    rng: &mut R,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    trajectories: usize,
    steps: usize,
) -> TrajectorySet {
    let n = a.nrows();
    let q = b.ncols();
    let trs = (0..trajectories)
        .map(|_| {
            let mut x = DVector::from_fn(n, |_, _| normal(rng));
            let mut rows = vec![x.clone()];
            let mut actions = Vec::with_capacity(steps);
            for _ in 0..steps {
                let act = rng.random_range(0..q);
                x = a * &x + b.column(act);
                rows.push(x.clone());
                actions.push(act);
            }
            let states = DMatrix::from_fn(steps + 1, n, |t, j| rows[t][j]);
            Trajectory::new(states, actions, 0.0, 0, 0).unwrap()
        })
        .collect();
    TrajectorySet::new(spec("lti", n, q), trs).unwrap()
}

pub fn rational_matrix(m: &DMatrix<f64>) -> Vec<Vec<BigRational>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| BigRational::from_float(m[(i, j)]).expect("finite entries"))
                .collect()
        })
        .collect()
}

fn mat_mul(a: &[Vec<BigRational>], b: &[Vec<BigRational>]) -> Vec<Vec<BigRational>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..k).fold(BigRational::zero(), |acc, l| acc + &a[i][l] * &b[l][j]))
                .collect()
        })
        .collect()
}

/// Rank by fraction-exact Gaussian elimination.
pub fn exact_rank(mut m: Vec<Vec<BigRational>>) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&r| !m[r][c].is_zero()) else {
            continue;
        };
        m.swap(rank, p);
        let pivot = m[rank][c].clone();
        for r in 0..rows {
            if r != rank && !m[r][c].is_zero() {
                let f = &m[r][c] / &pivot;
                for k in c..cols {
                    let v = &f * &m[rank][k];
                    m[r][k] -= v;
                }
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

/// Rank of `[B, AB, …, A^{r-1}B]` built from explicit powers in exact
/// arithmetic.
pub fn exact_kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let r = a.nrows();
    let ar = rational_matrix(a);
    let mut block = rational_matrix(b);
    let mut kalman: Vec<Vec<BigRational>> = vec![Vec::new(); r];
    for _ in 0..r {
        for (row, extra) in kalman.iter_mut().zip(&block) {
            row.extend(extra.iter().cloned());
        }
        block = mat_mul(&ar, &block);
    }
    exact_rank(kalman)
}

/// Integer pair `(A, B)` whose reachable subspace has codimension at least
/// `deficit`: block upper-triangular with an unreachable lower block, then
/// conjugated by a unimodular integer matrix.
pub fn integer_pair_with_deficit<R: Rng>(rng: &mut R, r: usize, q: usize, deficit: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = r - deficit;
    let mut a = DMatrix::from_fn(r, r, |_, _| rng.random_range(-2..=2) as f64);
    for i in k..r {
        for j in 0..k {
            a[(i, j)] = 0.0;
        }
    }
    let mut b = DMatrix::from_fn(r, q, |_, _| rng.random_range(-2..=2) as f64);
    for i in k..r {
        for j in 0..q {
            b[(i, j)] = 0.0;
        }
    }
    // T = product of elementary operations; T⁻¹ applies their inverses in reverse.
    let mut t = DMatrix::<f64>::identity(r, r);
    let mut t_inv = DMatrix::<f64>::identity(r, r);
    for _ in 0..r {
        let (i, j) = (rng.random_range(0..r), rng.random_range(0..r));
        if i == j {
            continue;
        }
        let c = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut e = DMatrix::<f64>::identity(r, r);
        e[(i, j)] = c;
        let mut e_inv = DMatrix::<f64>::identity(r, r);
        e_inv[(i, j)] = -c;
        t = e * t;
        t_inv *= e_inv;
    }
    (&t * a * &t_inv, t * b)
}

/// CartPole schedule of improving skill: random actions, then PD with
/// decreasing action noise, then clean PD.
pub fn improving_cartpole_schedule() -> Vec<(u64, Policy)> {
    let gains = CartPoleGains::default();
    let noisy = |epsilon| Policy::CartPoleNoisyPd { gains, epsilon, seed: 11 };
    vec![
        (0, Policy::Random { seed: 11 }),
        (1, noisy(0.7)),
        (2, noisy(0.45)),
        (3, noisy(0.4)),
        (4, Policy::CartPolePd(gains)),
    ]
}

/// Clean PD at every checkpoint with a growing position gain: reward stays
/// at the cap while the closed loop becomes more damped.
pub fn damped_cartpole_schedule() -> Vec<(u64, Policy)> {
    [0.5, 1.0, 2.0, 3.0, 4.0]
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            (
                c as u64,
                Policy::CartPolePd(CartPoleGains {
                    position: k,
                    ..CartPoleGains::default()
                }),
            )
        })
        .collect()
}

pub fn static_cartpole_schedule() -> Vec<(u64, Policy)> {
    (0..5).map(|c| (c, Policy::CartPolePd(CartPoleGains::default()))).collect()
}

pub fn series(env: Env, schedule: &[(u64, Policy)], trials: usize, seeds: &[u64], max_steps: usize) -> Vec<TrajectorySet> {
    generate_skill_series(env, schedule, trials, seeds, max_steps).unwrap().collect()
}
