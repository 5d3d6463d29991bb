//! Gaussian quadrature rules and a small adaptive integrator.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights of an `n`-point rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Smallest Gauss-Hermite rule used by the node-doubling scheme.
pub const HERMITE_MIN_NODES: usize = 64;
/// Largest Gauss-Hermite rule; beyond this, integration reports non-convergence.
pub const HERMITE_MAX_NODES: usize = 4096;

const HERMITE_LEVELS: usize = 7; // 64, 128, ..., 4096

static HERMITE_CACHE: [OnceLock<Rule>; HERMITE_LEVELS] = [
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
];

/// Cached Gauss-Hermite rule for `n = 64 * 2^level` nodes.
pub fn hermite_level(level: usize) -> &'static Rule {
    assert!(level < HERMITE_LEVELS, "hermite level {level} out of range");
    HERMITE_CACHE[level].get_or_init(|| gauss_hermite(HERMITE_MIN_NODES << level))
}

pub fn hermite_levels() -> usize {
    HERMITE_LEVELS
}

/// Gauss-Hermite rule for the weight `exp(-x^2)` on the real line.
///
/// Nodes are the eigenvalues of the Jacobi matrix (implicit QL), polished by
/// Newton steps on the orthonormal Hermite recurrence. The recurrence is
/// rescaled on the fly so that large `n` does not overflow near the outer
/// nodes; weights that underflow come out as zero.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    const RESCALE: f64 = 1e150;
    let ln_rescale = RESCALE.ln();
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;

    // (p_n, p_{n-1}, log scale) at x
    let eval = |x: f64| -> (f64, f64, f64) {
        let mut p1 = pim4;
        let mut p2 = 0.0;
        let mut scale = 0.0;
        for j in 1..=n {
            let p3 = p2;
            p2 = p1;
            let jf = j as f64;
            p1 = x * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            if p1.abs() > RESCALE {
                p1 /= RESCALE;
                p2 /= RESCALE;
                scale += ln_rescale;
            }
        }
        (p1, p2, scale)
    };
    let weight = |x: f64| {
        let (_, p2, scale) = eval(x);
        // w = 1 / (n p_{n-1}^2)
        (-(nf.ln()) - 2.0 * (p2.abs().ln() + scale)).exp()
    };

    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..=n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    symmetric_tridiagonal_eigenvalues(&mut diag, &mut off);
    diag.sort_by(f64::total_cmp);

    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n / 2 {
        // symmetrize, then polish the positive node
        let mut z = 0.5 * (diag[n - 1 - i] - diag[i]);
        for _ in 0..3 {
            let (p1, p2, _) = eval(z);
            let dz = p1 / ((2.0 * nf).sqrt() * p2);
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let w = weight(z);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        weights[n / 2] = weight(0.0);
    }
    Rule { nodes, weights }
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with shifts.
///
/// `d` holds the diagonal and is overwritten with the eigenvalues; `e[i]`
/// couples rows `i` and `i + 1` (the last entry is ignored) and is destroyed.
fn symmetric_tridiagonal_eigenvalues(d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    if n < 2 {
        return;
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "QL iteration failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre_15() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(15))
}

fn gl_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let rule = legendre_15();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
}

/// Result of [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Adaptive bisection with a 15-point Gauss-Legendre panel on each piece.
///
/// A panel is accepted when the two-halves estimate differs from the
/// whole-panel estimate by less than `max(abs_tol, rel_tol * |panel|)`, scaled
/// to the panel's share of the interval.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Integral {
    if a == b {
        return Integral {
            value: 0.0,
            error: 0.0,
            converged: true,
        };
    }
    const MAX_DEPTH: u32 = 48;
    const MAX_PANELS: usize = 200_000;
    let total = b - a;
    let mut stack = vec![(a, b, gl_panel(&f, a, b), 0u32)];
    let mut value = 0.0;
    let mut error = 0.0;
    let mut converged = true;
    let mut panels = 0usize;
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        panels += 1;
        let mid = 0.5 * (lo + hi);
        let left = gl_panel(&f, lo, mid);
        let right = gl_panel(&f, mid, hi);
        let split = left + right;
        let diff = (split - whole).abs();
        let share = ((hi - lo) / total).abs();
        let tol = (abs_tol * share).max(rel_tol * split.abs());
        if diff <= tol || depth >= MAX_DEPTH || panels > MAX_PANELS {
            if diff > tol {
                converged = false;
            }
            value += split;
            error += diff;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    Integral {
        value,
        error,
        converged,
    }
}
