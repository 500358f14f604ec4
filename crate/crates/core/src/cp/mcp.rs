use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolveStatus};
use crate::error::{Error, Result};

/// Residual map of an MCP with its Jacobian.
pub trait McpFunction {
    fn dim(&self) -> usize;
    fn eval(&self, z: &DVector<f64>, out: &mut DVector<f64>);
    /// Defaults to central differences.
    fn jacobian(&self, z: &DVector<f64>, out: &mut DMatrix<f64>) {
        *out = finite_difference_jacobian(self, z, 1e-7);
    }
}

/// Wraps closures as an [`McpFunction`].
pub struct FnMcp<E, J = fn(&DVector<f64>, &mut DMatrix<f64>)> {
    n: usize,
    eval: E,
    jac: Option<J>,
}

impl<E> FnMcp<E>
where
    E: Fn(&DVector<f64>, &mut DVector<f64>),
{
    pub fn new(n: usize, eval: E) -> Self {
        Self { n, eval, jac: None }
    }
}

impl<E, J> FnMcp<E, J>
where
    E: Fn(&DVector<f64>, &mut DVector<f64>),
    J: Fn(&DVector<f64>, &mut DMatrix<f64>),
{
    pub fn with_jacobian(n: usize, eval: E, jac: J) -> Self {
        Self {
            n,
            eval,
            jac: Some(jac),
        }
    }
}

impl<E, J> McpFunction for FnMcp<E, J>
where
    E: Fn(&DVector<f64>, &mut DVector<f64>),
    J: Fn(&DVector<f64>, &mut DMatrix<f64>),
{
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        (self.eval)(z, out)
    }

    fn jacobian(&self, z: &DVector<f64>, out: &mut DMatrix<f64>) {
        match &self.jac {
            Some(j) => j(z, out),
            None => *out = finite_difference_jacobian(self, z, 1e-7),
        }
    }
}

pub fn finite_difference_jacobian<F: McpFunction + ?Sized>(
    f: &F,
    z: &DVector<f64>,
    step: f64,
) -> DMatrix<f64> {
    let n = f.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut zp = z.clone();
    let mut fp = DVector::zeros(n);
    let mut fm = DVector::zeros(n);
    for c in 0..n {
        let h = step * z[c].abs().max(1.0);
        zp[c] = z[c] + h;
        f.eval(&zp, &mut fp);
        zp[c] = z[c] - h;
        f.eval(&zp, &mut fm);
        zp[c] = z[c];
        jac.set_column(c, &((&fp - &fm) / (2.0 * h)));
    }
    jac
}

/// `ℓ ≤ z ≤ u ⊥ F(z)`.
pub struct McpProblem<F> {
    pub function: F,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl<F: McpFunction> McpProblem<F> {
    pub fn new(function: F, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let n = function.dim();
        if lower.len() != n || upper.len() != n {
            return Err(Error::InvalidInput("MCP bound dimensions disagree".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(Error::InvalidInput("MCP bounds need lower ≤ upper".into()));
        }
        Ok(Self {
            function,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.function.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal damping added when the Newton system is singular.
    pub regularization: f64,
    /// Retry along a smoothing path when plain semismooth Newton stalls.
    pub smoothing: bool,
}

impl Default for McpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            regularization: 1e-8,
            smoothing: true,
        }
    }
}

/// `‖z − mid(ℓ, z − F(z), u)‖∞`.
pub fn mcp_residual<F: McpFunction>(p: &McpProblem<F>, z: &DVector<f64>) -> f64 {
    let mut f = DVector::zeros(p.dim());
    p.function.eval(z, &mut f);
    natural_residual(p, z, &f)
}

fn natural_residual<F>(p: &McpProblem<F>, z: &DVector<f64>, f: &DVector<f64>) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..z.len() {
        let mid = (z[i] - f[i]).max(p.lower[i]).min(p.upper[i]);
        let d = (z[i] - mid).abs();
        if d.is_nan() {
            return f64::INFINITY;
        }
        r = r.max(d);
    }
    r
}

/// Smoothed Fischer–Burmeister function and its partials.
fn fb(a: f64, b: f64, mu: f64) -> (f64, f64, f64) {
    let r = (a * a + b * b + 2.0 * mu * mu).sqrt();
    if r == 0.0 {
        let c = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        return (0.0, c, c);
    }
    (a + b - r, 1.0 - a / r, 1.0 - b / r)
}

struct Reformulation<'a, F> {
    p: &'a McpProblem<F>,
    f: DVector<f64>,
    jf: DMatrix<f64>,
}

impl<'a, F: McpFunction> Reformulation<'a, F> {
    fn new(p: &'a McpProblem<F>) -> Self {
        let n = p.dim();
        Self {
            p,
            f: DVector::zeros(n),
            jf: DMatrix::zeros(n, n),
        }
    }

    /// Φ_μ(z) and, optionally, an element of its generalized Jacobian.
    fn phi(&mut self, z: &DVector<f64>, mu: f64, want_jac: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let n = z.len();
        self.p.function.eval(z, &mut self.f);
        if want_jac {
            self.p.function.jacobian(z, &mut self.jf);
        }
        let mut phi = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let (l, u, fi) = (self.p.lower[i], self.p.upper[i], self.f[i]);
            match (l.is_finite(), u.is_finite()) {
                (false, false) => {
                    phi[i] = fi;
                    d[i] = 1.0;
                }
                (true, false) => {
                    let (v, da, db) = fb(z[i] - l, fi, mu);
                    phi[i] = v;
                    c[i] = da;
                    d[i] = db;
                }
                (false, true) => {
                    let (v, da, db) = fb(u - z[i], -fi, mu);
                    phi[i] = -v;
                    c[i] = da;
                    d[i] = db;
                }
                (true, true) => {
                    let (g, da2, db2) = fb(u - z[i], -fi, mu);
                    let (v, da1, db1) = fb(z[i] - l, -g, mu);
                    phi[i] = v;
                    c[i] = da1 + db1 * da2;
                    d[i] = db1 * db2;
                }
            }
        }
        let jac = want_jac.then(|| {
            let mut j = DMatrix::zeros(n, n);
            for r in 0..n {
                for col in 0..n {
                    j[(r, col)] = d[r] * self.jf[(r, col)];
                }
                j[(r, r)] += c[r];
            }
            j
        });
        (phi, jac)
    }
}

/// Semismooth Newton on the Fischer–Burmeister reformulation with Armijo
/// line search on ½‖Φ‖². When the plain iteration stalls (typically at
/// degenerate complementary pairs) a smoothing continuation is run from the
/// best iterate.
pub fn solve_mcp<F: McpFunction>(p: &McpProblem<F>, z0: &DVector<f64>, opts: &McpOptions) -> SolveReport {
    let n = p.dim();
    let mut z = z0.clone();
    for i in 0..n {
        if !z[i].is_finite() {
            z[i] = 0.0;
        }
        z[i] = z[i].max(p.lower[i]).min(p.upper[i]);
    }
    let mut state = Reformulation::new(p);
    let mut best = Best::new(p, &z, &mut state);
    if best.residual <= opts.tol {
        return best.report(0, opts.tol, false);
    }

    let mut iterations = 0;
    let mut singular = false;
    newton_phase(p, &mut state, &mut z, 0.0, opts.max_iter, opts, &mut best, &mut iterations, &mut singular, None);
    if best.residual > opts.tol && opts.smoothing {
        let mut z = best.z.clone();
        let mut mu = (0.1 * best.residual).clamp(1e-10, 1e-2);
        while mu > 1e-13 && best.residual > opts.tol {
            newton_phase(p, &mut state, &mut z, mu, 20, opts, &mut best, &mut iterations, &mut singular, Some(mu));
            mu *= 0.1;
        }
        if best.residual > opts.tol {
            let mut z = best.z.clone();
            newton_phase(p, &mut state, &mut z, 0.0, opts.max_iter, opts, &mut best, &mut iterations, &mut singular, None);
        }
    }
    best.report(iterations, opts.tol, singular)
}

struct Best {
    z: DVector<f64>,
    residual: f64,
}

impl Best {
    fn new<F: McpFunction>(p: &McpProblem<F>, z: &DVector<f64>, state: &mut Reformulation<F>) -> Self {
        state.p.function.eval(z, &mut state.f);
        Self {
            z: z.clone(),
            residual: natural_residual(p, z, &state.f),
        }
    }

    fn offer(&mut self, z: &DVector<f64>, residual: f64) {
        if residual < self.residual {
            self.residual = residual;
            self.z.copy_from(z);
        }
    }

    fn report(self, iterations: usize, tol: f64, singular: bool) -> SolveReport {
        let status = if self.residual <= tol {
            SolveStatus::Converged
        } else if singular || !self.residual.is_finite() {
            SolveStatus::Singular
        } else {
            SolveStatus::MaxIter
        };
        SolveReport {
            z: self.z,
            residual: self.residual,
            iterations,
            status,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn newton_phase<F: McpFunction>(
    p: &McpProblem<F>,
    state: &mut Reformulation<F>,
    z: &mut DVector<f64>,
    mu: f64,
    max_iter: usize,
    opts: &McpOptions,
    best: &mut Best,
    iterations: &mut usize,
    singular: &mut bool,
    smoothing_target: Option<f64>,
) {
    let n = z.len();
    for _ in 0..max_iter {
        let (phi, jac) = state.phi(z, mu, true);
        let residual = natural_residual(p, z, &state.f);
        best.offer(z, residual);
        if best.residual <= opts.tol {
            return;
        }
        if let Some(target) = smoothing_target {
            if phi.amax() <= target {
                return;
            }
        }
        let jac = jac.expect("jacobian requested");
        let merit = 0.5 * phi.norm_squared();
        let grad = jac.tr_mul(&phi);

        let mut dir = jac
            .clone()
            .lu()
            .solve(&(-&phi))
            .filter(|d| d.iter().all(|x| x.is_finite()));
        let descent_ok = |d: &DVector<f64>| grad.dot(d) <= -1e-12 * d.norm_squared();
        if !dir.as_ref().is_some_and(&descent_ok) {
            let scale = jac.diagonal().amax().max(1.0);
            let mut lambda = opts.regularization * scale * scale;
            let jtj = jac.tr_mul(&jac);
            dir = None;
            for _ in 0..8 {
                let mut a = jtj.clone();
                for i in 0..n {
                    a[(i, i)] += lambda;
                }
                if let Some(d) = a.cholesky().map(|c| c.solve(&(-&grad))) {
                    if d.iter().all(|x| x.is_finite()) && descent_ok(&d) {
                        dir = Some(d);
                        break;
                    }
                }
                lambda *= 100.0;
            }
            if dir.is_none() {
                *singular = true;
                dir = Some(-&grad);
            }
        }
        let dir = dir.expect("direction chosen");
        if dir.amax() == 0.0 {
            return;
        }

        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut accepted = false;
        let mut trial = z.clone();
        while t > 1e-12 {
            trial.copy_from(z);
            trial.axpy(t, &dir, 1.0);
            let (phi_t, _) = state.phi(&trial, mu, false);
            let m = 0.5 * phi_t.norm_squared();
            if m.is_finite() && m <= merit + 1e-4 * t * slope {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        *iterations += 1;
        if !accepted {
            // Line search failed: keep the best point seen and stop this phase.
            return;
        }
        z.copy_from(&trial);
    }
    state.p.function.eval(z, &mut state.f);
    let residual = natural_residual(p, z, &state.f);
    best.offer(z, residual);
}
