//! Primal-dual interior-point solver for small dense second-order cone
//! programs
//!
//! ```text
//!     minimize    c'x
//!     subject to  G x + s = h,   s in K
//! ```
//!
//! where `K` is a product of non-negative orthants and Lorentz cones
//! `{(t, u) : t >= |u|}`. The iteration runs on the homogeneous self-dual
//! embedding, so infeasible or unbounded problems end with a certificate
//! instead of diverging. Search directions use Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector; the reduced KKT system is solved through
//! its normal equations `G' W^-2 G` with a dense Cholesky factorisation.
//!
//! Each cone block only touches the columns of `G` it actually uses, which
//! keeps the normal-equation assembly cheap for block-sparse problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// `n` independent sign constraints.
    NonNeg(usize),
    /// One Lorentz cone of the given dimension (head plus tail).
    Soc(usize),
}

impl Cone {
    fn dim(self) -> usize {
        match self {
            Cone::NonNeg(n) | Cone::Soc(n) => n,
        }
    }

    fn degree(self) -> usize {
        match self {
            Cone::NonNeg(n) => n,
            Cone::Soc(_) => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConeProgram {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub cones: Vec<Cone>,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmSettings {
    pub max_iter: usize,
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings {
            max_iter: 100,
            feastol: 1e-8,
            abstol: 1e-8,
            reltol: 1e-8,
            step_fraction: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub status: IpmStatus,
    /// Primal point (or, for a dual-infeasibility certificate, the ray).
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    /// Dual point (or, for a primal-infeasibility certificate, the ray).
    pub z: DVector<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
}

struct Block {
    kind: Cone,
    start: usize,
    dim: usize,
    /// Columns of `G` with a nonzero in this block's rows.
    cols: Vec<usize>,
    /// `G[start..start+dim, cols]`.
    g: DMatrix<f64>,
    /// `g' g`, kept for second-order cone blocks.
    gtg: Option<DMatrix<f64>>,
}

#[derive(Clone)]
enum Scaling {
    NonNeg { d: Vec<f64> },
    Soc { beta: f64, v: Vec<f64> },
}

impl Scaling {
    fn identity(kind: Cone) -> Self {
        match kind {
            Cone::NonNeg(n) => Scaling::NonNeg { d: vec![1.0; n] },
            Cone::Soc(n) => {
                let mut v = vec![0.0; n];
                v[0] = 1.0;
                Scaling::Soc { beta: 1.0, v }
            }
        }
    }

    /// `W x`.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg { d } => {
                for i in 0..x.len() {
                    out[i] = d[i] * x[i];
                }
            }
            Scaling::Soc { beta, v } => {
                let vx = dot(v, x);
                out[0] = beta * (2.0 * v[0] * vx - x[0]);
                for i in 1..x.len() {
                    out[i] = beta * (2.0 * v[i] * vx + x[i]);
                }
            }
        }
    }

    /// `W^-1 x`. With `u = J v`, `W^-1 = (2 u u' - J) / beta`.
    fn apply_inv(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg { d } => {
                for i in 0..x.len() {
                    out[i] = x[i] / d[i];
                }
            }
            Scaling::Soc { beta, v } => {
                let ux = v[0] * x[0] - dot(&v[1..], &x[1..]);
                out[0] = (2.0 * v[0] * ux - x[0]) / beta;
                for i in 1..x.len() {
                    out[i] = (-2.0 * v[i] * ux + x[i]) / beta;
                }
            }
        }
    }

    /// `W^-1 X` for a block of columns.
    fn apply_inv_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Scaling::NonNeg { d } => {
                let mut out = x.clone();
                for (i, di) in d.iter().enumerate() {
                    out.row_mut(i).scale_mut(1.0 / di);
                }
                out
            }
            Scaling::Soc { beta, v } => {
                let mut u = DVector::from_column_slice(v);
                for ui in u.iter_mut().skip(1) {
                    *ui = -*ui;
                }
                let ux = x.tr_mul(&u);
                let mut out = &u * ux.transpose() * 2.0;
                for j in 0..x.ncols() {
                    out[(0, j)] -= x[(0, j)];
                    for i in 1..x.nrows() {
                        out[(i, j)] += x[(i, j)];
                    }
                }
                out / *beta
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn soc_det(x: &[f64]) -> f64 {
    let tail = norm(&x[1..]);
    (x[0] - tail) * (x[0] + tail)
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Nesterov-Todd scaling for interior `s`, `z`; `None` if either is not
/// strictly inside the cone.
fn nt_scaling(kind: Cone, s: &[f64], z: &[f64]) -> Option<Scaling> {
    match kind {
        Cone::NonNeg(_) => {
            if s.iter().chain(z).any(|&v| !(v > 0.0)) {
                return None;
            }
            Some(Scaling::NonNeg {
                d: s.iter().zip(z).map(|(a, b)| (a / b).sqrt()).collect(),
            })
        }
        Cone::Soc(n) => {
            let (sd, zd) = (soc_det(s), soc_det(z));
            if !(sd > 0.0 && zd > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
                return None;
            }
            let (sn, zn) = (sd.sqrt(), zd.sqrt());
            let sb: Vec<f64> = s.iter().map(|v| v / sn).collect();
            let zb: Vec<f64> = z.iter().map(|v| v / zn).collect();
            let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
            let mut wb = vec![0.0; n];
            wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
            for i in 1..n {
                wb[i] = (sb[i] - zb[i]) / (2.0 * gamma);
            }
            let denom = (2.0 * (wb[0] + 1.0)).sqrt();
            let mut v: Vec<f64> = wb.iter().map(|x| x / denom).collect();
            v[0] = (wb[0] + 1.0) / denom;
            Some(Scaling::Soc {
                beta: (sn / zn).sqrt(),
                v,
            })
        }
    }
}

/// Jordan product `a o b`.
fn circ(kind: Cone, a: &[f64], b: &[f64], out: &mut [f64]) {
    match kind {
        Cone::NonNeg(_) => {
            for i in 0..a.len() {
                out[i] = a[i] * b[i];
            }
        }
        Cone::Soc(_) => {
            out[0] = dot(a, b);
            for i in 1..a.len() {
                out[i] = a[0] * b[i] + b[0] * a[i];
            }
        }
    }
}

/// Solves `lambda o r = u` for `r`.
fn inv_circ(kind: Cone, lambda: &[f64], u: &[f64], out: &mut [f64]) {
    match kind {
        Cone::NonNeg(_) => {
            for i in 0..u.len() {
                out[i] = u[i] / lambda[i];
            }
        }
        Cone::Soc(_) => {
            let l0 = lambda[0];
            let det = soc_det(lambda);
            let r0 = (l0 * u[0] - dot(&lambda[1..], &u[1..])) / det;
            out[0] = r0;
            for i in 1..u.len() {
                out[i] = (u[i] - r0 * lambda[i]) / l0;
            }
        }
    }
}

/// Largest `alpha` with `x + alpha d` in the cone (`f64::INFINITY` if unbounded).
fn max_step(kind: Cone, x: &[f64], d: &[f64]) -> f64 {
    match kind {
        Cone::NonNeg(_) => x
            .iter()
            .zip(d)
            .filter(|(_, &di)| di < 0.0)
            .map(|(&xi, &di)| -xi / di)
            .fold(f64::INFINITY, f64::min),
        Cone::Soc(_) => {
            // (x0 + a d0)^2 - |x1 + a d1|^2 = qa a^2 + 2 qb a + qc
            let qa = d[0] * d[0] - dot(&d[1..], &d[1..]);
            let qb = x[0] * d[0] - dot(&x[1..], &d[1..]);
            let qc = soc_det(x).max(0.0);
            if qa.abs() <= 1e-300 {
                return if qb < 0.0 { -qc / (2.0 * qb) } else { f64::INFINITY };
            }
            let disc = qb * qb - qa * qc;
            if disc < 0.0 {
                return f64::INFINITY;
            }
            let q = -(qb + qb.signum() * disc.sqrt());
            let mut best = f64::INFINITY;
            for r in [q / qa, if q != 0.0 { qc / q } else { f64::INFINITY }] {
                if r > 0.0 && r < best {
                    best = r;
                }
            }
            // A zero root with the head moving outward is still a boundary hit.
            if qc == 0.0 && (qb < 0.0 || d[0] < 0.0) {
                best = 0.0;
            }
            best
        }
    }
}

/// Smallest `alpha` making `x + alpha e` lie in the cone; negative if `x`
/// is already interior.
fn boundary_shift(kind: Cone, x: &[f64]) -> f64 {
    match kind {
        Cone::NonNeg(_) => x.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max),
        Cone::Soc(_) => norm(&x[1..]) - x[0],
    }
}

fn add_identity(kind: Cone, x: &mut [f64], alpha: f64) {
    match kind {
        Cone::NonNeg(_) => x.iter_mut().for_each(|v| *v += alpha),
        Cone::Soc(_) => x[0] += alpha,
    }
}

struct Kkt {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// `W^-1 G_block` per block.
    scaled: Vec<DMatrix<f64>>,
}

pub struct Solver<'a> {
    prob: &'a ConeProgram,
    blocks: Vec<Block>,
    n: usize,
    m: usize,
    degree: usize,
    settings: IpmSettings,
}

impl<'a> Solver<'a> {
    pub fn new(prob: &'a ConeProgram, settings: IpmSettings) -> Self {
        let (m, n) = prob.g.shape();
        assert_eq!(prob.c.len(), n, "c length must match G columns");
        assert_eq!(prob.h.len(), m, "h length must match G rows");
        assert_eq!(
            prob.cones.iter().map(|c| c.dim()).sum::<usize>(),
            m,
            "cone dimensions must partition the rows of G"
        );
        let mut blocks = Vec::with_capacity(prob.cones.len());
        let mut start = 0;
        for &kind in &prob.cones {
            let dim = kind.dim();
            let rows = prob.g.rows(start, dim);
            let cols: Vec<usize> = (0..n)
                .filter(|&j| rows.column(j).iter().any(|&v| v != 0.0))
                .collect();
            let g = DMatrix::from_fn(dim, cols.len(), |i, j| rows[(i, cols[j])]);
            let gtg = matches!(kind, Cone::Soc(_)).then(|| g.tr_mul(&g));
            blocks.push(Block {
                kind,
                start,
                dim,
                cols,
                g,
                gtg,
            });
            start += dim;
        }
        Solver {
            prob,
            blocks,
            n,
            m,
            degree: prob.cones.iter().map(|c| c.degree()).sum(),
            settings,
        }
    }

    fn factor(&self, scalings: &[Scaling]) -> Option<Kkt> {
        let mut hmat = DMatrix::<f64>::zeros(self.n, self.n);
        let mut scaled = Vec::with_capacity(self.blocks.len());
        for (blk, sc) in self.blocks.iter().zip(scalings) {
            let b = sc.apply_inv_mat(&blk.g);
            match (sc, &blk.gtg) {
                // W^-2 = (4 |u|^2 u u' - 2 u v' - 2 v u' + I) / beta^2 with u = J v,
                // so only rank-one terms change between iterations.
                (Scaling::Soc { beta, v }, Some(gtg)) => {
                    let vv = DVector::from_column_slice(v);
                    let mut u = vv.clone();
                    u.iter_mut().skip(1).for_each(|x| *x = -*x);
                    let a = blk.g.tr_mul(&u);
                    let bv = blk.g.tr_mul(&vv);
                    let (w, uu) = (1.0 / (beta * beta), u.norm_squared());
                    for (j, &cj) in blk.cols.iter().enumerate() {
                        let (aj, bj) = (a[j], bv[j]);
                        for (i, &ci) in blk.cols.iter().enumerate() {
                            hmat[(ci, cj)] += w
                                * (gtg[(i, j)] + 4.0 * uu * a[i] * aj - 2.0 * (a[i] * bj + bv[i] * aj));
                        }
                    }
                }
                _ => {
                    let bb = b.tr_mul(&b);
                    for (a, &ca) in blk.cols.iter().enumerate() {
                        for (c, &cc) in blk.cols.iter().enumerate() {
                            hmat[(ca, cc)] += bb[(a, c)];
                        }
                    }
                }
            }
            scaled.push(b);
        }
        let max_diag = hmat.diagonal().iter().cloned().fold(0.0, f64::max).max(1.0);
        let mut reg = 1e-13 * max_diag;
        for _ in 0..6 {
            let mut reg_h = hmat.clone();
            for i in 0..self.n {
                reg_h[(i, i)] += reg;
            }
            if let Some(chol) = reg_h.cholesky() {
                return Some(Kkt { chol, scaled });
            }
            reg *= 100.0;
        }
        None
    }

    /// Solves `G' dz = r1`, `-G dx + W'W dz = r2`, with iterative
    /// refinement against the unreduced system.
    fn solve_kkt(
        &self,
        kkt: &Kkt,
        scalings: &[Scaling],
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let (mut dx, mut dz) = self.solve_reduced(kkt, scalings, r1, r2);
        let scale = r1.amax().max(r2.amax()).max(f64::MIN_POSITIVE);
        let mut tmp = Vec::new();
        let mut wwdz = DVector::zeros(self.m);
        for _ in 0..KKT_REFINE_STEPS {
            let e1 = r1 - self.prob.g.tr_mul(&dz);
            for (blk, sc) in self.blocks.iter().zip(scalings) {
                let r = blk.start..blk.start + blk.dim;
                tmp.resize(blk.dim, 0.0);
                sc.apply(&dz.as_slice()[r.clone()], &mut tmp);
                sc.apply(&tmp, &mut wwdz.as_mut_slice()[r]);
            }
            let e2 = r2 - (&wwdz - &self.prob.g * &dx);
            if e1.amax().max(e2.amax()) <= 1e-15 * scale {
                break;
            }
            let (cx, cz) = self.solve_reduced(kkt, scalings, &e1, &e2);
            dx += cx;
            dz += cz;
        }
        (dx, dz)
    }

    fn solve_reduced(
        &self,
        kkt: &Kkt,
        scalings: &[Scaling],
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let mut t = DVector::zeros(self.m);
        for (blk, sc) in self.blocks.iter().zip(scalings) {
            let range = blk.start..blk.start + blk.dim;
            sc.apply_inv(&r2.as_slice()[range.clone()], &mut t.as_mut_slice()[range]);
        }
        let mut rhs = r1.clone();
        for (blk, b) in self.blocks.iter().zip(&kkt.scaled) {
            let tb = b.tr_mul(&t.rows(blk.start, blk.dim));
            for (a, &col) in blk.cols.iter().enumerate() {
                rhs[col] -= tb[a];
            }
        }
        let dx = kkt.chol.solve(&rhs);
        let mut dz = DVector::zeros(self.m);
        let mut buf = Vec::new();
        for ((blk, b), sc) in self.blocks.iter().zip(&kkt.scaled).zip(scalings) {
            let xs = DVector::from_iterator(blk.cols.len(), blk.cols.iter().map(|&c| dx[c]));
            let bx = b * xs;
            buf.clear();
            buf.extend((0..blk.dim).map(|i| t[blk.start + i] + bx[i]));
            sc.apply_inv(&buf, &mut dz.as_mut_slice()[blk.start..blk.start + blk.dim]);
        }
        (dx, dz)
    }

    fn each_block<F: FnMut(&Block, std::ops::Range<usize>)>(&self, mut f: F) {
        for blk in &self.blocks {
            f(blk, blk.start..blk.start + blk.dim);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_length(
        &self,
        s: &DVector<f64>,
        ds: &DVector<f64>,
        z: &DVector<f64>,
        dz: &DVector<f64>,
        tau: f64,
        dtau: f64,
        kappa: f64,
        dkappa: f64,
    ) -> f64 {
        let mut alpha = f64::INFINITY;
        self.each_block(|blk, r| {
            alpha = alpha
                .min(max_step(blk.kind, &s.as_slice()[r.clone()], &ds.as_slice()[r.clone()]))
                .min(max_step(blk.kind, &z.as_slice()[r.clone()], &dz.as_slice()[r]));
        });
        if dtau < 0.0 {
            alpha = alpha.min(-tau / dtau);
        }
        if dkappa < 0.0 {
            alpha = alpha.min(-kappa / dkappa);
        }
        alpha
    }

    fn initial_point(&self) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let ident: Vec<Scaling> = self.blocks.iter().map(|b| Scaling::identity(b.kind)).collect();
        let kkt = self.factor(&ident)?;
        let zero_n = DVector::zeros(self.n);
        let zero_m = DVector::zeros(self.m);
        // x = argmin |G x - h|, s = h - G x.
        let (x, _) = self.solve_kkt(&kkt, &ident, &zero_n, &(-&self.prob.h));
        let mut s = &self.prob.h - &self.prob.g * &x;
        // z = argmin |z| subject to G' z + c = 0.
        let (_, mut z) = self.solve_kkt(&kkt, &ident, &(-&self.prob.c), &zero_m);
        for v in [&mut s, &mut z] {
            let mut shift = f64::NEG_INFINITY;
            self.each_block(|blk, r| {
                shift = shift.max(boundary_shift(blk.kind, &v.as_slice()[r]));
            });
            if shift >= -1e-8 {
                self.each_block(|blk, r| add_identity(blk.kind, &mut v.as_mut_slice()[r], 1.0 + shift.max(0.0)));
            }
        }
        Some((x, s, z))
    }

    pub fn solve(&self) -> IpmSolution {
        let prob = self.prob;
        let st = self.settings;
        let hnorm = prob.h.norm().max(1.0);
        let cnorm = prob.c.norm().max(1.0);

        let fail = |status, it| IpmSolution {
            status,
            x: DVector::zeros(self.n),
            s: DVector::zeros(self.m),
            z: DVector::zeros(self.m),
            primal_obj: f64::NAN,
            dual_obj: f64::NAN,
            iterations: it,
            primal_res: f64::NAN,
            dual_res: f64::NAN,
            gap: f64::NAN,
        };

        let Some((mut x, mut s, mut z)) = self.initial_point() else {
            return fail(IpmStatus::NumericalFailure, 0);
        };
        let (mut tau, mut kappa) = (1.0f64, 1.0f64);
        let mut lambda = DVector::zeros(self.m);
        let mut buf_a = vec![0.0; self.m];
        let mut buf_b = vec![0.0; self.m];

        // Best iterate seen, returned if the method breaks down later.
        let mut best: Option<(f64, IpmSolution)> = None;
        for iter in 0..=st.max_iter {
            let gx = &prob.g * &x;
            let gtz = prob.g.tr_mul(&z);
            let cx = prob.c.dot(&x);
            let hz = prob.h.dot(&z);
            let rx = &gtz + &prob.c * tau;
            let rz = &s + &gx - &prob.h * tau;
            let rt = kappa + cx + hz;
            let sz = s.dot(&z);
            let mu = (sz + tau * kappa) / (self.degree + 1) as f64;

            let pcost = cx / tau;
            let dcost = -hz / tau;
            let pres = rz.norm() / tau / hnorm;
            let dres = rx.norm() / tau / cnorm;
            let gap = sz / (tau * tau);
            let snapshot = |status| IpmSolution {
                status,
                x: &x / tau,
                s: &s / tau,
                z: &z / tau,
                primal_obj: pcost,
                dual_obj: dcost,
                iterations: iter,
                primal_res: pres,
                dual_res: dres,
                gap,
            };

            let merit = pres.max(dres).max(gap);
            if merit.is_finite() && best.as_ref().map_or(true, |b| merit < b.0) {
                best = Some((merit, snapshot(IpmStatus::NumericalFailure)));
            }
            if pres < st.feastol
                && dres < st.feastol
                && (gap < st.abstol || gap < st.reltol * pcost.abs().min(dcost.abs()))
            {
                return snapshot(IpmStatus::Optimal);
            }
            if hz < 0.0 && tau < kappa && gtz.norm() <= st.feastol * (-hz) {
                let mut sol = snapshot(IpmStatus::PrimalInfeasible);
                sol.z = &z / (-hz);
                return sol;
            }
            if cx < 0.0 && tau < kappa && (&gx + &s).norm() <= st.feastol * (-cx) {
                let mut sol = snapshot(IpmStatus::DualInfeasible);
                sol.x = &x / (-cx);
                sol.s = &s / (-cx);
                return sol;
            }
            if iter == st.max_iter {
                return give_up(IpmStatus::MaxIterations, best, || fail(IpmStatus::MaxIterations, iter));
            }

            // Scaling and lambda = W z.
            let mut scalings = Vec::with_capacity(self.blocks.len());
            for blk in &self.blocks {
                let r = blk.start..blk.start + blk.dim;
                let Some(sc) = nt_scaling(blk.kind, &s.as_slice()[r.clone()], &z.as_slice()[r.clone()]) else {
                    return give_up(IpmStatus::NumericalFailure, best, || fail(IpmStatus::NumericalFailure, iter));
                };
                sc.apply(&z.as_slice()[r.clone()], &mut lambda.as_mut_slice()[r]);
                scalings.push(sc);
            }
            let Some(kkt) = self.factor(&scalings) else {
                return give_up(IpmStatus::NumericalFailure, best, || fail(IpmStatus::NumericalFailure, iter));
            };
            let neg_c = -&prob.c;
            let neg_h = -&prob.h;
            let (x1, z1) = self.solve_kkt(&kkt, &scalings, &neg_c, &neg_h);
            let denom_base = -prob.c.dot(&x1) - prob.h.dot(&z1);

            // One Newton solve for a given residual weight and complementarity target.
            let newton = |sigma_w: f64, rs: &DVector<f64>, rkappa: f64| {
                let b1 = -&rx * sigma_w;
                let b2 = &rz * sigma_w;
                let b3 = rt * sigma_w;
                // W r_s
                let mut wrs = DVector::zeros(self.m);
                for (blk, sc) in self.blocks.iter().zip(&scalings) {
                    let r = blk.start..blk.start + blk.dim;
                    sc.apply(&rs.as_slice()[r.clone()], &mut wrs.as_mut_slice()[r]);
                }
                let (x2, z2) = self.solve_kkt(&kkt, &scalings, &b1, &(&b2 + &wrs));
                let dtau = (b3 + rkappa / tau + prob.c.dot(&x2) + prob.h.dot(&z2))
                    / (kappa / tau + denom_base);
                let dx = &x2 + &x1 * dtau;
                let dz = &z2 + &z1 * dtau;
                let dkappa = (rkappa - kappa * dtau) / tau;
                // ds = W (r_s - W dz)
                let mut ds = DVector::zeros(self.m);
                let mut tmp = Vec::new();
                for (blk, sc) in self.blocks.iter().zip(&scalings) {
                    let r = blk.start..blk.start + blk.dim;
                    tmp.resize(blk.dim, 0.0);
                    sc.apply(&dz.as_slice()[r.clone()], &mut tmp);
                    for (i, ti) in tmp.iter_mut().enumerate() {
                        *ti = rs[blk.start + i] - *ti;
                    }
                    sc.apply(&tmp, &mut ds.as_mut_slice()[r]);
                }
                (dx, ds, dz, dtau, dkappa)
            };

            // Predictor: r_s = -lambda.
            let rs_aff = -&lambda;
            let (_, ds_a, dz_a, dtau_a, dkappa_a) = newton(1.0, &rs_aff, -tau * kappa);
            let alpha_aff = self
                .step_length(&s, &ds_a, &z, &dz_a, tau, dtau_a, kappa, dkappa_a)
                .min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(1e-8, 1.0);

            // Corrector: r_s = lambda \ (sigma mu e - lambda o lambda - (W^-1 ds_a) o (W dz_a)).
            let mut rs = DVector::zeros(self.m);
            for (blk, sc) in self.blocks.iter().zip(&scalings) {
                let r = blk.start..blk.start + blk.dim;
                let d = blk.dim;
                let lam = &lambda.as_slice()[r.clone()];
                sc.apply_inv(&ds_a.as_slice()[r.clone()], &mut buf_a[..d]);
                sc.apply(&dz_a.as_slice()[r.clone()], &mut buf_b[..d]);
                let mut corr = vec![0.0; d];
                circ(blk.kind, &buf_a[..d], &buf_b[..d], &mut corr);
                let mut ll = vec![0.0; d];
                circ(blk.kind, lam, lam, &mut ll);
                let mut target = vec![0.0; d];
                for i in 0..d {
                    target[i] = -ll[i] - corr[i];
                }
                add_identity(blk.kind, &mut target, sigma * mu);
                inv_circ(blk.kind, lam, &target, &mut rs.as_mut_slice()[r]);
            }
            let rkappa = sigma * mu - tau * kappa - dtau_a * dkappa_a;
            let (dx, ds, dz, dtau, dkappa) = newton(1.0 - sigma, &rs, rkappa);
            let alpha_max = self.step_length(&s, &ds, &z, &dz, tau, dtau, kappa, dkappa);
            let alpha = (st.step_fraction * alpha_max).min(1.0);
            if alpha_max.is_nan() || !(alpha > 1e-12) {
                return give_up(IpmStatus::NumericalFailure, best, || fail(IpmStatus::NumericalFailure, iter));
            }

            x.axpy(alpha, &dx, 1.0);
            s.axpy(alpha, &ds, 1.0);
            z.axpy(alpha, &dz, 1.0);
            tau += alpha * dtau;
            kappa += alpha * dkappa;
            if !(tau > 0.0 && kappa > 0.0) || !x.iter().all(|v| v.is_finite()) {
                return give_up(IpmStatus::NumericalFailure, best, || fail(IpmStatus::NumericalFailure, iter));
            }
        }
        unreachable!("loop returns at max_iter")
    }
}

fn give_up(
    status: IpmStatus,
    best: Option<(f64, IpmSolution)>,
    fallback: impl FnOnce() -> IpmSolution,
) -> IpmSolution {
    let mut sol = best.map_or_else(fallback, |b| b.1);
    sol.status = status;
    sol
}

const KKT_REFINE_STEPS: usize = 2;

pub fn solve(prob: &ConeProgram, settings: IpmSettings) -> IpmSolution {
    Solver::new(prob, settings).solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn prog(c: &[f64], g: &[&[f64]], h: &[f64], cones: Vec<Cone>) -> ConeProgram {
        let m = g.len();
        let n = c.len();
        ConeProgram {
            c: DVector::from_column_slice(c),
            g: DMatrix::from_fn(m, n, |i, j| g[i][j]),
            h: DVector::from_column_slice(h),
            cones,
        }
    }

    #[test]
    fn scaling_maps_z_to_lambda_and_s_to_lambda() {
        let s = [3.0, 1.0, -0.5, 0.2];
        let z = [2.0, -0.3, 0.4, 1.1];
        let sc = nt_scaling(Cone::Soc(4), &s, &z).unwrap();
        let mut wz = [0.0; 4];
        let mut winv_s = [0.0; 4];
        sc.apply(&z, &mut wz);
        sc.apply_inv(&s, &mut winv_s);
        for i in 0..4 {
            assert_relative_eq!(wz[i], winv_s[i], epsilon = 1e-12);
        }
        let mut back = [0.0; 4];
        sc.apply(&winv_s, &mut back);
        for i in 0..4 {
            assert_relative_eq!(back[i], s[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_jordan_product() {
        let lam = [2.0, 0.5, -0.7];
        let u = [1.0, 3.0, -2.0];
        let mut r = [0.0; 3];
        inv_circ(Cone::Soc(3), &lam, &u, &mut r);
        let mut back = [0.0; 3];
        circ(Cone::Soc(3), &lam, &r, &mut back);
        for i in 0..3 {
            assert_relative_eq!(back[i], u[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let a = max_step(Cone::Soc(2), &[1.0, 0.0], &[0.0, 1.0]);
        assert_relative_eq!(a, 1.0, epsilon = 1e-14);
        let a = max_step(Cone::Soc(2), &[1.0, 0.0], &[1.0, 0.5]);
        assert!(a.is_infinite());
        let a = max_step(Cone::Soc(3), &[2.0, 1.0, 0.0], &[-1.0, 0.0, 0.0]);
        assert_relative_eq!(a, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn linear_program() {
        // min -x - y  s.t. x + y <= 1, x, y >= 0  -> optimum -1
        let p = prog(
            &[-1.0, -1.0],
            &[&[1.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]],
            &[1.0, 0.0, 0.0],
            vec![Cone::NonNeg(3)],
        );
        let sol = solve(&p, IpmSettings::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        assert_relative_eq!(sol.primal_obj, -1.0, epsilon = 1e-7);
    }

    #[test]
    fn norm_ball_projection() {
        // min c'x s.t. |x| <= 1  -> x = -c/|c|
        let p = prog(
            &[3.0, -4.0],
            &[&[0.0, 0.0], &[-1.0, 0.0], &[0.0, -1.0]],
            &[1.0, 0.0, 0.0],
            vec![Cone::Soc(3)],
        );
        let sol = solve(&p, IpmSettings::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        assert_relative_eq!(sol.primal_obj, -5.0, epsilon = 1e-7);
        assert_relative_eq!(sol.x[0], -0.6, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], 0.8, epsilon = 1e-6);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 2 and |x| <= 1
        let p = prog(
            &[1.0],
            &[&[-1.0], &[0.0], &[-1.0]],
            &[-2.0, 1.0, 0.0],
            vec![Cone::NonNeg(1), Cone::Soc(2)],
        );
        let sol = solve(&p, IpmSettings::default());
        assert_eq!(sol.status, IpmStatus::PrimalInfeasible);
    }

    #[test]
    fn detects_unboundedness() {
        // min -x s.t. x >= 0
        let p = prog(&[-1.0], &[&[-1.0]], &[0.0], vec![Cone::NonNeg(1)]);
        let sol = solve(&p, IpmSettings::default());
        assert_eq!(sol.status, IpmStatus::DualInfeasible);
    }

    #[test]
    fn mixed_cones_match_closed_form() {
        // min t s.t. |(x - 1, y - 2)| <= t, x + y <= 1: distance from (1,2) to
        // the half-plane is 2/sqrt(2).
        let p = prog(
            &[0.0, 0.0, 1.0],
            &[
                &[1.0, 1.0, 0.0],
                &[0.0, 0.0, -1.0],
                &[-1.0, 0.0, 0.0],
                &[0.0, -1.0, 0.0],
            ],
            &[1.0, 0.0, -1.0, -2.0],
            vec![Cone::NonNeg(1), Cone::Soc(3)],
        );
        let sol = solve(&p, IpmSettings::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        assert_relative_eq!(sol.primal_obj, 2f64.sqrt(), epsilon = 1e-7);
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-6);
    }
}
