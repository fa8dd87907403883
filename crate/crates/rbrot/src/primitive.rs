//! Explicit desk-scale solver for the scaled compressible NSF system:
//! pressure gradient at 1/eps^2, gravity and centrifugal forcing at
//! 1/eps, Coriolis force at 2/sqrt(eps), viscous stress and Fourier
//! flux unscaled, and the eps^2-weighted dissipation in the internal
//! energy balance.
//!
//! Discretization: collocated cell-centered conserved variables
//! (rho, rho u, rho e) with MUSCL/Rusanov convective fluxes, analytic
//! gravity/centrifugal gradients, one-sided second-order pressure
//! gradients at walls, compact face-based diffusion, SSP-RK2 in time.
//! The collocated arrangement keeps the Coriolis force exactly
//! orthogonal to the velocity cell by cell, and the conservative
//! fluxes with impermeable walls conserve total mass to rounding.
//!
//! The dissipation speed in the Rusanov flux is the full acoustic speed
//! c/eps for the mass and energy jumps (which are O(eps) for
//! well-prepared data) but only the material speed |u| + c for the
//! momentum jumps; an acoustic speed there would flood the velocity
//! field with O(h^2 c / eps) diffusion at small eps.

use crate::error::{Error, Result};
use crate::field::{BoundaryFn, BoundaryKind, ScalarField, FACES};
use crate::grid::GridSpec;
use crate::limit::recover_r;
use crate::ops::MacVel2;
use crate::thermo::EosSpec;

/// Fixed parameters of a primitive-system run.
#[derive(Clone)]
pub struct PrimitiveParams {
    /// Scaling parameter in (0, 1].
    pub eps: f64,
    pub eos: EosSpec,
    pub background: crate::thermo::BackgroundState,
    pub grid: GridSpec,
    pub g_vec: [f64; 3],
    /// Boundary temperature deviation: the wall holds theta_bar + eps * theta_boundary.
    pub theta_boundary: BoundaryFn,
    /// Acoustic CFL number in (0, 1).
    pub cfl: f64,
    pub t_final: f64,
    /// Test hook: disables the centrifugal |x_h|^2/2 part of the potential.
    pub include_centrifugal: bool,
}

impl PrimitiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::Config(format!("eps must lie in (0,1], got {}", self.eps)));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0,1), got {}", self.cfl)));
        }
        if !(self.t_final >= 0.0) {
            return Err(Error::Config(format!("t_final must be >= 0, got {}", self.t_final)));
        }
        Ok(())
    }

    fn grad_potential(&self, x: f64, y: f64) -> [f64; 3] {
        let c = if self.include_centrifugal { 1.0 } else { 0.0 };
        [self.g_vec[0] + c * x, self.g_vec[1] + c * y, self.g_vec[2]]
    }

    fn theta_wall(&self, x: f64, y: f64, z: f64) -> f64 {
        self.background.theta_bar + self.eps * (self.theta_boundary)(x, y, z)
    }

    /// The zero-mean potential this run forces with.
    pub fn potential(&self) -> ScalarField {
        let c = if self.include_centrifugal { 1.0 } else { 0.0 };
        let g = self.grid;
        let gv = self.g_vec;
        let mut f = ScalarField::from_fn(g, |x, y, z| {
            gv[0] * x + gv[1] * y + gv[2] * z + c * 0.5 * (x * x + y * y)
        });
        let mean = crate::ops::domain_average(&f);
        for v in f.values.iter_mut() {
            *v -= mean;
        }
        f
    }
}

/// Conserved unknowns plus the recovered temperature.
#[derive(Clone)]
pub struct PrimitiveState {
    pub grid: GridSpec,
    pub rho: Vec<f64>,
    /// Cell-centered momentum components rho u.
    pub mom: [Vec<f64>; 3],
    /// rho e (internal energy density).
    pub e_int: Vec<f64>,
    /// Temperature recovered from e(rho, theta) = e_int / rho.
    pub theta: Vec<f64>,
    pub t: f64,
}

impl PrimitiveState {
    pub fn total_mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn velocity(&self, idx: usize) -> [f64; 3] {
        [
            self.mom[0][idx] / self.rho[idx],
            self.mom[1][idx] / self.rho[idx],
            self.mom[2][idx] / self.rho[idx],
        ]
    }

    pub fn kinetic_energy(&self) -> f64 {
        let vol = self.grid.cell_volume();
        let mut s = 0.0;
        for i in 0..self.rho.len() {
            let m2 = self.mom[0][i] * self.mom[0][i]
                + self.mom[1][i] * self.mom[1][i]
                + self.mom[2][i] * self.mom[2][i];
            s += 0.5 * m2 / self.rho[i];
        }
        s * vol
    }

    pub fn internal_energy_total(&self) -> f64 {
        self.e_int.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Scalar view of a component with wall boundary kinds, for the
    /// generic field operators.
    pub fn scalar_field(&self, values: &[f64]) -> ScalarField {
        let mut f = ScalarField::zeros(self.grid);
        f.values.copy_from_slice(values);
        for face in FACES {
            f.set_bc(face, BoundaryKind::Wall);
        }
        f
    }
}

/// Recover theta from the internal energy by guarded Newton iteration;
/// e(rho, .) is strictly increasing under thermodynamic stability.
fn solve_theta(eos: &EosSpec, rho: f64, e_spec: f64, guess: f64) -> Result<f64> {
    if !(e_spec > 0.0) || !(rho > 0.0) {
        return Err(Error::Positivity(format!(
            "cannot invert energy: rho = {rho}, e = {e_spec}"
        )));
    }
    let mut theta = guess.max(1e-10);
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for _ in 0..100 {
        let e = eos.internal_energy(rho, theta)?;
        let diff = e - e_spec;
        if diff.abs() <= 1e-12 * e_spec.abs().max(1e-300) {
            return Ok(theta);
        }
        if diff > 0.0 {
            hi = hi.min(theta);
        } else {
            lo = lo.max(theta);
        }
        let de = eos.energy_dtheta(rho, theta)?;
        let mut next = theta - diff / de;
        if !(next > lo) || !(next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * theta };
        }
        theta = next;
    }
    Err(Error::SolverDiverged(format!(
        "temperature inversion stalled at rho = {rho}, e = {e_spec}"
    )))
}

pub fn recover_theta(state: &mut PrimitiveState, eos: &EosSpec) -> Result<()> {
    for i in 0..state.rho.len() {
        if !(state.rho[i] > 0.0) {
            return Err(Error::Positivity(format!(
                "density {} at cell {i}, t = {}",
                state.rho[i], state.t
            )));
        }
        let e_spec = state.e_int[i] / state.rho[i];
        let th = solve_theta(eos, state.rho[i], e_spec, state.theta[i])?;
        if !(th > 0.0) {
            return Err(Error::Positivity(format!(
                "temperature {th} at cell {i}, t = {}",
                state.t
            )));
        }
        state.theta[i] = th;
    }
    Ok(())
}

/// Well-prepared data: rho0 = rho_bar + eps R0 with R0 from the
/// Boussinesq recovery of T0 (zero mean), theta0 = theta_bar + eps T0,
/// u0 = (u0h, 0) sampled at cell centers.
pub fn well_prepared_init(
    params: &PrimitiveParams,
    t0: impl Fn(f64, f64, f64) -> f64,
    u0h: impl Fn(f64, f64) -> (f64, f64),
) -> Result<PrimitiveState> {
    params.validate()?;
    let g = params.grid;
    let bg = &params.background;
    let mut t0_field = ScalarField::from_fn(g, &t0);
    for face in FACES {
        t0_field.set_bc(face, BoundaryKind::Dirichlet(params.theta_boundary.clone()));
    }
    let potential = params.potential();
    let r0 = recover_r(&t0_field, bg, &potential);

    let n = g.cell_count();
    let mut state = PrimitiveState {
        grid: g,
        rho: vec![0.0; n],
        mom: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        e_int: vec![0.0; n],
        theta: vec![0.0; n],
        t: 0.0,
    };
    for k in 0..g.nz {
        for j in 0..g.ny {
            for i in 0..g.nx {
                let idx = g.idx(i, j, k);
                let rho = bg.rho_bar + params.eps * r0.values[idx];
                let theta = bg.theta_bar + params.eps * t0_field.values[idx];
                if !(rho > 0.0) || !(theta > 0.0) {
                    return Err(Error::InvalidScaling(format!(
                        "eps = {} too large: rho0 = {rho}, theta0 = {theta} at cell ({i},{j},{k})",
                        params.eps
                    )));
                }
                let (ux, uy) = u0h(g.xc(i), if g.is_slab() { 0.0 } else { g.yc(j) });
                state.rho[idx] = rho;
                state.mom[0][idx] = rho * ux;
                state.mom[1][idx] = rho * uy;
                state.mom[2][idx] = 0.0;
                state.theta[idx] = theta;
                state.e_int[idx] = rho * params.eos.internal_energy(rho, theta)?;
            }
        }
    }
    Ok(state)
}

/// Time derivative of the conserved variables.
pub struct Tendency {
    pub rho: Vec<f64>,
    pub mom: [Vec<f64>; 3],
    pub e_int: Vec<f64>,
}

impl Tendency {
    pub fn max_momentum(&self) -> f64 {
        self.mom
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

struct Padded {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Padded {
    fn new(g: &GridSpec) -> Self {
        Padded {
            nx: g.nx,
            ny: g.ny,
            data: vec![0.0; (g.nx + 2) * (g.ny + 2) * (g.nz + 2)],
        }
    }

    #[inline]
    fn idx(&self, i: isize, j: isize, k: isize) -> usize {
        ((i + 1) as usize) + (self.nx + 2) * (((j + 1) as usize) + (self.ny + 2) * ((k + 1) as usize))
    }

    #[inline]
    fn at(&self, i: isize, j: isize, k: isize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    fn set(&mut self, i: isize, j: isize, k: isize, v: f64) {
        let idx = self.idx(i, j, k);
        self.data[idx] = v;
    }
}

/// Ghost-padded primitive variables honoring no-slip lateral walls,
/// complete-slip horizontal walls, and Dirichlet temperature.
struct GhostVars {
    u: [Padded; 3],
    theta: Padded,
}

fn build_ghosts(state: &PrimitiveState, params: &PrimitiveParams) -> GhostVars {
    let g = state.grid;
    let (nx, ny, nz) = (g.nx as isize, g.ny as isize, g.nz as isize);
    let mut u = [Padded::new(&g), Padded::new(&g), Padded::new(&g)];
    let mut theta = Padded::new(&g);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = g.idx(i as usize, j as usize, k as usize);
                let r = state.rho[idx];
                for c in 0..3 {
                    u[c].set(i, j, k, state.mom[c][idx] / r);
                }
                theta.set(i, j, k, state.theta[idx]);
            }
        }
    }
    // x walls: no slip, theta Dirichlet
    for k in 0..nz {
        for j in 0..ny {
            let (yc, zc) = (g.yc(j as usize), g.zc(k as usize));
            for (ghost, inner, xw) in [(-1isize, 0isize, g.xf(0)), (nx, nx - 1, g.xf(g.nx))] {
                for c in 0..3 {
                    let v = u[c].at(inner, j, k);
                    u[c].set(ghost, j, k, -v);
                }
                let tb = params.theta_wall(xw, yc, zc);
                theta.set(ghost, j, k, 2.0 * tb - theta.at(inner, j, k));
            }
        }
    }
    // y: slab invariance (copy) or no-slip walls
    for k in 0..nz {
        for i in -1..=nx {
            if g.is_slab() {
                for c in 0..3 {
                    let v = u[c].at(i, 0, k);
                    u[c].set(i, -1, k, v);
                    u[c].set(i, ny, k, v);
                }
                let tv = theta.at(i, 0, k);
                theta.set(i, -1, k, tv);
                theta.set(i, ny, k, tv);
            } else {
                if i < 0 || i >= nx {
                    continue;
                }
                let (xc, zc) = (g.xc(i as usize), g.zc(k as usize));
                for (ghost, inner, yw) in [(-1isize, 0isize, g.yf(0)), (ny, ny - 1, g.yf(g.ny))] {
                    for c in 0..3 {
                        let v = u[c].at(i, inner, k);
                        u[c].set(i, ghost, k, -v);
                    }
                    let tb = params.theta_wall(xc, yw, zc);
                    theta.set(i, ghost, k, 2.0 * tb - theta.at(i, inner, k));
                }
            }
        }
    }
    // z walls: complete slip (tangential copy, normal reflect), theta Dirichlet
    for j in -1..=ny {
        for i in -1..=nx {
            if (i < 0 || i >= nx) && (j < 0 || j >= ny) {
                continue;
            }
            let ii = i.clamp(0, nx - 1) as usize;
            let jj = j.clamp(0, ny - 1) as usize;
            let (xc, yc) = (g.xc(ii), g.yc(jj));
            for (ghost, inner, zw) in [(-1isize, 0isize, g.zf(0)), (nz, nz - 1, g.zf(g.nz))] {
                let u1 = u[0].at(i, j, inner);
                let u2 = u[1].at(i, j, inner);
                let u3 = u[2].at(i, j, inner);
                u[0].set(i, j, ghost, u1);
                u[1].set(i, j, ghost, u2);
                u[2].set(i, j, ghost, -u3);
                let tb = params.theta_wall(xc, yc, zw);
                theta.set(i, j, ghost, 2.0 * tb - theta.at(i, j, inner));
            }
        }
    }
    GhostVars { u, theta }
}

#[inline]
fn van_leer_slope(a: f64, b: f64) -> f64 {
    if a * b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// Evaluate the full right-hand side of the scaled system.
pub fn rhs(state: &PrimitiveState, params: &PrimitiveParams) -> Result<Tendency> {
    let g = state.grid;
    let (nx, ny, nz) = (g.nx, g.ny, g.nz);
    let n = g.cell_count();
    let eps = params.eps;
    let hs = [g.dx(), g.dy(), g.dz()];
    let mut out = Tendency {
        rho: vec![0.0; n],
        mom: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        e_int: vec![0.0; n],
    };

    // pressure and sound speed at cells
    let mut p = vec![0.0; n];
    let mut cs = vec![0.0; n];
    for i in 0..n {
        p[i] = params.eos.pressure(state.rho[i], state.theta[i])?;
        cs[i] = params.eos.sound_speed_sq(state.rho[i], state.theta[i])?.sqrt();
    }

    let ghosts = build_ghosts(state, params);

    // ---------------- convective fluxes (interior faces only) ----------
    let dirs: [(usize, [isize; 3]); 3] = [(0, [1, 0, 0]), (1, [0, 1, 0]), (2, [0, 0, 1])];
    for (axis, dvec) in dirs {
        if axis == 1 && g.is_slab() {
            continue;
        }
        let h = hs[axis];
        let m_ax = [nx, ny, nz][axis];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let ax_idx = [i, j, k][axis];
                    if ax_idx + 1 >= m_ax {
                        continue;
                    }
                    let idx_l = g.idx(i, j, k);
                    let idx_r = g.idx(
                        (i as isize + dvec[0]) as usize,
                        (j as isize + dvec[1]) as usize,
                        (k as isize + dvec[2]) as usize,
                    );
                    let idx_ll = if ax_idx >= 1 {
                        Some(g.idx(
                            (i as isize - dvec[0]) as usize,
                            (j as isize - dvec[1]) as usize,
                            (k as isize - dvec[2]) as usize,
                        ))
                    } else {
                        None
                    };
                    let idx_rr = if ax_idx + 2 < m_ax {
                        Some(g.idx(
                            (i as isize + 2 * dvec[0]) as usize,
                            (j as isize + 2 * dvec[1]) as usize,
                            (k as isize + 2 * dvec[2]) as usize,
                        ))
                    } else {
                        None
                    };
                    // near a wall the one-sided slope falls back to the
                    // central difference; a zero slope there acts as a
                    // first-order eps-independent mass redistribution
                    // through the acoustic-speed dissipation
                    let recon = |q: &[f64]| -> (f64, f64) {
                        let ql = q[idx_l];
                        let qr = q[idx_r];
                        let sl = match idx_ll {
                            Some(ll) => van_leer_slope(ql - q[ll], qr - ql),
                            None => qr - ql,
                        };
                        let sr = match idx_rr {
                            Some(rr) => van_leer_slope(qr - ql, q[rr] - qr),
                            None => qr - ql,
                        };
                        (ql + 0.5 * sl, qr - 0.5 * sr)
                    };
                    let (rho_l, rho_r) = recon(&state.rho);
                    let (m0_l, m0_r) = recon(&state.mom[0]);
                    let (m1_l, m1_r) = recon(&state.mom[1]);
                    let (m2_l, m2_r) = recon(&state.mom[2]);
                    let (e_l, e_r) = recon(&state.e_int);
                    let mn_l = [m0_l, m1_l, m2_l][axis];
                    let mn_r = [m0_r, m1_r, m2_r][axis];
                    let un_l = mn_l / rho_l;
                    let un_r = mn_r / rho_r;
                    let c_max = cs[idx_l].max(cs[idx_r]);
                    let a_acoustic = un_l.abs().max(un_r.abs()) + c_max / eps;
                    // material upwinding only: the acoustic mode is damped
                    // through the rho and rho-e jumps and by the physical
                    // viscosity, so the velocity field is not flooded with
                    // sound-speed diffusion
                    let a_material = un_l.abs().max(un_r.abs()) + eps * c_max;
                    let flux = |ql: f64, qr: f64, a: f64| {
                        0.5 * (un_l * ql + un_r * qr) - 0.5 * a * (qr - ql)
                    };
                    let f_rho = flux(rho_l, rho_r, a_acoustic);
                    let f_m = [
                        flux(m0_l, m0_r, a_material),
                        flux(m1_l, m1_r, a_material),
                        flux(m2_l, m2_r, a_material),
                    ];
                    let f_e = flux(e_l, e_r, a_acoustic);
                    out.rho[idx_l] -= f_rho / h;
                    out.rho[idx_r] += f_rho / h;
                    for c in 0..3 {
                        out.mom[c][idx_l] -= f_m[c] / h;
                        out.mom[c][idx_r] += f_m[c] / h;
                    }
                    out.e_int[idx_l] -= f_e / h;
                    out.e_int[idx_r] += f_e / h;
                }
            }
        }
    }

    // ------------- pressure gradient, Coriolis, potential forcing ------
    let inv_eps2 = 1.0 / (eps * eps);
    let cor = 2.0 / eps.sqrt();
    let strides: [isize; 3] = [1, nx as isize, (nx * ny) as isize];
    // third-order one-sided closure at the walls: the curl of the
    // discrete pressure gradient must stay small there, or boundary
    // cells generate eps-independent spurious vorticity
    let grad_1d = |q: &[f64], idx: usize, ax_idx: usize, m_ax: usize, stride: isize, h: f64| -> f64 {
        let gv = |off: isize| q[(idx as isize + off * stride) as usize];
        if ax_idx == 0 {
            (-11.0 * gv(0) + 18.0 * gv(1) - 9.0 * gv(2) + 2.0 * gv(3)) / (6.0 * h)
        } else if ax_idx == m_ax - 1 {
            (11.0 * gv(0) - 18.0 * gv(-1) + 9.0 * gv(-2) - 2.0 * gv(-3)) / (6.0 * h)
        } else {
            (gv(1) - gv(-1)) / (2.0 * h)
        }
    };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = g.idx(i, j, k);
                let axes_idx = [i, j, k];
                let dims = [nx, ny, nz];
                for axis in 0..3 {
                    if axis == 1 && g.is_slab() {
                        continue;
                    }
                    let dp = grad_1d(&p, idx, axes_idx[axis], dims[axis], strides[axis], hs[axis]);
                    out.mom[axis][idx] -= inv_eps2 * dp;
                }
                let m1 = state.mom[0][idx];
                let m2 = state.mom[1][idx];
                out.mom[0][idx] += cor * m2;
                out.mom[1][idx] -= cor * m1;
                let gp = params.grad_potential(g.xc(i), g.yc(j));
                let scale = state.rho[idx] / eps;
                for axis in 0..3 {
                    out.mom[axis][idx] += scale * gp[axis];
                }
            }
        }
    }

    // ----------------------- diffusion terms ---------------------------
    // velocity gradient tensor and divergence at cells
    let mut grad_u = vec![[0.0f64; 9]; n];
    let mut div_u = vec![0.0f64; n];
    for k in 0..nz as isize {
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let idx = g.idx(i as usize, j as usize, k as usize);
                let mut tensor = [0.0f64; 9];
                for comp in 0..3 {
                    tensor[3 * comp] =
                        (ghosts.u[comp].at(i + 1, j, k) - ghosts.u[comp].at(i - 1, j, k)) / (2.0 * hs[0]);
                    tensor[3 * comp + 1] =
                        (ghosts.u[comp].at(i, j + 1, k) - ghosts.u[comp].at(i, j - 1, k)) / (2.0 * hs[1]);
                    tensor[3 * comp + 2] =
                        (ghosts.u[comp].at(i, j, k + 1) - ghosts.u[comp].at(i, j, k - 1)) / (2.0 * hs[2]);
                }
                div_u[idx] = tensor[0] + tensor[4] + tensor[8];
                grad_u[idx] = tensor;
            }
        }
    }

    // compact normal diffusion d/dxj (mu du_i/dxj) via face fluxes
    for k in 0..nz as isize {
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let idx = g.idx(i as usize, j as usize, k as usize);
                for comp in 0..3 {
                    let mut acc = 0.0;
                    for (axis, dvec) in dirs {
                        if axis == 1 && g.is_slab() {
                            continue;
                        }
                        let h = hs[axis];
                        let (di, dj, dk) = (dvec[0], dvec[1], dvec[2]);
                        let th_c = ghosts.theta.at(i, j, k);
                        let th_p = 0.5 * (th_c + ghosts.theta.at(i + di, j + dj, k + dk));
                        let th_m = 0.5 * (th_c + ghosts.theta.at(i - di, j - dj, k - dk));
                        let mu_p = params.eos.transport(th_p.max(1e-12)).mu;
                        let mu_m = params.eos.transport(th_m.max(1e-12)).mu;
                        let f_p = mu_p
                            * (ghosts.u[comp].at(i + di, j + dj, k + dk) - ghosts.u[comp].at(i, j, k))
                            / h;
                        let f_m = mu_m
                            * (ghosts.u[comp].at(i, j, k) - ghosts.u[comp].at(i - di, j - dj, k - dk))
                            / h;
                        acc += (f_p - f_m) / h;
                    }
                    out.mom[comp][idx] += acc;
                }
            }
        }
    }

    // cross terms d/dxj (mu du_j/dxi) + d/dxi ((eta - 2mu/3) div u)
    {
        let mut w = vec![[0.0f64; 9]; n];
        let mut bulk = vec![0.0f64; n];
        for idx in 0..n {
            let tr = params.eos.transport(state.theta[idx]);
            for comp in 0..3 {
                for d in 0..3 {
                    w[idx][3 * comp + d] = tr.mu * grad_u[idx][3 * comp + d];
                }
            }
            bulk[idx] = (tr.eta - 2.0 * tr.mu / 3.0) * div_u[idx];
        }
        let mut scratch = vec![0.0f64; n];
        for i_comp in 0..3 {
            scratch.fill(0.0);
            for axis in 0..3 {
                if axis == 1 && g.is_slab() {
                    continue;
                }
                for k in 0..nz {
                    for j in 0..ny {
                        for i in 0..nx {
                            let idx = g.idx(i, j, k);
                            let source = |q_idx: usize| w[q_idx][3 * axis + i_comp];
                            let axes_idx = [i, j, k];
                            let dims = [nx, ny, nz];
                            let stride = strides[axis];
                            let ax_idx = axes_idx[axis];
                            let val = if ax_idx == 0 {
                                (-3.0 * source(idx)
                                    + 4.0 * source((idx as isize + stride) as usize)
                                    - source((idx as isize + 2 * stride) as usize))
                                    / (2.0 * hs[axis])
                            } else if ax_idx == dims[axis] - 1 {
                                (3.0 * source(idx)
                                    - 4.0 * source((idx as isize - stride) as usize)
                                    + source((idx as isize - 2 * stride) as usize))
                                    / (2.0 * hs[axis])
                            } else {
                                (source((idx as isize + stride) as usize)
                                    - source((idx as isize - stride) as usize))
                                    / (2.0 * hs[axis])
                            };
                            scratch[idx] += val;
                        }
                    }
                }
            }
            if !(i_comp == 1 && g.is_slab()) {
                for k in 0..nz {
                    for j in 0..ny {
                        for i in 0..nx {
                            let idx = g.idx(i, j, k);
                            let axes_idx = [i, j, k];
                            let dims = [nx, ny, nz];
                            scratch[idx] += grad_1d(
                                &bulk,
                                idx,
                                axes_idx[i_comp],
                                dims[i_comp],
                                strides[i_comp],
                                hs[i_comp],
                            );
                        }
                    }
                }
            }
            for idx in 0..n {
                out.mom[i_comp][idx] += scratch[idx];
            }
        }
    }

    // Fourier flux div(kappa grad theta)
    for k in 0..nz as isize {
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let idx = g.idx(i as usize, j as usize, k as usize);
                let mut acc = 0.0;
                for (axis, dvec) in dirs {
                    if axis == 1 && g.is_slab() {
                        continue;
                    }
                    let h = hs[axis];
                    let (di, dj, dk) = (dvec[0], dvec[1], dvec[2]);
                    let th_c = ghosts.theta.at(i, j, k);
                    let th_p = 0.5 * (th_c + ghosts.theta.at(i + di, j + dj, k + dk));
                    let th_m = 0.5 * (th_c + ghosts.theta.at(i - di, j - dj, k - dk));
                    let ka_p = params.eos.transport(th_p.max(1e-12)).kappa;
                    let ka_m = params.eos.transport(th_m.max(1e-12)).kappa;
                    let f_p = ka_p * (ghosts.theta.at(i + di, j + dj, k + dk) - th_c) / h;
                    let f_m = ka_m * (th_c - ghosts.theta.at(i - di, j - dj, k - dk)) / h;
                    acc += (f_p - f_m) / h;
                }
                out.e_int[idx] += acc;
            }
        }
    }

    // pressure work and eps^2-scaled viscous heating
    for idx in 0..n {
        let tr = params.eos.transport(state.theta[idx]);
        let gu = &grad_u[idx];
        let mut d2 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let dab = 0.5 * (gu[3 * a + b] + gu[3 * b + a]);
                d2 += dab * dab;
            }
        }
        let s_dd =
            2.0 * tr.mu * (d2 - div_u[idx] * div_u[idx] / 3.0) + tr.eta * div_u[idx] * div_u[idx];
        out.e_int[idx] += eps * eps * s_dd - p[idx] * div_u[idx];
    }

    Ok(out)
}

/// Stable time step from the acoustic, viscous, and conductive limits.
/// The acoustic bound uses the diagonal-safe effective spacing
/// 1/h_eff = sqrt(sum 1/h_i^2) so that corner-propagating waves stay
/// inside the SSP-RK3 imaginary-axis stability interval.
pub fn stable_dt(state: &PrimitiveState, params: &PrimitiveParams) -> Result<f64> {
    let g = state.grid;
    let h = g.min_spacing();
    let inv_h2 = {
        let mut s = 1.0 / (g.dx() * g.dx()) + 1.0 / (g.dz() * g.dz());
        if !g.is_slab() {
            s += 1.0 / (g.dy() * g.dy());
        }
        s
    };
    let h_eff = 1.0 / inv_h2.sqrt();
    let mut c_max = 0.0f64;
    let mut u_max = 0.0f64;
    let mut visc_max = 0.0f64;
    let mut cond_max = 0.0f64;
    for i in 0..state.rho.len() {
        let c = params.eos.sound_speed_sq(state.rho[i], state.theta[i])?.sqrt();
        c_max = c_max.max(c);
        let v = state.velocity(i);
        u_max = u_max.max(v[0].abs().max(v[1].abs()).max(v[2].abs()));
        let tr = params.eos.transport(state.theta[i]);
        visc_max = visc_max.max((2.0 * tr.mu + tr.eta) / state.rho[i]);
        let e_th = params.eos.energy_dtheta(state.rho[i], state.theta[i])?;
        cond_max = cond_max.max(tr.kappa / (state.rho[i] * e_th));
    }
    let dt_acoustic = params.cfl * params.eps * h_eff / (c_max + params.eps * u_max);
    let dt_visc = 0.2 * h * h / visc_max.max(1e-300);
    let dt_cond = 0.2 * h * h / cond_max.max(1e-300);
    Ok(dt_acoustic.min(dt_visc).min(dt_cond))
}

fn apply_tendency(state: &PrimitiveState, tend: &Tendency, dt: f64) -> PrimitiveState {
    let mut next = state.clone();
    for i in 0..state.rho.len() {
        next.rho[i] += dt * tend.rho[i];
        for c in 0..3 {
            next.mom[c][i] += dt * tend.mom[c][i];
        }
        next.e_int[i] += dt * tend.e_int[i];
    }
    next
}

/// Strong-stability-preserving RK3 step (Shu-Osher) with temperature
/// recovery after each stage. RK3 is stable on the imaginary axis,
/// which the centrally differenced acoustic terms need; RK2 is not and
/// rings at desk-scale resolutions. Returns the dt actually taken
/// (capped by `dt_cap` when given, e.g. to land exactly on t_final).
pub fn time_step(
    state: &mut PrimitiveState,
    params: &PrimitiveParams,
    dt_cap: Option<f64>,
) -> Result<f64> {
    let mut dt = stable_dt(state, params)?;
    if let Some(cap) = dt_cap {
        dt = dt.min(cap);
    }
    let k1 = rhs(state, params)?;
    let mut stage1 = apply_tendency(state, &k1, dt);
    recover_theta(&mut stage1, &params.eos)?;
    let k2 = rhs(&stage1, params)?;
    let mut stage2 = apply_tendency(&stage1, &k2, dt);
    for i in 0..state.rho.len() {
        stage2.rho[i] = 0.75 * state.rho[i] + 0.25 * stage2.rho[i];
        for c in 0..3 {
            stage2.mom[c][i] = 0.75 * state.mom[c][i] + 0.25 * stage2.mom[c][i];
        }
        stage2.e_int[i] = 0.75 * state.e_int[i] + 0.25 * stage2.e_int[i];
    }
    recover_theta(&mut stage2, &params.eos)?;
    let k3 = rhs(&stage2, params)?;
    let stage3 = apply_tendency(&stage2, &k3, dt);
    for i in 0..state.rho.len() {
        state.rho[i] = state.rho[i] / 3.0 + 2.0 / 3.0 * stage3.rho[i];
        for c in 0..3 {
            state.mom[c][i] = state.mom[c][i] / 3.0 + 2.0 / 3.0 * stage3.mom[c][i];
        }
        state.e_int[i] = state.e_int[i] / 3.0 + 2.0 / 3.0 * stage3.e_int[i];
    }
    recover_theta(state, &params.eos)?;
    state.t += dt;
    Ok(dt)
}

/// March to t_final, invoking the observer at start, every
/// `observe_every` steps, and at the end.
pub fn run(
    params: &PrimitiveParams,
    mut state: PrimitiveState,
    observe_every: usize,
    mut observer: impl FnMut(&PrimitiveState) -> Result<()>,
) -> Result<PrimitiveState> {
    params.validate()?;
    observer(&state)?;
    if params.t_final == 0.0 {
        return Ok(state);
    }
    let every = observe_every.max(1);
    let mut step_count = 0usize;
    while state.t < params.t_final - 1e-14 {
        let remaining = params.t_final - state.t;
        time_step(&mut state, params, Some(remaining))?;
        step_count += 1;
        if step_count % every == 0 && state.t < params.t_final - 1e-14 {
            observer(&state)?;
        }
    }
    observer(&state)?;
    Ok(state)
}

/// Discrete work done by the Coriolis force relative to its natural
/// magnitude; exactly orthogonal in exact arithmetic on the collocated
/// grid, so the ratio is pure rounding.
pub fn coriolis_work_ratio(state: &PrimitiveState, params: &PrimitiveParams) -> f64 {
    let cor = 2.0 / params.eps.sqrt();
    let mut work = 0.0;
    let mut scale = 0.0;
    for i in 0..state.rho.len() {
        let u = state.velocity(i);
        let f1 = cor * state.mom[1][i];
        let f2 = -cor * state.mom[0][i];
        work += u[0] * f1 + u[1] * f2;
        scale += (u[0] * f1).abs() + (u[1] * f2).abs();
    }
    if scale == 0.0 {
        0.0
    } else {
        work.abs() / scale
    }
}

/// Lift a 2D MAC velocity to cell centers (used when the same initial
/// data feeds both solvers).
pub fn mac_to_centers(uh: &MacVel2, grid: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let g = grid;
    let mut uc = vec![0.0; g.nx * g.ny];
    let mut vc = vec![0.0; g.nx * g.ny];
    for j in 0..g.ny {
        for i in 0..g.nx {
            uc[i + g.nx * j] = 0.5 * (uh.u[uh.iu(i, j)] + uh.u[uh.iu(i + 1, j)]);
            vc[i + g.nx * j] = if g.is_slab() {
                uh.v[uh.iv(i, 0)]
            } else {
                0.5 * (uh.v[uh.iv(i, j)] + uh.v[uh.iv(i, j + 1)])
            };
        }
    }
    (uc, vc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn test_params(grid: GridSpec, eps: f64) -> PrimitiveParams {
        let eos = EosSpec::ideal_gas(1e-3).unwrap();
        let background = eos.coefficients(1.0, 1.0).unwrap();
        PrimitiveParams {
            eps,
            eos,
            background,
            grid,
            g_vec: [0.0, 0.0, -1.0],
            theta_boundary: Arc::new(|_, _, z| 1.0 - z),
            cfl: 0.4,
            t_final: 0.01,
            include_centrifugal: true,
        }
    }

    #[test]
    fn uniform_rest_state_is_steady_without_forcing() {
        let g = GridSpec::new_slab(1.0, 8, 8).unwrap();
        let mut p = test_params(g, 0.5);
        p.g_vec = [0.0, 0.0, 0.0];
        p.include_centrifugal = false;
        p.theta_boundary = Arc::new(|_, _, _| 0.0);
        let state = well_prepared_init(&p, |_, _, _| 0.0, |_, _| (0.0, 0.0)).unwrap();
        let tend = rhs(&state, &p).unwrap();
        let max_rho = tend.rho.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_mom = tend.max_momentum();
        let max_e = tend.e_int.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            max_rho < 1e-11 && max_mom < 1e-11 && max_e < 1e-11,
            "tendencies not zero: {max_rho} {max_mom} {max_e}"
        );
    }

    #[test]
    fn well_prepared_r0_has_zero_mean() {
        let g = GridSpec::new_slab(1.0, 16, 16).unwrap();
        let p = test_params(g, 0.2);
        let state = well_prepared_init(&p, |_, _, z| 1.0 - z, |_, _| (0.0, 0.0)).unwrap();
        let mean_rho = state.rho.iter().sum::<f64>() / state.rho.len() as f64;
        assert!(
            (mean_rho - p.background.rho_bar).abs() < 1e-12,
            "mean rho {mean_rho}"
        );
        // rho -> rho_bar uniformly and linearly in eps
        let p_small = test_params(g, 0.01);
        let s_small = well_prepared_init(&p_small, |_, _, z| 1.0 - z, |_, _| (0.0, 0.0)).unwrap();
        let dev_small = s_small.rho.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
        let dev_big = state.rho.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
        assert!((dev_small / dev_big - 0.01 / 0.2).abs() < 1e-9);
    }

    #[test]
    fn well_prepared_rejects_oversized_eps() {
        let g = GridSpec::new_slab(1.0, 8, 8).unwrap();
        let p = test_params(g, 1.0);
        let r = well_prepared_init(&p, |_, _, z| 10.0 * (1.0 - z), |_, _| (0.0, 0.0));
        assert!(r.is_err());
    }

    #[test]
    fn coriolis_does_no_work() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let g = GridSpec::new_slab(1.0, 8, 8).unwrap();
        let p = test_params(g, 0.3);
        let mut state = well_prepared_init(&p, |_, _, z| 1.0 - z, |_, _| (0.0, 0.0)).unwrap();
        for i in 0..state.rho.len() {
            for c in 0..3 {
                state.mom[c][i] = rng.gen_range(-0.5..0.5);
            }
        }
        let ratio = coriolis_work_ratio(&state, &p);
        assert!(ratio < 1e-12, "coriolis work ratio {ratio}");
    }

    #[test]
    fn mass_is_conserved_over_100_steps() {
        let g = GridSpec::new_slab(1.0, 16, 16).unwrap();
        let mut p = test_params(g, 0.4);
        p.t_final = f64::INFINITY;
        let mut state = well_prepared_init(
            &p,
            |_, _, z| 1.0 - z,
            |x, _| (0.0, 0.05 * (std::f64::consts::PI * (x + 1.0) / 2.0).sin()),
        )
        .unwrap();
        let m0 = state.total_mass();
        for _ in 0..100 {
            time_step(&mut state, &p, None).unwrap();
        }
        let drift = ((state.total_mass() - m0) / m0).abs();
        assert!(drift < 1e-12, "mass drift {drift}");
    }

    #[test]
    fn sound_speed_ideal_value() {
        let eos = EosSpec::ideal_gas(0.0).unwrap();
        let c = eos.sound_speed_sq(1.0, 1.0).unwrap().sqrt();
        assert!((c - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((c - 1.2909944487358056).abs() < 1e-12);
    }

    #[test]
    fn well_prepared_tendency_uniform_in_eps() {
        let g = GridSpec::new_slab(1.0, 32, 32).unwrap();
        let mut maxima = Vec::new();
        for eps in [0.4, 0.2, 0.1] {
            let p = test_params(g, eps);
            let state = well_prepared_init(&p, |_, _, z| 1.0 - z, |_, _| (0.0, 0.0)).unwrap();
            let tend = rhs(&state, &p).unwrap();
            maxima.push(tend.max_momentum());
        }
        for w in maxima.windows(2) {
            assert!(
                w[1] / w[0] <= 1.2,
                "momentum tendency grew as eps decreased: {maxima:?}"
            );
        }
    }

    #[test]
    fn richardson_order_two_in_dt() {
        let g = GridSpec::new_slab(1.0, 8, 8).unwrap();
        let p = test_params(g, 0.5);
        let init = || {
            well_prepared_init(
                &p,
                |_, _, z| 1.0 - z,
                |x, _| (0.0, 0.1 * (std::f64::consts::PI * (x + 1.0) / 2.0).sin()),
            )
            .unwrap()
        };
        let norm_diff = |a: &PrimitiveState, b: &PrimitiveState| -> f64 {
            let mut s = 0.0;
            for i in 0..a.rho.len() {
                s += (a.rho[i] - b.rho[i]).powi(2) + (a.e_int[i] - b.e_int[i]).powi(2);
                for c in 0..3 {
                    s += (a.mom[c][i] - b.mom[c][i]).powi(2);
                }
            }
            s.sqrt()
        };
        let dt0 = 1e-4;
        let mut s1 = init();
        time_step(&mut s1, &p, Some(dt0)).unwrap();
        let mut s2 = init();
        for _ in 0..2 {
            time_step(&mut s2, &p, Some(dt0 / 2.0)).unwrap();
        }
        let mut s4 = init();
        for _ in 0..4 {
            time_step(&mut s4, &p, Some(dt0 / 4.0)).unwrap();
        }
        let d1 = norm_diff(&s1, &s2);
        let d2 = norm_diff(&s2, &s4);
        let order = (d1 / d2).log2();
        assert!(order > 1.9, "RK2 order {order} (d1 {d1}, d2 {d2})");
    }

    #[test]
    fn run_respects_t_final_and_cadence() {
        let g = GridSpec::new_slab(1.0, 8, 8).unwrap();
        let mut p = test_params(g, 0.5);
        p.t_final = 0.0;
        let state = well_prepared_init(&p, |_, _, z| 1.0 - z, |_, _| (0.0, 0.0)).unwrap();
        let mut count = 0;
        let out = run(&p, state, 5, |_| {
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, 1);
        assert_eq!(out.t, 0.0);

        let mut p2 = test_params(g, 0.5);
        p2.t_final = 0.002;
        let state2 = well_prepared_init(&p2, |_, _, z| 1.0 - z, |_, _| (0.0, 0.0)).unwrap();
        let out2 = run(&p2, state2, 1000, |_| Ok(())).unwrap();
        assert!((out2.t - 0.002).abs() < 1e-12, "t = {}", out2.t);
    }

    #[test]
    fn box_geometry_steps_stably() {
        let g = GridSpec::new_box(1.0, 8, 8, 8).unwrap();
        let mut p = test_params(g, 0.4);
        p.t_final = f64::INFINITY;
        let pi = std::f64::consts::PI;
        let mut state = well_prepared_init(&p, |_, _, z| 1.0 - z, move |x, y| {
            let sx = (pi * (x + 1.0) / 2.0).sin();
            let sy = (pi * (y + 1.0) / 2.0).sin();
            (0.05 * sx * sx * sy, -0.05 * sx * sy * sy)
        })
        .unwrap();
        for _ in 0..20 {
            time_step(&mut state, &p, None).unwrap();
        }
        assert!(state.rho.iter().all(|v| *v > 0.0));
        assert!(state.theta.iter().all(|v| *v > 0.0));
        assert!(state.rho.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn theta_inversion_round_trip() {
        let eos = EosSpec::capped_gas(1.0, 1e-3).unwrap();
        for rho in [0.5, 1.0, 1.7] {
            for theta in [0.4, 1.0, 2.3] {
                let e = eos.internal_energy(rho, theta).unwrap();
                let back = solve_theta(&eos, rho, e, 1.0).unwrap();
                assert!((back - theta).abs() < 1e-10, "{back} vs {theta}");
            }
        }
    }
}
