//! Equation-of-state family for a monatomic gas with radiation, the
//! derived background coefficients, and the thermodynamic consistency
//! checks used by the verification suite.
//!
//! The pressure takes the structural form
//!
//! ```text
//! p(rho, theta) = theta^{5/2} P(rho / theta^{3/2}) + (a/3) theta^4,
//! e(rho, theta) = (3/2) (theta^{5/2} / rho) P(rho / theta^{3/2}) + (a/rho) theta^4,
//! ```
//!
//! with the specific entropy s = S(Z) + (4a/3) theta^3 / rho where
//! S'(Z) = -(3/2) (5/3 P(Z) - P'(Z) Z) / Z^2. Transport laws are
//! mu(theta) = mu0 (1 + theta), eta(theta) = eta0 (1 + theta),
//! kappa(theta) = kappa0 (1 + theta^beta) with beta > 6.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Structural gas law P(Z).
#[derive(Clone, Debug)]
pub enum GasLaw {
    /// Boyle-Mariotte: P(Z) = Z. Violates the third-law normalization.
    Ideal,
    /// Coercive law P(Z) = p_inf Z^{5/3} / (1 + Z^{2/3}).
    /// P(Z)/Z^{5/3} is strictly decreasing and P(Z)/Z tends to p_inf.
    Capped { p_inf: f64 },
    /// Sampled P on a Z-grid with monotone cubic interpolation.
    Tabulated(Arc<MonotoneTable>),
}

/// Fritsch-Carlson monotone cubic interpolant for tabulated gas laws.
#[derive(Clone, Debug)]
pub struct MonotoneTable {
    z: Vec<f64>,
    p: Vec<f64>,
    slope: Vec<f64>,
}

impl MonotoneTable {
    pub fn new(z: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if z.len() < 3 || z.len() != p.len() {
            return Err(Error::InvalidEos("tabulated law needs >= 3 samples".into()));
        }
        for w in z.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidEos("tabulated Z grid must be strictly increasing".into()));
            }
        }
        let n = z.len();
        let mut d = vec![0.0; n - 1];
        for i in 0..n - 1 {
            d[i] = (p[i + 1] - p[i]) / (z[i + 1] - z[i]);
        }
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            if d[i - 1] * d[i] <= 0.0 {
                m[i] = 0.0;
            } else {
                // weighted harmonic mean keeps the interpolant monotone
                let h0 = z[i] - z[i - 1];
                let h1 = z[i + 1] - z[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        Ok(MonotoneTable { z, p, slope: m })
    }

    fn segment(&self, x: f64) -> usize {
        match self.z.binary_search_by(|a| a.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.z.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.z.len() - 2),
        }
    }

    /// Hermite evaluation; the end cubics extend beyond the table.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.z[i + 1] - self.z[i];
        let t = (x - self.z[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        h00 * self.p[i] + h10 * h * self.slope[i] + h01 * self.p[i + 1] + h11 * h * self.slope[i + 1]
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.z[i + 1] - self.z[i];
        let t = (x - self.z[i]) / h;
        let dh00 = (6.0 * t * t - 6.0 * t) / h;
        let dh10 = 3.0 * t * t - 4.0 * t + 1.0;
        let dh01 = (-6.0 * t * t + 6.0 * t) / h;
        let dh11 = 3.0 * t * t - 2.0 * t;
        dh00 * self.p[i] + dh10 * self.slope[i] + dh01 * self.p[i + 1] + dh11 * self.slope[i + 1]
    }
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

/// Cumulative table of S(Z) on a log grid, built once per EOS.
/// S'(Z) is always evaluated in closed form; only the antiderivative
/// needs quadrature for the non-ideal laws.
#[derive(Clone, Debug)]
struct EntropyTable {
    t_lo: f64,
    h: f64,
    /// S at the nodes t_i = t_lo + i h (t = ln Z), offset not included.
    s: Vec<f64>,
    /// dS/dt at the nodes (= Z S'(Z)), for Hermite evaluation.
    ds: Vec<f64>,
}

const ENTROPY_T_RANGE: f64 = 19.0;
const ENTROPY_STEP: f64 = 1.0 / 64.0;
const ENTROPY_PANEL_SUB: usize = 8;

/// Complete constitutive description of the fluid.
#[derive(Clone, Debug)]
pub struct EosSpec {
    pub gas_law: GasLaw,
    /// Radiation constant, >= 0.
    pub a: f64,
    /// Additive entropy constant at the reference point Z = 1.
    pub entropy_offset: f64,
    pub mu0: f64,
    pub eta0: f64,
    pub kappa0: f64,
    pub beta_cond: f64,
    entropy_table: Option<Arc<EntropyTable>>,
}

/// Dynamic viscosity, bulk viscosity, heat conductivity at one temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transport {
    pub mu: f64,
    pub eta: f64,
    pub kappa: f64,
}

impl EosSpec {
    pub fn new(
        gas_law: GasLaw,
        a: f64,
        entropy_offset: f64,
        mu0: f64,
        eta0: f64,
        kappa0: f64,
        beta_cond: f64,
    ) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidEos(format!("radiation constant a must be >= 0, got {a}")));
        }
        if !(mu0 > 0.0) {
            return Err(Error::InvalidEos(format!("mu0 must be positive, got {mu0}")));
        }
        if !(eta0 >= 0.0) {
            return Err(Error::InvalidEos(format!("eta0 must be >= 0, got {eta0}")));
        }
        if !(kappa0 > 0.0) {
            return Err(Error::InvalidEos(format!("kappa0 must be positive, got {kappa0}")));
        }
        if !(beta_cond > 6.0) {
            return Err(Error::InvalidEos(format!(
                "conductivity exponent must exceed 6, got {beta_cond}"
            )));
        }
        if let GasLaw::Capped { p_inf } = gas_law {
            if !(p_inf > 0.0) {
                return Err(Error::InvalidEos(format!("p_inf must be positive, got {p_inf}")));
            }
        }
        let mut eos = EosSpec {
            gas_law,
            a,
            entropy_offset,
            mu0,
            eta0,
            kappa0,
            beta_cond,
            entropy_table: None,
        };
        eos.check_structure()?;
        if !matches!(eos.gas_law, GasLaw::Ideal) {
            eos.entropy_table = Some(Arc::new(eos.build_entropy_table()));
        }
        Ok(eos)
    }

    /// Boyle-Mariotte law with default desk-scale transport coefficients.
    pub fn ideal_gas(a: f64) -> Result<Self> {
        Self::new(GasLaw::Ideal, a, 0.0, 0.01, 0.01, 0.1, 7.0)
    }

    pub fn capped_gas(p_inf: f64, a: f64) -> Result<Self> {
        Self::new(GasLaw::Capped { p_inf }, a, 0.0, 0.01, 0.01, 0.1, 7.0)
    }

    /// Structural gas law P(Z).
    pub fn big_p(&self, z: f64) -> f64 {
        match &self.gas_law {
            GasLaw::Ideal => z,
            GasLaw::Capped { p_inf } => {
                if z == 0.0 {
                    0.0
                } else {
                    p_inf * z.powf(5.0 / 3.0) / (1.0 + z.powf(2.0 / 3.0))
                }
            }
            GasLaw::Tabulated(t) => t.eval(z),
        }
    }

    /// dP/dZ.
    pub fn big_p_prime(&self, z: f64) -> f64 {
        match &self.gas_law {
            GasLaw::Ideal => 1.0,
            GasLaw::Capped { p_inf } => {
                if z == 0.0 {
                    return 0.0;
                }
                let z23 = z.powf(2.0 / 3.0);
                let denom = 1.0 + z23;
                p_inf * z23 * (5.0 / 3.0 + z23) / (denom * denom)
            }
            GasLaw::Tabulated(t) => t.eval_derivative(z),
        }
    }

    /// S'(Z) = -(3/2) (5/3 P - P' Z) / Z^2, in closed form.
    pub fn script_s_prime(&self, z: f64) -> f64 {
        match &self.gas_law {
            GasLaw::Ideal => -1.0 / z,
            GasLaw::Capped { p_inf } => {
                let z23 = z.powf(2.0 / 3.0);
                let denom = 1.0 + z23;
                -p_inf * z.powf(1.0 / 3.0) / (denom * denom)
            }
            GasLaw::Tabulated(_) => {
                let p = self.big_p(z);
                let pp = self.big_p_prime(z);
                -1.5 * (5.0 / 3.0 * p - pp * z) / (z * z)
            }
        }
    }

    /// S(Z), with the additive constant anchored at the reference point
    /// Z = 1: S(1) = entropy_offset. For the ideal law the closed form
    /// -ln Z + offset is used.
    pub fn script_s(&self, z: f64) -> f64 {
        match &self.gas_law {
            GasLaw::Ideal => -z.ln() + self.entropy_offset,
            _ => {
                let table = self.entropy_table.as_ref().expect("table built at construction");
                self.entropy_offset + table_eval(table, z.ln(), |t| self.entropy_integrand(t))
            }
        }
    }

    /// Integrand of S in the log variable: dS/dt = Z S'(Z), Z = e^t.
    fn entropy_integrand(&self, t: f64) -> f64 {
        let z = t.exp();
        z * self.script_s_prime(z)
    }

    fn build_entropy_table(&self) -> EntropyTable {
        let t_lo = -ENTROPY_T_RANGE;
        let h = ENTROPY_STEP;
        let n = (2.0 * ENTROPY_T_RANGE / h).round() as usize + 1;
        let mut s = vec![0.0; n];
        let mut ds = vec![0.0; n];
        for (i, di) in ds.iter_mut().enumerate() {
            *di = self.entropy_integrand(t_lo + i as f64 * h);
        }
        // anchor node at t = 0 (Z = 1)
        let i0 = (-t_lo / h).round() as usize;
        for i in i0..n - 1 {
            let a = t_lo + i as f64 * h;
            s[i + 1] = s[i] + simpson_panel(a, a + h, ENTROPY_PANEL_SUB, |t| self.entropy_integrand(t));
        }
        for i in (0..i0).rev() {
            let a = t_lo + i as f64 * h;
            s[i] = s[i + 1] - simpson_panel(a, a + h, ENTROPY_PANEL_SUB, |t| self.entropy_integrand(t));
        }
        EntropyTable { t_lo, h, s, ds }
    }

    fn check_domain(rho: f64, theta: f64) -> Result<()> {
        if !rho.is_finite() || !theta.is_finite() {
            return Err(Error::Domain(format!("non-finite state rho={rho} theta={theta}")));
        }
        if rho < 0.0 {
            return Err(Error::Domain(format!("negative density {rho}")));
        }
        if theta <= 0.0 {
            return Err(Error::Domain(format!("non-positive temperature {theta}")));
        }
        Ok(())
    }

    /// p(rho, theta) = theta^{5/2} P(Z) + (a/3) theta^4.
    pub fn pressure(&self, rho: f64, theta: f64) -> Result<f64> {
        Self::check_domain(rho, theta)?;
        let z = rho / theta.powf(1.5);
        Ok(theta.powf(2.5) * self.big_p(z) + self.a / 3.0 * theta.powi(4))
    }

    /// Specific internal energy e(rho, theta); rho must be positive.
    pub fn internal_energy(&self, rho: f64, theta: f64) -> Result<f64> {
        Self::check_domain(rho, theta)?;
        if rho == 0.0 {
            return Err(Error::Domain("specific energy undefined at rho = 0".into()));
        }
        let z = rho / theta.powf(1.5);
        Ok(1.5 * theta.powf(2.5) / rho * self.big_p(z) + self.a / rho * theta.powi(4))
    }

    /// Specific entropy s(rho, theta); rho must be positive.
    pub fn entropy(&self, rho: f64, theta: f64) -> Result<f64> {
        Self::check_domain(rho, theta)?;
        if rho == 0.0 {
            return Err(Error::Domain("entropy undefined at rho = 0".into()));
        }
        let z = rho / theta.powf(1.5);
        Ok(self.script_s(z) + 4.0 * self.a / 3.0 * theta.powi(3) / rho)
    }

    /// (dp/drho, dp/dtheta). Analytic for the builtin laws, central
    /// finite differences with relative step 1e-6 for tabulated laws.
    pub fn pressure_derivatives(&self, rho: f64, theta: f64) -> Result<(f64, f64)> {
        Self::check_domain(rho, theta)?;
        if rho == 0.0 {
            return Err(Error::Domain("pressure derivatives need rho > 0".into()));
        }
        let (p_rho, p_theta) = match &self.gas_law {
            GasLaw::Tabulated(_) => {
                let hr = 1e-6 * rho;
                let ht = 1e-6 * theta;
                let pr = (self.pressure(rho + hr, theta)? - self.pressure(rho - hr, theta)?) / (2.0 * hr);
                let pt = (self.pressure(rho, theta + ht)? - self.pressure(rho, theta - ht)?) / (2.0 * ht);
                (pr, pt)
            }
            _ => {
                let z = rho / theta.powf(1.5);
                let pr = theta * self.big_p_prime(z);
                let pt = 2.5 * theta.powf(1.5) * self.big_p(z) - 1.5 * self.big_p_prime(z) * rho
                    + 4.0 * self.a / 3.0 * theta.powi(3);
                (pr, pt)
            }
        };
        if !(p_rho > 0.0) {
            return Err(Error::Stability(format!(
                "dp/drho = {p_rho} <= 0 at rho={rho}, theta={theta}"
            )));
        }
        Ok((p_rho, p_theta))
    }

    /// de/dtheta (specific heat at constant volume), analytic.
    pub fn energy_dtheta(&self, rho: f64, theta: f64) -> Result<f64> {
        Self::check_domain(rho, theta)?;
        if rho == 0.0 {
            return Err(Error::Domain("energy derivative needs rho > 0".into()));
        }
        let z = rho / theta.powf(1.5);
        let e_theta = 15.0 / 4.0 * theta.powf(1.5) / rho * self.big_p(z) - 9.0 / 4.0 * self.big_p_prime(z)
            + 4.0 * self.a * theta.powi(3) / rho;
        if !(e_theta > 0.0) {
            return Err(Error::Stability(format!(
                "de/dtheta = {e_theta} <= 0 at rho={rho}, theta={theta}"
            )));
        }
        Ok(e_theta)
    }

    /// (ds/drho, ds/dtheta), analytic via S'.
    pub fn entropy_derivatives(&self, rho: f64, theta: f64) -> Result<(f64, f64)> {
        Self::check_domain(rho, theta)?;
        if rho == 0.0 {
            return Err(Error::Domain("entropy derivatives need rho > 0".into()));
        }
        let z = rho / theta.powf(1.5);
        let sp = self.script_s_prime(z);
        let s_rho = sp / theta.powf(1.5) - 4.0 * self.a / 3.0 * theta.powi(3) / (rho * rho);
        let s_theta = -1.5 * sp * rho / theta.powf(2.5) + 4.0 * self.a * theta * theta / rho;
        Ok((s_rho, s_theta))
    }

    /// Adiabatic sound speed squared: c^2 = p_rho + theta p_theta^2 / (rho^2 e_theta).
    pub fn sound_speed_sq(&self, rho: f64, theta: f64) -> Result<f64> {
        let (p_rho, p_theta) = self.pressure_derivatives(rho, theta)?;
        let e_theta = self.energy_dtheta(rho, theta)?;
        Ok(p_rho + theta * p_theta * p_theta / (rho * rho * e_theta))
    }

    /// mu(theta) = mu0 (1+theta), eta(theta) = eta0 (1+theta),
    /// kappa(theta) = kappa0 (1 + theta^beta).
    pub fn transport(&self, theta: f64) -> Transport {
        Transport {
            mu: self.mu0 * (1.0 + theta),
            eta: self.eta0 * (1.0 + theta),
            kappa: self.kappa0 * (1.0 + theta.powf(self.beta_cond)),
        }
    }

    /// Background coefficients at (rho_bar, theta_bar).
    pub fn coefficients(&self, rho_bar: f64, theta_bar: f64) -> Result<BackgroundState> {
        BackgroundState::new(self, rho_bar, theta_bar)
    }

    /// Sampled structural checks on P: P(0) = 0, P' > 0, positive and
    /// bounded specific-heat combination, P/Z^{5/3} non-increasing.
    fn check_structure(&self) -> Result<()> {
        let p0 = self.big_p(0.0);
        if p0.abs() > 1e-12 {
            return Err(Error::InvalidEos(format!("P(0) = {p0}, expected 0")));
        }
        let grid = structure_z_grid();
        let mut prev_ratio = f64::INFINITY;
        for &z in &grid {
            let pp = self.big_p_prime(z);
            if !(pp > 0.0) {
                return Err(Error::InvalidEos(format!("P'({z}) = {pp} not positive")));
            }
            let gamma = (5.0 / 3.0 * self.big_p(z) - pp * z) / z;
            if !(gamma > 0.0) && z > 1e-4 {
                return Err(Error::InvalidEos(format!(
                    "specific-heat combination (5/3 P - P'Z)/Z = {gamma} not positive at Z = {z}"
                )));
            }
            let ratio = self.big_p(z) / z.powf(5.0 / 3.0);
            if ratio > prev_ratio * (1.0 + 1e-12) {
                return Err(Error::InvalidEos(format!(
                    "P(Z)/Z^(5/3) increases at Z = {z} ({prev_ratio} -> {ratio})"
                )));
            }
            prev_ratio = ratio;
        }
        Ok(())
    }

    /// Sampled structural diagnostics, for the thermo-check report.
    pub fn structure_report(&self) -> StructureReport {
        let grid = structure_z_grid();
        let mut max_specific_heat = 0.0f64;
        let mut min_p_over_z_beyond_1 = f64::INFINITY;
        for &z in &grid {
            let gamma = (5.0 / 3.0 * self.big_p(z) - self.big_p_prime(z) * z) / z;
            max_specific_heat = max_specific_heat.max(gamma);
            if z >= 1.0 {
                min_p_over_z_beyond_1 = min_p_over_z_beyond_1.min(self.big_p(z) / z);
            }
        }
        // the third law requires S(Z) -> 0 as Z -> infinity; estimate the
        // tail of the S' integral over two decades
        let tail = simpson_panel(4.0 * std::f64::consts::LN_10, 6.0 * std::f64::consts::LN_10, 512, |t| {
            self.entropy_integrand(t)
        })
        .abs();
        StructureReport {
            max_specific_heat,
            min_p_over_z_beyond_1,
            third_law_satisfied: tail < 1e-8,
            entropy_tail_estimate: tail,
        }
    }
}

fn structure_z_grid() -> Vec<f64> {
    // 20 points per decade over [1e-6, 1e6]
    let mut g = Vec::with_capacity(241);
    for i in 0..=240 {
        g.push(10f64.powf(-6.0 + i as f64 / 20.0));
    }
    g
}

/// Outcome of the sampled structural checks.
#[derive(Clone, Copy, Debug)]
pub struct StructureReport {
    /// max over the sample grid of (5/3 P - P'Z)/Z; the bound c of the
    /// stability hypothesis is unspecified, so it is reported, not asserted.
    pub max_specific_heat: f64,
    /// min over Z >= 1 of P(Z)/Z.
    pub min_p_over_z_beyond_1: f64,
    /// whether the S' tail integral converges (S(inf) normalizable).
    pub third_law_satisfied: bool,
    pub entropy_tail_estimate: f64,
}

fn table_eval(table: &EntropyTable, t: f64, integrand: impl Fn(f64) -> f64) -> f64 {
    let n = table.s.len();
    let t_hi = table.t_lo + (n - 1) as f64 * table.h;
    if t < table.t_lo {
        return table.s[0] - simpson_panel(t, table.t_lo, 64, integrand);
    }
    if t > t_hi {
        return table.s[n - 1] + simpson_panel(t_hi, t, 64, integrand);
    }
    let u = (t - table.t_lo) / table.h;
    let i = (u.floor() as usize).min(n - 2);
    let frac = u - i as f64;
    let (h00, h10, h01, h11) = hermite_basis(frac);
    h00 * table.s[i] + h10 * table.h * table.ds[i] + h01 * table.s[i + 1] + h11 * table.h * table.ds[i + 1]
}

fn simpson_panel(a: f64, b: f64, n_sub: usize, f: impl Fn(f64) -> f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = 2 * n_sub;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Constant background (rho_bar, theta_bar) with cached derivatives and
/// the coefficients alpha, c_p, c_v, lambda.
#[derive(Clone, Copy, Debug)]
pub struct BackgroundState {
    pub rho_bar: f64,
    pub theta_bar: f64,
    pub p_rho: f64,
    pub p_theta: f64,
    pub e_theta: f64,
    pub alpha: f64,
    pub c_p: f64,
    pub c_v: f64,
    pub lambda: f64,
}

impl BackgroundState {
    pub fn new(eos: &EosSpec, rho_bar: f64, theta_bar: f64) -> Result<Self> {
        if !(rho_bar > 0.0) || !(theta_bar > 0.0) {
            return Err(Error::Domain(format!(
                "background state must be positive, got rho={rho_bar} theta={theta_bar}"
            )));
        }
        let (p_rho, p_theta) = eos.pressure_derivatives(rho_bar, theta_bar)?;
        let e_theta = eos.energy_dtheta(rho_bar, theta_bar)?;
        let alpha = p_theta / (rho_bar * p_rho);
        let c_v = e_theta;
        let c_p = e_theta + theta_bar / rho_bar * alpha * p_theta;
        let lambda = theta_bar * alpha * p_theta / (rho_bar * c_p);
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Stability(format!("lambda = {lambda} outside (0,1)")));
        }
        Ok(BackgroundState {
            rho_bar,
            theta_bar,
            p_rho,
            p_theta,
            e_theta,
            alpha,
            c_p,
            c_v,
            lambda,
        })
    }

    /// lambda / (1 - lambda), the constant appearing in the nonlocal
    /// boundary condition of the limit temperature.
    pub fn lambda_ratio(&self) -> f64 {
        self.lambda / (1.0 - self.lambda)
    }
}

/// Residuals of the five cancellation identities evaluated at the
/// background state. All five vanish for any EOS satisfying Gibbs' law
/// and thermodynamic stability.
#[derive(Clone, Copy, Debug)]
pub struct IdentityReport {
    /// ds/drho + p_theta / rho^2.
    pub maxwell: f64,
    /// theta alpha p_theta - rho c_p lambda.
    pub lambda_def: f64,
    /// lambda/(1-lambda) - (c_p/c_v - 1).
    pub ts5a: f64,
    /// -s_theta p_rho/p_theta - s_rho (c_p rho / (theta alpha p_theta) - 1).
    pub vanishing_combination: f64,
    /// [s_rho p_theta/p_rho - s_theta] kappa/c_p + kappa/theta.
    pub kappa_combination: f64,
}

impl IdentityReport {
    pub fn max_abs(&self) -> f64 {
        self.maxwell
            .abs()
            .max(self.lambda_def.abs())
            .max(self.ts5a.abs())
            .max(self.vanishing_combination.abs())
            .max(self.kappa_combination.abs())
    }
}

/// Evaluate the five identity residuals at the background state.
pub fn identity_suite(eos: &EosSpec, bg: &BackgroundState) -> Result<IdentityReport> {
    let (rho, theta) = (bg.rho_bar, bg.theta_bar);
    let (s_rho, s_theta) = eos.entropy_derivatives(rho, theta)?;
    let kappa = eos.transport(theta).kappa;
    let maxwell = s_rho + bg.p_theta / (rho * rho);
    let lambda_def = theta * bg.alpha * bg.p_theta - rho * bg.c_p * bg.lambda;
    let ts5a = bg.lambda / (1.0 - bg.lambda) - (bg.c_p / bg.c_v - 1.0);
    let vanishing_combination = -s_theta * bg.p_rho / bg.p_theta
        - s_rho * (bg.c_p * rho / (theta * bg.alpha * bg.p_theta) - 1.0);
    let kappa_combination = (s_rho * bg.p_theta / bg.p_rho - s_theta) * kappa / bg.c_p + kappa / theta;
    Ok(IdentityReport {
        maxwell,
        lambda_def,
        ts5a,
        vanishing_combination,
        kappa_combination,
    })
}

/// Max residual of the Gibbs relation over a 32 x 32 sample of the
/// rectangle, with central differences (relative step 1e-6):
/// |theta ds/dtheta - de/dtheta| and |theta ds/drho - (de/drho - p/rho^2)|.
pub fn verify_gibbs(eos: &EosSpec, rho_range: (f64, f64), theta_range: (f64, f64)) -> Result<f64> {
    verify_gibbs_with(
        |r, t| eos.pressure(r, t).unwrap_or(f64::NAN),
        |r, t| eos.internal_energy(r, t).unwrap_or(f64::NAN),
        |r, t| eos.entropy(r, t).unwrap_or(f64::NAN),
        rho_range,
        theta_range,
    )
}

/// Same check against arbitrary (possibly inconsistent) closures; used to
/// detect deliberately injected violations.
pub fn verify_gibbs_with(
    p: impl Fn(f64, f64) -> f64,
    e: impl Fn(f64, f64) -> f64,
    s: impl Fn(f64, f64) -> f64,
    rho_range: (f64, f64),
    theta_range: (f64, f64),
) -> Result<f64> {
    let n = 32;
    let mut max_res = 0.0f64;
    for jj in 0..n {
        for ii in 0..n {
            let rho = rho_range.0 + (rho_range.1 - rho_range.0) * (ii as f64 + 0.5) / n as f64;
            let theta = theta_range.0 + (theta_range.1 - theta_range.0) * (jj as f64 + 0.5) / n as f64;
            let hr = 1e-6 * rho;
            let ht = 1e-6 * theta;
            let ds_dt = (s(rho, theta + ht) - s(rho, theta - ht)) / (2.0 * ht);
            let de_dt = (e(rho, theta + ht) - e(rho, theta - ht)) / (2.0 * ht);
            let ds_dr = (s(rho + hr, theta) - s(rho - hr, theta)) / (2.0 * hr);
            let de_dr = (e(rho + hr, theta) - e(rho - hr, theta)) / (2.0 * hr);
            let r1 = theta * ds_dt - de_dt;
            let r2 = theta * ds_dr - (de_dr - p(rho, theta) / (rho * rho));
            if !r1.is_finite() || !r2.is_finite() {
                return Err(Error::Domain("non-finite Gibbs residual".into()));
            }
            max_res = max_res.max(r1.abs()).max(r2.abs());
        }
    }
    Ok(max_res)
}
