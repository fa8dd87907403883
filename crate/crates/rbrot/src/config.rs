//! Run configuration: strict-schema TOML with unknown keys rejected,
//! plus a small arithmetic-expression evaluator for general boundary
//! temperature profiles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::BoundaryFn;
use crate::grid::{Geometry, GridSpec};
use crate::limit::LimitParams;
use crate::primitive::PrimitiveParams;
use crate::thermo::{EosSpec, GasLaw, MonotoneTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EosBlock {
    /// "ideal", "capped", or "tabulated".
    pub gas_law: String,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default)]
    pub p_inf: Option<f64>,
    #[serde(default)]
    pub entropy_offset: f64,
    #[serde(default = "default_mu0")]
    pub mu0: f64,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_kappa0")]
    pub kappa0: f64,
    #[serde(default = "default_beta_cond")]
    pub beta_cond: f64,
    #[serde(default)]
    pub z_samples: Option<Vec<f64>>,
    #[serde(default)]
    pub p_samples: Option<Vec<f64>>,
}

fn default_a() -> f64 {
    1e-3
}
fn default_mu0() -> f64 {
    0.01
}
fn default_eta0() -> f64 {
    0.01
}
fn default_kappa0() -> f64 {
    0.1
}
fn default_beta_cond() -> f64 {
    7.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundBlock {
    pub rho_bar: f64,
    pub theta_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    pub r: f64,
    pub nx: usize,
    #[serde(default = "default_ny")]
    pub ny: usize,
    pub nz: usize,
}

fn default_geometry() -> Geometry {
    Geometry::Box
}
fn default_ny() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsBlock {
    #[serde(default = "default_g_vec")]
    pub g_vec: [f64; 3],
    #[serde(default)]
    pub beta_slip: f64,
    /// Constant plate temperatures with the linear lateral interpolation.
    #[serde(default = "default_t_bot")]
    pub t_bot: f64,
    #[serde(default)]
    pub t_top: f64,
    /// General boundary profile in x1, x2, x3; overrides t_bot/t_top.
    #[serde(default)]
    pub theta_b_expr: Option<String>,
}

fn default_g_vec() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}
fn default_t_bot() -> f64 {
    1.0
}

impl Default for PhysicsBlock {
    fn default() -> Self {
        PhysicsBlock {
            g_vec: default_g_vec(),
            beta_slip: 0.0,
            t_bot: default_t_bot(),
            t_top: 0.0,
            theta_b_expr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// Limit-system step; 0 selects the conductive bound automatically.
    #[serde(default)]
    pub dt_limit: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    /// Observer cadence in steps.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
}

fn default_cfl() -> f64 {
    0.4
}
fn default_t_final() -> f64 {
    0.25
}
fn default_snapshot_every() -> usize {
    10
}

impl Default for NumericsBlock {
    fn default() -> Self {
        NumericsBlock {
            cfl: default_cfl(),
            dt_limit: 0.0,
            t_final: default_t_final(),
            snapshot_every: default_snapshot_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Strictly decreasing list of scaling parameters.
    pub eps: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock { eps: vec![0.4, 0.2, 0.1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    /// Horizontal stream function psi(x1, x2); the initial velocity is
    /// its discrete MAC curl, exactly divergence-free. Choose psi with
    /// vanishing value and normal derivative on the lateral walls for
    /// no-slip-compatible data. Default: rest.
    #[serde(default)]
    pub psi_expr: Option<String>,
    /// Initial temperature deviation; must match theta_boundary on the
    /// walls. Default: the boundary profile itself (conduction state).
    #[serde(default)]
    pub t0_expr: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_outdir")]
    pub dir: String,
}

fn default_outdir() -> String {
    "out".to_string()
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: default_outdir() }
    }
}

/// Complete, validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub eos: EosBlock,
    pub background: BackgroundBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub physics: PhysicsBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Parse and validate; unknown keys and malformed values are rejected
/// with the TOML position information.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    // name the missing top-level blocks explicitly
    let probe: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for required in ["eos", "background", "grid"] {
        if !probe.contains_key(required) {
            return Err(Error::Config(format!("missing required block [{required}]")));
        }
    }
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn serialize_config(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        self.eos_spec()?;
        if self.sweep.eps.is_empty() {
            return Err(Error::Config("sweep.eps must not be empty".into()));
        }
        for w in self.sweep.eps.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(format!(
                    "sweep.eps must be strictly decreasing, got {:?}",
                    self.sweep.eps
                )));
            }
        }
        for &e in &self.sweep.eps {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Config(format!("sweep eps {e} outside (0, 1]")));
            }
        }
        if let Some(expr) = &self.physics.theta_b_expr {
            compile_expression(expr)?;
        }
        if let Some(expr) = &self.initial.psi_expr {
            compile_expression(expr)?;
        }
        if let Some(expr) = &self.initial.t0_expr {
            compile_expression(expr)?;
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        match self.grid.geometry {
            Geometry::Box => GridSpec::new_box(self.grid.r, self.grid.nx, self.grid.ny, self.grid.nz),
            Geometry::Slab => {
                if self.grid.ny != 1 {
                    return Err(Error::Config(format!(
                        "slab geometry requires ny = 1, got {}",
                        self.grid.ny
                    )));
                }
                GridSpec::new_slab(self.grid.r, self.grid.nx, self.grid.nz)
            }
        }
    }

    pub fn eos_spec(&self) -> Result<EosSpec> {
        let law = match self.eos.gas_law.as_str() {
            "ideal" => GasLaw::Ideal,
            "capped" => GasLaw::Capped {
                p_inf: self
                    .eos
                    .p_inf
                    .ok_or_else(|| Error::Config("capped gas law requires eos.p_inf".into()))?,
            },
            "tabulated" => {
                let z = self
                    .eos
                    .z_samples
                    .clone()
                    .ok_or_else(|| Error::Config("tabulated law requires eos.z_samples".into()))?;
                let p = self
                    .eos
                    .p_samples
                    .clone()
                    .ok_or_else(|| Error::Config("tabulated law requires eos.p_samples".into()))?;
                GasLaw::Tabulated(Arc::new(MonotoneTable::new(z, p)?))
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown gas_law {other:?}; expected ideal, capped, or tabulated"
                )))
            }
        };
        EosSpec::new(
            law,
            self.eos.a,
            self.eos.entropy_offset,
            self.eos.mu0,
            self.eos.eta0,
            self.eos.kappa0,
            self.eos.beta_cond,
        )
    }

    /// Initial temperature deviation; defaults to the boundary profile.
    pub fn initial_temperature(&self) -> Result<BoundaryFn> {
        match &self.initial.t0_expr {
            Some(expr) => {
                let compiled = compile_expression(expr)?;
                Ok(Arc::new(move |x, y, z| compiled.eval(x, y, z)))
            }
            None => self.theta_boundary(),
        }
    }

    /// Initial horizontal velocity as the discrete MAC curl of the
    /// configured stream function: u = d(psi)/dx2, v = -d(psi)/dx1 by
    /// exact face differences, so div_h u0 vanishes to rounding.
    pub fn initial_velocity(&self) -> Result<crate::ops::MacVel2> {
        let g = self.grid_spec()?;
        let mut vel = crate::ops::MacVel2::zeros(g.nx, g.ny);
        let Some(expr) = &self.initial.psi_expr else {
            return Ok(vel);
        };
        let psi = compile_expression(expr)?;
        if g.is_slab() {
            // invariance in x2: u = d(psi)/dx2 = 0 would make psi useless;
            // interpret psi as a profile for the tangential component
            // instead: v(x) = psi(x, 0), u stays 0
            for i in 0..g.nx {
                let v = psi.eval(g.xc(i), 0.0, 0.0);
                for j in 0..=g.ny {
                    let iv = vel.iv(i, j);
                    vel.v[iv] = v;
                }
            }
            return Ok(vel);
        }
        let (dx, dy) = (g.dx(), g.dy());
        for j in 0..g.ny {
            for i in 1..g.nx {
                let x = g.xf(i);
                let ylo = g.yf(j);
                let iu = vel.iu(i, j);
                vel.u[iu] = (psi.eval(x, ylo + dy, 0.0) - psi.eval(x, ylo, 0.0)) / dy;
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                let xlo = g.xf(i);
                let y = g.yf(j);
                let iv = vel.iv(i, j);
                vel.v[iv] = -(psi.eval(xlo + dx, y, 0.0) - psi.eval(xlo, y, 0.0)) / dx;
            }
        }
        Ok(vel)
    }

    /// The boundary temperature deviation as a smooth function on the
    /// closure: either the configured expression or the linear profile
    /// t_bot (1 - x3) + t_top x3.
    pub fn theta_boundary(&self) -> Result<BoundaryFn> {
        if let Some(expr) = &self.physics.theta_b_expr {
            let compiled = compile_expression(expr)?;
            Ok(Arc::new(move |x, y, z| compiled.eval(x, y, z)))
        } else {
            let (bot, top) = (self.physics.t_bot, self.physics.t_top);
            Ok(Arc::new(move |_, _, z| bot * (1.0 - z) + top * z))
        }
    }

    pub fn limit_params(&self) -> Result<LimitParams> {
        let eos = self.eos_spec()?;
        let background = eos.coefficients(self.background.rho_bar, self.background.theta_bar)?;
        let grid = self.grid_spec()?;
        let kappa = eos.transport(background.theta_bar).kappa;
        let cap = 0.25 * grid.dx().min(grid.dz()).powi(2) * background.rho_bar * background.c_p / kappa;
        let dt = if self.numerics.dt_limit > 0.0 {
            self.numerics.dt_limit
        } else {
            // integer number of steps to land on t_final exactly
            let n = (self.numerics.t_final / (0.5 * cap)).ceil().max(1.0);
            self.numerics.t_final / n
        };
        let p = LimitParams {
            background,
            eos,
            grid,
            g_vec: self.physics.g_vec,
            beta_slip: self.physics.beta_slip,
            dt,
            t_final: self.numerics.t_final,
            theta_boundary: self.theta_boundary()?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn primitive_params(&self, eps: f64) -> Result<PrimitiveParams> {
        let eos = self.eos_spec()?;
        let background = eos.coefficients(self.background.rho_bar, self.background.theta_bar)?;
        let p = PrimitiveParams {
            eps,
            eos,
            background,
            grid: self.grid_spec()?,
            g_vec: self.physics.g_vec,
            theta_boundary: self.theta_boundary()?,
            cfl: self.numerics.cfl,
            t_final: self.numerics.t_final,
            include_centrifugal: true,
        };
        p.validate()?;
        Ok(p)
    }
}

// ---------------------------------------------------------------------
// Expression evaluator (x1, x2, x3 plus elementary functions)
// ---------------------------------------------------------------------

/// Compiled arithmetic expression over the coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(u8),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
}

impl Expr {
    pub fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(0) => x,
            Expr::Var(1) => y,
            Expr::Var(_) => z,
            Expr::Neg(e) => -e.eval(x, y, z),
            Expr::Add(a, b) => a.eval(x, y, z) + b.eval(x, y, z),
            Expr::Sub(a, b) => a.eval(x, y, z) - b.eval(x, y, z),
            Expr::Mul(a, b) => a.eval(x, y, z) * b.eval(x, y, z),
            Expr::Div(a, b) => a.eval(x, y, z) / b.eval(x, y, z),
            Expr::Pow(a, b) => a.eval(x, y, z).powf(b.eval(x, y, z)),
            Expr::Call(f, e) => {
                let v = e.eval(x, y, z);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tan => v.tan(),
                    Func::Exp => v.exp(),
                    Func::Ln => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => v.abs(),
                    Func::Tanh => v.tanh(),
                }
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

/// Compile an expression in the variables x1/x2/x3 (aliases x/y/z).
pub fn compile_expression(text: &str) -> Result<Expr> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let e = p.parse_expr(0)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(Error::Config(format!(
            "unexpected trailing input at byte {} in expression {text:?}",
            p.pos
        )));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn parse_expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = self.parse_prefix()?;
        loop {
            let op = match self.peek() {
                Some(c @ (b'+' | b'-' | b'*' | b'/' | b'^')) => c,
                _ => break,
            };
            let (lbp, rbp) = match op {
                b'+' | b'-' => (1, 2),
                b'*' | b'/' => (3, 4),
                b'^' => (6, 5), // right associative
                _ => unreachable!(),
            };
            if lbp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.parse_expr(rbp)?;
            lhs = match op {
                b'+' => Expr::Add(Box::new(lhs), Box::new(rhs)),
                b'-' => Expr::Sub(Box::new(lhs), Box::new(rhs)),
                b'*' => Expr::Mul(Box::new(lhs), Box::new(rhs)),
                b'/' => Expr::Div(Box::new(lhs), Box::new(rhs)),
                b'^' => Expr::Pow(Box::new(lhs), Box::new(rhs)),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }

    fn parse_prefix(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.parse_expr(5)?)))
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.parse_expr(0)?;
                if self.peek() != Some(b')') {
                    return Err(Error::Config("unbalanced parenthesis in expression".into()));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() => self.parse_ident(),
            other => Err(Error::Config(format!(
                "unexpected token {:?} at byte {} in expression",
                other.map(|c| c as char),
                self.pos
            ))),
        }
    }

    fn parse_number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                self.pos += 1;
                if let Some(b'+' | b'-') = self.src.get(self.pos) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| Error::Config(format!("bad number {text:?} in expression")))
    }

    fn parse_ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "x" | "x1" => return Ok(Expr::Var(0)),
            "y" | "x2" => return Ok(Expr::Var(1)),
            "z" | "x3" => return Ok(Expr::Var(2)),
            "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
            _ => {}
        }
        let func = match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            _ => return Err(Error::Config(format!("unknown identifier {name:?} in expression"))),
        };
        if self.peek() != Some(b'(') {
            return Err(Error::Config(format!("function {name} needs parentheses")));
        }
        self.pos += 1;
        let arg = self.parse_expr(0)?;
        if self.peek() != Some(b')') {
            return Err(Error::Config(format!("unbalanced parenthesis after {name}(")));
        }
        self.pos += 1;
        Ok(Expr::Call(func, Box::new(arg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[eos]
gas_law = "ideal"

[background]
rho_bar = 1.0
theta_bar = 1.0

[grid]
r = 1.0
nx = 16
ny = 16
nz = 16
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.numerics.cfl, 0.4);
        assert_eq!(cfg.sweep.eps, vec![0.4, 0.2, 0.1]);
        assert_eq!(cfg.physics.t_bot, 1.0);
        assert_eq!(cfg.output.dir, "out");
        assert!(cfg.limit_params().is_ok());
        assert!(cfg.primitive_params(0.2).is_ok());
    }

    #[test]
    fn missing_block_is_named() {
        let text = MINIMAL.replace("[eos]\ngas_law = \"ideal\"\n", "");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("[eos]"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[numerics]\nmystery_knob = 3\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("mystery_knob"), "{err}");
    }

    #[test]
    fn eps_must_strictly_decrease() {
        let text = format!("{MINIMAL}\n[sweep]\neps = [0.1, 0.2]\n");
        assert!(parse_config(&text).is_err());
        let text2 = format!("{MINIMAL}\n[sweep]\neps = [0.2, 0.2]\n");
        assert!(parse_config(&text2).is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let text = format!(
            "{MINIMAL}\n[physics]\ng_vec = [0.0, 0.1, -0.5]\nbeta_slip = 0.25\nt_bot = 2.0\n\n[numerics]\ncfl = 0.3\nt_final = 0.125\n"
        );
        let cfg = parse_config(&text).unwrap();
        let serialized = serialize_config(&cfg).unwrap();
        let cfg2 = parse_config(&serialized).unwrap();
        assert_eq!(cfg, cfg2);
        // and the serialization is a fixed point
        assert_eq!(serialized, serialize_config(&cfg2).unwrap());
    }

    #[test]
    fn boundary_profile_linear_and_expression() {
        let cfg = parse_config(MINIMAL).unwrap();
        let f = cfg.theta_boundary().unwrap();
        assert!((f(0.3, -0.2, 0.0) - 1.0).abs() < 1e-15);
        assert!((f(0.3, -0.2, 1.0) - 0.0).abs() < 1e-15);
        assert!((f(0.0, 0.0, 0.25) - 0.75).abs() < 1e-15);

        let text = format!("{MINIMAL}\n[physics]\ntheta_b_expr = \"1 - x3 + 0.5*sin(pi*x1)\"\n");
        let cfg2 = parse_config(&text).unwrap();
        let g = cfg2.theta_boundary().unwrap();
        assert!((g(0.5, 0.0, 0.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn expression_parser_cases() {
        let e = compile_expression("2 + 3*4^2 - 1").unwrap();
        assert!((e.eval(0.0, 0.0, 0.0) - 49.0).abs() < 1e-15);
        let e2 = compile_expression("-x1^2 + exp(0)").unwrap();
        assert!((e2.eval(2.0, 0.0, 0.0) - (-3.0)).abs() < 1e-15);
        let e3 = compile_expression("sqrt(abs(-9))").unwrap();
        assert!((e3.eval(0.0, 0.0, 0.0) - 3.0).abs() < 1e-15);
        // right-assoc power
        let e4 = compile_expression("2^3^2").unwrap();
        assert!((e4.eval(0.0, 0.0, 0.0) - 512.0).abs() < 1e-12);
        assert!(compile_expression("2 +").is_err());
        assert!(compile_expression("foo(1)").is_err());
        assert!(compile_expression("(1").is_err());
    }

    #[test]
    fn bad_gas_law_rejected() {
        let text = MINIMAL.replace("\"ideal\"", "\"plasma\"");
        assert!(parse_config(&text).is_err());
        let capped_no_pinf = MINIMAL.replace("\"ideal\"", "\"capped\"");
        assert!(parse_config(&capped_no_pinf).is_err());
    }
}
