//! Cell-centered scalar fields and MAC-staggered vector fields.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Boundary-value function of position on a face.
pub type BoundaryFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// The six box faces. In slab mode the y-faces carry no boundary:
/// fields are invariant in x2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    XLo,
    XHi,
    YLo,
    YHi,
    ZLo,
    ZHi,
}

pub const FACES: [Face; 6] = [Face::XLo, Face::XHi, Face::YLo, Face::YHi, Face::ZLo, Face::ZHi];

impl Face {
    pub fn axis(&self) -> usize {
        match self {
            Face::XLo | Face::XHi => 0,
            Face::YLo | Face::YHi => 1,
            Face::ZLo | Face::ZHi => 2,
        }
    }

    pub fn is_low(&self) -> bool {
        matches!(self, Face::XLo | Face::YLo | Face::ZLo)
    }

    pub fn index(&self) -> usize {
        match self {
            Face::XLo => 0,
            Face::XHi => 1,
            Face::YLo => 2,
            Face::YHi => 3,
            Face::ZLo => 4,
            Face::ZHi => 5,
        }
    }
}

/// Per-face boundary treatment for a scalar field.
#[derive(Clone)]
pub enum BoundaryKind {
    /// Prescribed face value, as a function of the face point.
    Dirichlet(BoundaryFn),
    /// Zero normal derivative.
    NeumannZero,
    /// Solid wall with no scalar condition; one-sided extrapolation.
    Wall,
}

impl BoundaryKind {
    pub fn dirichlet_const(v: f64) -> Self {
        BoundaryKind::Dirichlet(Arc::new(move |_, _, _| v))
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryKind::Dirichlet(_))
    }
}

impl std::fmt::Debug for BoundaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryKind::Dirichlet(_) => write!(f, "Dirichlet(fn)"),
            BoundaryKind::NeumannZero => write!(f, "NeumannZero"),
            BoundaryKind::Wall => write!(f, "Wall"),
        }
    }
}

/// Cell-centered scalar lattice with per-face boundary kinds.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub bc: [BoundaryKind; 6],
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.cell_count()],
            bc: [
                BoundaryKind::Wall,
                BoundaryKind::Wall,
                BoundaryKind::Wall,
                BoundaryKind::Wall,
                BoundaryKind::Wall,
                BoundaryKind::Wall,
            ],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut s = Self::zeros(grid);
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let [x, y, z] = grid.center(i, j, k);
                    s.values[grid.idx(i, j, k)] = f(x, y, z);
                }
            }
        }
        s
    }

    pub fn constant(grid: GridSpec, v: f64) -> Self {
        let mut s = Self::zeros(grid);
        s.values.fill(v);
        s
    }

    /// Same Dirichlet data on every face.
    pub fn with_dirichlet_all(mut self, f: BoundaryFn) -> Self {
        for face in FACES {
            self.bc[face.index()] = BoundaryKind::Dirichlet(f.clone());
        }
        self
    }

    pub fn with_bc(mut self, face: Face, kind: BoundaryKind) -> Self {
        self.bc[face.index()] = kind;
        self
    }

    pub fn set_bc(&mut self, face: Face, kind: BoundaryKind) {
        self.bc[face.index()] = kind;
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.idx(i, j, k)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        let idx = self.grid.idx(i, j, k);
        &mut self.values[idx]
    }

    /// Face point aligned with the cell row (i,j,k) on `face`, and the
    /// boundary value there if the face is Dirichlet.
    pub fn dirichlet_value(&self, face: Face, i: usize, j: usize, k: usize) -> Option<f64> {
        let g = &self.grid;
        match &self.bc[face.index()] {
            BoundaryKind::Dirichlet(f) => {
                let p = match face {
                    Face::XLo => [g.xf(0), g.yc(j), g.zc(k)],
                    Face::XHi => [g.xf(g.nx), g.yc(j), g.zc(k)],
                    Face::YLo => [g.xc(i), g.yf(0), g.zc(k)],
                    Face::YHi => [g.xc(i), g.yf(g.ny), g.zc(k)],
                    Face::ZLo => [g.xc(i), g.yc(j), g.zf(0)],
                    Face::ZHi => [g.xc(i), g.yc(j), g.zf(g.nz)],
                };
                Some(f(p[0], p[1], p[2]))
            }
            _ => None,
        }
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain("scalar field contains non-finite values".into()))
        }
    }
}

/// Face-normal velocity components on a MAC arrangement:
/// u on x-faces (nx+1, ny, nz), v on y-faces (nx, ny+1, nz),
/// w on z-faces (nx, ny, nz+1).
#[derive(Clone, Debug)]
pub struct VectorField {
    pub grid: GridSpec,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        VectorField {
            grid,
            u: vec![0.0; (grid.nx + 1) * grid.ny * grid.nz],
            v: vec![0.0; grid.nx * (grid.ny + 1) * grid.nz],
            w: vec![0.0; grid.nx * grid.ny * (grid.nz + 1)],
        }
    }

    #[inline]
    pub fn iu(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.grid.nx + 1) * (j + self.grid.ny * k)
    }

    #[inline]
    pub fn iv(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.grid.nx * (j + (self.grid.ny + 1) * k)
    }

    #[inline]
    pub fn iw(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.grid.nx * (j + self.grid.ny * k)
    }

    /// Zero the normal components on impermeable faces
    /// (all x/y-wall faces and both z-faces).
    pub fn enforce_impermeable(&mut self) {
        let g = self.grid;
        for k in 0..g.nz {
            for j in 0..g.ny {
                let a = self.iu(0, j, k);
                let b = self.iu(g.nx, j, k);
                self.u[a] = 0.0;
                self.u[b] = 0.0;
            }
        }
        if !g.is_slab() {
            for k in 0..g.nz {
                for i in 0..g.nx {
                    let a = self.iv(i, 0, k);
                    let b = self.iv(i, g.ny, k);
                    self.v[a] = 0.0;
                    self.v[b] = 0.0;
                }
            }
        }
        for j in 0..g.ny {
            for i in 0..g.nx {
                let a = self.iw(i, j, 0);
                let b = self.iw(i, j, g.nz);
                self.w[a] = 0.0;
                self.w[b] = 0.0;
            }
        }
    }
}
