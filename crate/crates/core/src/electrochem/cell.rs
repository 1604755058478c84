//! Isothermal Doyle-Fuller-Newman cell on a finite-volume mesh.
//!
//! The through-cell direction has 20 cells per electrode and 20 in the
//! separator. Each electrode cell carries one spherical particle with 20
//! shells. One implicit-Euler step eliminates the particles (their surface
//! concentration is affine in the interfacial flux), then solves the coupled
//! electrolyte / potential / Butler-Volmer system with Newton's method on a
//! banded Jacobian.
//!
//! Unknown ordering per x-cell: `[c_e, φ_e, φ_s, j]` in electrode cells and
//! `[c_e, φ_e]` in separator cells. The flux `j` is the molar flux out of the
//! particle surface, so discharge gives `j > 0` in the negative electrode.

use serde::{Deserialize, Serialize};

use super::band::BandMatrix;
use super::params::{Electrode, ElectrodeView, ParameterSet, FARADAY, GAS_CONSTANT};
use super::particle::{ParticleStepper, ShellGrid};
use crate::error::{Error, Result};

/// Cells per electrode along x (and in the separator).
pub const X_CELLS: usize = 20;
/// Shells per particle.
pub const R_SHELLS: usize = 20;
/// Electrolyte cells across the whole sandwich.
pub const E_CELLS: usize = 3 * X_CELLS;
/// Entries of one particle-concentration image.
pub const GRID_LEN: usize = X_CELLS * R_SHELLS;

const UNKNOWNS: usize = 4 * X_CELLS * 2 + 2 * X_CELLS;
const KL: usize = 5;
const KU: usize = 5;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 30;
const THETA_FLOOR: f64 = 1e-12;
const PHYSICALITY_TOL: f64 = 1e-8;

/// Full simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    /// Scaled negative-particle concentrations, x-major (`x * 20 + r`).
    pub c_n: Vec<f64>,
    /// Scaled positive-particle concentrations, same layout.
    pub c_p: Vec<f64>,
    /// Electrolyte concentration, mol/m³.
    pub c_e: Vec<f64>,
    pub phi_e: Vec<f64>,
    pub phi_s_n: Vec<f64>,
    pub phi_s_p: Vec<f64>,
    /// Interfacial molar flux per electrode cell, mol/m²/s.
    pub flux_n: Vec<f64>,
    pub flux_p: Vec<f64>,
    /// Terminal voltage, V.
    pub voltage: f64,
    /// Simulation time, s.
    pub time: f64,
}

impl CellState {
    pub fn mean_stoichiometry(&self, electrode: Electrode) -> f64 {
        let grid = ShellGrid::new(1.0, R_SHELLS);
        let field = match electrode {
            Electrode::Negative => &self.c_n,
            Electrode::Positive => &self.c_p,
        };
        field.chunks(R_SHELLS).map(|p| grid.mean(p)).sum::<f64>() / X_CELLS as f64
    }

    /// Linear blend `(1 - w) self + w other` of every field.
    pub(crate) fn blend(&self, other: &CellState, w: f64) -> CellState {
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect() };
        CellState {
            c_n: mix(&self.c_n, &other.c_n),
            c_p: mix(&self.c_p, &other.c_p),
            c_e: mix(&self.c_e, &other.c_e),
            phi_e: mix(&self.phi_e, &other.phi_e),
            phi_s_n: mix(&self.phi_s_n, &other.phi_s_n),
            phi_s_p: mix(&self.phi_s_p, &other.phi_s_p),
            flux_n: mix(&self.flux_n, &other.flux_n),
            flux_p: mix(&self.flux_p, &other.flux_p),
            voltage: self.voltage + w * (other.voltage - self.voltage),
            time: self.time + w * (other.time - self.time),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Negative,
    Separator,
    Positive,
}

fn region(i: usize) -> Region {
    match i / X_CELLS {
        0 => Region::Negative,
        1 => Region::Separator,
        _ => Region::Positive,
    }
}

#[inline]
fn base(i: usize) -> usize {
    match region(i) {
        Region::Negative => 4 * i,
        Region::Separator => 4 * X_CELLS + 2 * (i - X_CELLS),
        Region::Positive => 6 * X_CELLS + 4 * (i - 2 * X_CELLS),
    }
}

const CE: usize = 0;
const PE: usize = 1;
const PS: usize = 2;
const JF: usize = 3;

/// Precomputed mesh geometry and transport coefficients.
#[derive(Debug, Clone)]
struct Mesh {
    dx: [f64; E_CELLS],
    eps: [f64; E_CELLS],
    eps_b: [f64; E_CELLS],
    area: [f64; E_CELLS],
    /// Effective electrolyte diffusion conductance across face `f` (between cells `f` and `f + 1`).
    diff_face: [f64; E_CELLS - 1],
    sigma_eff: [f64; 2],
    shells: [ShellGrid; 2],
}

impl Mesh {
    fn new(p: &ParameterSet) -> Self {
        let mut dx = [0.0; E_CELLS];
        let mut eps = [0.0; E_CELLS];
        let mut area = [0.0; E_CELLS];
        for i in 0..E_CELLS {
            let (len, e, a) = match region(i) {
                Region::Negative => (p.L_n, p.eps_n, p.a_n),
                Region::Separator => (p.L_sep, p.eps_sep, 0.0),
                Region::Positive => (p.L_p, p.eps_p, p.a_p),
            };
            dx[i] = len / X_CELLS as f64;
            eps[i] = e;
            area[i] = a;
        }
        let eps_b = eps.map(|e| e.powf(p.b));
        let mut diff_face = [0.0; E_CELLS - 1];
        for f in 0..E_CELLS - 1 {
            let left = dx[f] / (2.0 * p.D_e * eps_b[f]);
            let right = dx[f + 1] / (2.0 * p.D_e * eps_b[f + 1]);
            diff_face[f] = 1.0 / (left + right);
        }
        let sigma_eff = [Electrode::Negative, Electrode::Positive].map(|e| {
            let v = p.electrode(e);
            v.sigma * v.solid_fraction.powf(p.b)
        });
        Self {
            dx,
            eps,
            eps_b,
            area,
            diff_face,
            sigma_eff,
            shells: [ShellGrid::new(p.R_n, R_SHELLS), ShellGrid::new(p.R_p, R_SHELLS)],
        }
    }
}

/// Result of advancing the cell over one requested interval.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Advanced(CellState),
    /// The terminal voltage reached the cutoff inside the interval.
    Failed(FailureEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureEvent {
    /// Interpolated time at which the voltage reached the cutoff.
    pub time: f64,
    /// State at `time`, linearly interpolated between sub-steps, with `voltage = V_cut`.
    pub state: CellState,
}

/// P2D simulator bound to one parameter set.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: ParameterSet,
    mesh: Mesh,
    /// Smallest sub-step reached by halving before giving up.
    pub min_dt: f64,
}

struct Workspace {
    jac: BandMatrix,
    res: Vec<f64>,
    col_scale: Vec<f64>,
    /// Surface stoichiometry affine coefficients per x-cell (electrode cells only).
    surf_a: [f64; E_CELLS],
    surf_b: [f64; E_CELLS],
    base_n: Vec<f64>,
    base_p: Vec<f64>,
}

impl Simulator {
    pub fn new(params: ParameterSet) -> Result<Self> {
        params.validate()?;
        let mesh = Mesh::new(&params);
        Ok(Self {
            params,
            mesh,
            min_dt: 1.0 / 16.0,
        })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Fully charged cell at rest.
    pub fn init_full_charge(&self) -> CellState {
        let p = &self.params;
        let u_n = p.U_n.eval(p.x_n0);
        let u_p = p.U_p.eval(p.x_p0);
        CellState {
            c_n: vec![p.x_n0; GRID_LEN],
            c_p: vec![p.x_p0; GRID_LEN],
            c_e: vec![p.c_e0; E_CELLS],
            phi_e: vec![-u_n; E_CELLS],
            phi_s_n: vec![0.0; X_CELLS],
            phi_s_p: vec![u_p - u_n; X_CELLS],
            flux_n: vec![0.0; X_CELLS],
            flux_p: vec![0.0; X_CELLS],
            voltage: u_p - u_n,
            time: 0.0,
        }
    }

    /// Total cyclable lithium per unit plate area (mol/m²): solid plus electrolyte.
    pub fn lithium_inventory(&self, state: &CellState) -> f64 {
        let p = &self.params;
        let mut total = 0.0;
        for i in 0..E_CELLS {
            total += self.mesh.eps[i] * self.mesh.dx[i] * state.c_e[i];
        }
        for (electrode, field) in [(Electrode::Negative, &state.c_n), (Electrode::Positive, &state.c_p)] {
            let view = p.electrode(electrode);
            let grid = &self.mesh.shells[electrode as usize];
            let dx = view.thickness / X_CELLS as f64;
            for particle in field.chunks(R_SHELLS) {
                total += view.solid_fraction * dx * view.c_max * grid.mean(particle);
            }
        }
        total
    }

    fn views(&self) -> [ElectrodeView<'_>; 2] {
        [
            self.params.electrode(Electrode::Negative),
            self.params.electrode(Electrode::Positive),
        ]
    }

    /// Advances `state` by `dt` seconds with the applied C-rate ramping linearly
    /// from `i_start` to `i_end`. Sub-steps that fail to converge are halved
    /// down to `min_dt`.
    pub fn step(&self, state: &CellState, i_start: f64, i_end: f64, dt: f64) -> Result<StepOutcome> {
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
        }
        let mut ws = self.workspace();
        self.advance(state, i_start, i_end, dt, &mut ws)
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            jac: BandMatrix::new(UNKNOWNS, KL, KU),
            res: vec![0.0; UNKNOWNS],
            col_scale: vec![0.0; UNKNOWNS],
            surf_a: [0.0; E_CELLS],
            surf_b: [0.0; E_CELLS],
            base_n: vec![0.0; GRID_LEN],
            base_p: vec![0.0; GRID_LEN],
        }
    }

    /// Recursive interval advance: `i_start`/`i_end` are the C-rates at the
    /// interval ends. Tries one implicit step of length `span`, halving on failure.
    fn advance(
        &self,
        state: &CellState,
        i_start: f64,
        i_end: f64,
        span: f64,
        ws: &mut Workspace,
    ) -> Result<StepOutcome> {
        match self.implicit_step(state, i_end, span, ws) {
            Ok(next) => Ok(self.check_cutoff(state, next)),
            Err(err @ (Error::Solver { .. } | Error::Physicality { .. })) => {
                let half = span / 2.0;
                if half < self.min_dt * (1.0 - 1e-12) {
                    return Err(err);
                }
                let i_mid = 0.5 * (i_start + i_end);
                match self.advance(state, i_start, i_mid, half, ws)? {
                    StepOutcome::Advanced(mid) => self.advance(&mid, i_mid, i_end, half, ws),
                    failed => Ok(failed),
                }
            }
            Err(other) => Err(other),
        }
    }

    fn check_cutoff(&self, prev: &CellState, next: CellState) -> StepOutcome {
        let v_cut = self.params.V_cut;
        if next.voltage > v_cut {
            return StepOutcome::Advanced(next);
        }
        let w = if prev.voltage > next.voltage {
            ((prev.voltage - v_cut) / (prev.voltage - next.voltage)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let mut state = prev.blend(&next, w);
        state.voltage = v_cut;
        StepOutcome::Failed(FailureEvent {
            time: state.time,
            state,
        })
    }

    /// One backward-Euler step of length `dt` ending at applied C-rate `c_rate`.
    fn implicit_step(&self, state: &CellState, c_rate: f64, dt: f64, ws: &mut Workspace) -> Result<CellState> {
        let p = &self.params;
        let current = p.current_density(c_rate);
        let views = self.views();
        let steppers =
            [0, 1].map(|e| ParticleStepper::new(&self.mesh.shells[e], views[e].diffusivity, views[e].c_max, dt));
        for k in 0..X_CELLS {
            let span = k * R_SHELLS..(k + 1) * R_SHELLS;
            steppers[0].base(&state.c_n[span.clone()], &mut ws.base_n[span.clone()]);
            let (a, b) = steppers[0].surface_affine(&ws.base_n[span.clone()]);
            ws.surf_a[k] = a;
            ws.surf_b[k] = b;
            steppers[1].base(&state.c_p[span.clone()], &mut ws.base_p[span.clone()]);
            let (a, b) = steppers[1].surface_affine(&ws.base_p[span]);
            ws.surf_a[2 * X_CELLS + k] = a;
            ws.surf_b[2 * X_CELLS + k] = b;
        }

        let mut y = vec![0.0; UNKNOWNS];
        for i in 0..E_CELLS {
            let b = base(i);
            y[b + CE] = state.c_e[i];
            y[b + PE] = state.phi_e[i];
            ws.col_scale[b + CE] = p.c_e0;
            ws.col_scale[b + PE] = 1.0;
            match region(i) {
                Region::Negative => {
                    y[b + PS] = state.phi_s_n[i];
                    y[b + JF] = state.flux_n[i];
                }
                Region::Positive => {
                    y[b + PS] = state.phi_s_p[i - 2 * X_CELLS];
                    y[b + JF] = state.flux_p[i - 2 * X_CELLS];
                }
                Region::Separator => continue,
            }
            ws.col_scale[b + PS] = 1.0;
            ws.col_scale[b + JF] = 1e-5;
        }

        let mut dy = vec![0.0; UNKNOWNS];
        let mut residual_norm = f64::INFINITY;
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            self.assemble(&y, state, current, dt, ws);
            let mut norm = 0.0f64;
            for i in 0..UNKNOWNS {
                let scale = ws.jac.row_max_scaled(i, &ws.col_scale);
                let r = if scale > 0.0 { 1.0 / scale } else { 1.0 };
                ws.jac.scale_row(i, r);
                ws.res[i] *= r;
                norm = norm.max(ws.res[i].abs());
            }
            if !norm.is_finite() {
                break;
            }
            residual_norm = norm;
            if norm < NEWTON_TOL {
                converged = true;
                break;
            }
            for j in 0..UNKNOWNS {
                ws.jac.scale_col(j, ws.col_scale[j]);
            }
            for i in 0..UNKNOWNS {
                dy[i] = -ws.res[i];
            }
            if ws.jac.solve_in_place(&mut dy).is_none() {
                break;
            }
            for j in 0..UNKNOWNS {
                dy[j] *= ws.col_scale[j];
            }
            let tau = self.damping(&y, &dy, ws);
            for j in 0..UNKNOWNS {
                y[j] += tau * dy[j];
            }
        }
        if !converged {
            return Err(Error::Solver {
                time: state.time + dt,
                residual: residual_norm,
            });
        }
        self.unpack(&y, state, current, dt, &steppers, ws)
    }

    /// Fraction-to-boundary damping keeping c_e and surface stoichiometries feasible.
    fn damping(&self, y: &[f64], dy: &[f64], ws: &Workspace) -> f64 {
        let mut tau = 1.0f64;
        for i in 0..E_CELLS {
            let b = base(i);
            let c = y[b + CE];
            let d = dy[b + CE];
            if c + d <= 0.0 {
                tau = tau.min(0.9 * c / -d);
            }
            if region(i) != Region::Separator {
                let j = y[b + JF];
                let theta = ws.surf_a[i] + ws.surf_b[i] * j;
                let step = ws.surf_b[i] * dy[b + JF];
                if theta + step <= 0.0 && step < 0.0 {
                    tau = tau.min(0.9 * theta.max(0.0) / -step);
                } else if theta + step >= 1.0 && step > 0.0 {
                    tau = tau.min(0.9 * (1.0 - theta).max(0.0) / step);
                }
            }
        }
        tau.max(1e-3)
    }

    fn assemble(&self, y: &[f64], old: &CellState, current: f64, dt: f64, ws: &mut Workspace) {
        let p = &self.params;
        let m = &self.mesh;
        let views = self.views();
        let rt_f = GAS_CONSTANT * p.T / FARADAY;
        let diffusion_pot = 2.0 * rt_f * (1.0 - p.t_plus);
        ws.jac.clear();
        ws.res.fill(0.0);
        let jac = &mut ws.jac;
        let res = &mut ws.res;

        // effective electrolyte conductivity per cell and its c_e derivative
        let mut kap = [0.0; E_CELLS];
        let mut dkap = [0.0; E_CELLS];
        for i in 0..E_CELLS {
            let (k, dk) = p.kappa.eval_with_slope(y[base(i) + CE]);
            kap[i] = k * m.eps_b[i];
            dkap[i] = dk * m.eps_b[i];
        }

        for i in 0..E_CELLS {
            let b = base(i);
            let c = y[b + CE];
            // accumulation
            let acc = m.eps[i] * m.dx[i] / dt;
            res[b + CE] += acc * (c - old.c_e[i]);
            jac.add(b + CE, b + CE, acc);
        }

        // face fluxes
        for f in 0..E_CELLS - 1 {
            let (bl, br) = (base(f), base(f + 1));
            let (cl, cr) = (y[bl + CE], y[br + CE]);
            // mass: N = D (c_l - c_r), leaves left cell, enters right
            let d = m.diff_face[f];
            let flux = d * (cl - cr);
            res[bl + CE] += flux;
            res[br + CE] -= flux;
            jac.add(bl + CE, bl + CE, d);
            jac.add(bl + CE, br + CE, -d);
            jac.add(br + CE, bl + CE, -d);
            jac.add(br + CE, br + CE, d);

            // charge: i_e = G [(φ_l - φ_r) - β (ln c_l - ln c_r)]
            let hl = m.dx[f] / (2.0 * kap[f]);
            let hr = m.dx[f + 1] / (2.0 * kap[f + 1]);
            let g = 1.0 / (hl + hr);
            let dg_dcl = g * g * m.dx[f] / (2.0 * kap[f] * kap[f]) * dkap[f];
            let dg_dcr = g * g * m.dx[f + 1] / (2.0 * kap[f + 1] * kap[f + 1]) * dkap[f + 1];
            let bracket = (y[bl + PE] - y[br + PE]) - diffusion_pot * (cl.ln() - cr.ln());
            let ie = g * bracket;
            let d_cl = dg_dcl * bracket - g * diffusion_pot / cl;
            let d_cr = dg_dcr * bracket + g * diffusion_pot / cr;
            for (row, sign) in [(bl + PE, 1.0), (br + PE, -1.0)] {
                res[row] += sign * ie;
                jac.add(row, bl + PE, sign * g);
                jac.add(row, br + PE, -sign * g);
                jac.add(row, bl + CE, sign * d_cl);
                jac.add(row, br + CE, sign * d_cr);
            }
        }

        // electrode cells: sources, solid charge, Butler-Volmer
        for (e, offset) in [(0usize, 0usize), (1, 2 * X_CELLS)] {
            let view = &views[e];
            let sig = m.sigma_eff[e];
            let h = view.thickness / X_CELLS as f64;
            let cond = sig / h;
            for k in 0..X_CELLS {
                let i = offset + k;
                let b = base(i);
                let a = m.area[i];
                let j = y[b + JF];

                // electrolyte sources
                res[b + CE] -= (1.0 - p.t_plus) * a * j * h;
                jac.add(b + CE, b + JF, -(1.0 - p.t_plus) * a * h);
                res[b + PE] -= a * FARADAY * j * h;
                jac.add(b + PE, b + JF, -a * FARADAY * h);

                // solid charge: i_s(k+1/2) - i_s(k-1/2) + a F j h
                let gauge = e == 0 && k == 0;
                if gauge {
                    res[b + PS] = y[b + PS];
                    jac.add(b + PS, b + PS, 1.0);
                } else {
                    let mut r = a * FARADAY * j * h;
                    jac.add(b + PS, b + JF, a * FARADAY * h);
                    // right face
                    if k + 1 < X_CELLS {
                        let bn = base(i + 1);
                        r += cond * (y[b + PS] - y[bn + PS]);
                        jac.add(b + PS, b + PS, cond);
                        jac.add(b + PS, bn + PS, -cond);
                    } else if e == 1 {
                        r += current;
                    }
                    // left face
                    if k > 0 {
                        let bp = base(i - 1);
                        r -= cond * (y[bp + PS] - y[b + PS]);
                        jac.add(b + PS, bp + PS, -cond);
                        jac.add(b + PS, b + PS, cond);
                    } else if e == 0 {
                        r -= current;
                    }
                    res[b + PS] = r;
                }

                // Butler-Volmer in inverse form:
                // φ_s - φ_e - U(θ) - 2RT/F asinh(F j / (2 j0)) = 0
                let theta_raw = ws.surf_a[i] + ws.surf_b[i] * j;
                let theta = theta_raw.clamp(THETA_FLOOR, 1.0 - THETA_FLOOR);
                let clamped = theta != theta_raw;
                let (u, du) = view.ocp.eval_with_slope(theta_raw);
                let ce = y[b + CE].max(1e-12);
                let j0 = view.rate * ce.sqrt() * view.c_max * (theta * (1.0 - theta)).sqrt();
                let z = FARADAY * j / (2.0 * j0);
                let root = (1.0 + z * z).sqrt();
                let asinh = z.asinh();
                res[b + JF] = y[b + PS] - y[b + PE] - u - 2.0 * rt_f * asinh;
                jac.add(b + JF, b + PS, 1.0);
                jac.add(b + JF, b + PE, -1.0);
                // d asinh / d j0 = -z / (j0 root)
                let dasinh_dj0 = -z / (j0 * root);
                let dj0_dce = j0 / (2.0 * ce);
                jac.add(b + JF, b + CE, -2.0 * rt_f * dasinh_dj0 * dj0_dce);
                let dj0_dtheta = if clamped {
                    0.0
                } else {
                    j0 * (0.5 / theta - 0.5 / (1.0 - theta))
                };
                let dtheta_dj = ws.surf_b[i];
                let dasinh_dj = FARADAY / (2.0 * j0 * root) + dasinh_dj0 * dj0_dtheta * dtheta_dj;
                jac.add(b + JF, b + JF, -du * dtheta_dj - 2.0 * rt_f * dasinh_dj);
            }
        }
    }

    fn unpack(
        &self,
        y: &[f64],
        old: &CellState,
        current: f64,
        dt: f64,
        steppers: &[ParticleStepper; 2],
        ws: &Workspace,
    ) -> Result<CellState> {
        let time = old.time + dt;
        let mut next = CellState {
            c_n: vec![0.0; GRID_LEN],
            c_p: vec![0.0; GRID_LEN],
            c_e: (0..E_CELLS).map(|i| y[base(i) + CE]).collect(),
            phi_e: (0..E_CELLS).map(|i| y[base(i) + PE]).collect(),
            phi_s_n: (0..X_CELLS).map(|k| y[base(k) + PS]).collect(),
            phi_s_p: (0..X_CELLS).map(|k| y[base(2 * X_CELLS + k) + PS]).collect(),
            flux_n: (0..X_CELLS).map(|k| y[base(k) + JF]).collect(),
            flux_p: (0..X_CELLS).map(|k| y[base(2 * X_CELLS + k) + JF]).collect(),
            voltage: 0.0,
            time,
        };
        for k in 0..X_CELLS {
            let span = k * R_SHELLS..(k + 1) * R_SHELLS;
            steppers[0].finish(&ws.base_n[span.clone()], next.flux_n[k], &mut next.c_n[span.clone()]);
            steppers[1].finish(&ws.base_p[span.clone()], next.flux_p[k], &mut next.c_p[span]);
        }
        for (name, field) in [("c_n", &next.c_n), ("c_p", &next.c_p)] {
            if let Some(v) = field
                .iter()
                .find(|v| !(**v >= -PHYSICALITY_TOL && **v <= 1.0 + PHYSICALITY_TOL))
            {
                return Err(Error::Physicality {
                    time,
                    what: format!("{name} stoichiometry {v:.3e} outside [0, 1]"),
                });
            }
        }
        if let Some(c) = next.c_e.iter().find(|c| !(**c > 0.0)) {
            return Err(Error::Physicality {
                time,
                what: format!("electrolyte concentration {c:.3e} not positive"),
            });
        }
        let h_n = self.params.L_n / X_CELLS as f64;
        let h_p = self.params.L_p / X_CELLS as f64;
        let left = next.phi_s_n[0] + current * h_n / (2.0 * self.mesh.sigma_eff[0]);
        let right = next.phi_s_p[X_CELLS - 1] - current * h_p / (2.0 * self.mesh.sigma_eff[1]);
        next.voltage = right - left;
        Ok(next)
    }

    #[cfg(test)]
    fn residual_and_jacobian(&self, y: &[f64], old: &CellState, c_rate: f64, dt: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut ws = self.workspace();
        let views = self.views();
        for k in 0..X_CELLS {
            let span = k * R_SHELLS..(k + 1) * R_SHELLS;
            let s0 = ParticleStepper::new(&self.mesh.shells[0], views[0].diffusivity, views[0].c_max, dt);
            let s1 = ParticleStepper::new(&self.mesh.shells[1], views[1].diffusivity, views[1].c_max, dt);
            s0.base(&old.c_n[span.clone()], &mut ws.base_n[span.clone()]);
            let (a, b) = s0.surface_affine(&ws.base_n[span.clone()]);
            ws.surf_a[k] = a;
            ws.surf_b[k] = b;
            s1.base(&old.c_p[span.clone()], &mut ws.base_p[span.clone()]);
            let (a, b) = s1.surface_affine(&ws.base_p[span]);
            ws.surf_a[2 * X_CELLS + k] = a;
            ws.surf_b[2 * X_CELLS + k] = b;
        }
        self.assemble(y, old, self.params.current_density(c_rate), dt, &mut ws);
        let dense = (0..UNKNOWNS)
            .map(|i| (0..UNKNOWNS).map(|j| ws.jac.get(i, j)).collect())
            .collect();
        (ws.res.clone(), dense)
    }

    #[cfg(test)]
    fn pack(state: &CellState) -> Vec<f64> {
        let mut y = vec![0.0; UNKNOWNS];
        for i in 0..E_CELLS {
            let b = base(i);
            y[b + CE] = state.c_e[i];
            y[b + PE] = state.phi_e[i];
            match region(i) {
                Region::Negative => {
                    y[b + PS] = state.phi_s_n[i];
                    y[b + JF] = state.flux_n[i];
                }
                Region::Positive => {
                    y[b + PS] = state.phi_s_p[i - 2 * X_CELLS];
                    y[b + JF] = state.flux_p[i - 2 * X_CELLS];
                }
                Region::Separator => {}
            }
        }
        y
    }
}
