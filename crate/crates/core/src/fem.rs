//! Plane-stress bilinear quads: assembly, static solve, compliance and its
//! sensitivity with respect to every node variable.
//!
//! The global matrix is kept in symmetric skyline (profile) form over all
//! dofs. Constrained dofs, either clamped or not attached to any active
//! element, are eliminated before factorization.

use crate::density::Var;
use crate::error::{invalid, Error, Result};
use crate::geometry::{BoundarySpec, Direction, Grid, GAUSS_PARAMETRIC, GAUSS_PER_ELEMENT};
use crate::material::FieldEvaluation;

pub type Matrix8 = [[f64; 8]; 8];

/// Unit-modulus stiffness contributions of the four Gauss points of an
/// element, each already multiplied by its quadrature weight.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitElementStiffness {
    pub per_point: [Matrix8; GAUSS_PER_ELEMENT],
}

impl UnitElementStiffness {
    /// Sum over the Gauss points: the element matrix at unit modulus.
    pub fn element(&self) -> Matrix8 {
        let mut k = [[0.0; 8]; 8];
        for m in &self.per_point {
            for i in 0..8 {
                for j in 0..8 {
                    k[i][j] += m[i][j];
                }
            }
        }
        k
    }
}

/// Strain-displacement matrix at parametric `(s, t)`.
fn strain_displacement(s: f64, t: f64, dx: f64, dy: f64) -> [[f64; 8]; 3] {
    const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut b = [[0.0; 8]; 3];
    for (i, (si, ti)) in CORNERS.iter().enumerate() {
        let dn_dx = 0.25 * si * (1.0 + t * ti) * 2.0 / dx;
        let dn_dy = 0.25 * ti * (1.0 + s * si) * 2.0 / dy;
        b[0][2 * i] = dn_dx;
        b[1][2 * i + 1] = dn_dy;
        b[2][2 * i] = dn_dy;
        b[2][2 * i + 1] = dn_dx;
    }
    b
}

pub fn unit_element_stiffness(nu: f64, dx: f64, dy: f64) -> Result<UnitElementStiffness> {
    if !(0.0..0.5).contains(&nu) {
        return invalid(format!("Poisson ratio must lie in [0, 0.5), got {nu}"));
    }
    if !(dx > 0.0 && dy > 0.0) {
        return invalid(format!("element size must be positive, got {dx} x {dy}"));
    }
    let c = 1.0 / (1.0 - nu * nu);
    let d = [
        [c, c * nu, 0.0],
        [c * nu, c, 0.0],
        [0.0, 0.0, c * (1.0 - nu) / 2.0],
    ];
    let jacobian = dx * dy / 4.0;
    let mut per_point = [[[0.0; 8]; 8]; GAUSS_PER_ELEMENT];
    for (g, (s, t)) in GAUSS_PARAMETRIC.iter().enumerate() {
        let b = strain_displacement(*s, *t, dx, dy);
        let mut db = [[0.0; 8]; 3];
        for r in 0..3 {
            for j in 0..8 {
                db[r][j] = (0..3).map(|q| d[r][q] * b[q][j]).sum();
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                per_point[g][i][j] = jacobian * (0..3).map(|r| b[r][i] * db[r][j]).sum::<f64>();
            }
        }
    }
    Ok(UnitElementStiffness { per_point })
}

/// Symmetric matrix in skyline storage: column `j` keeps rows
/// `first[j]..=j` contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// Zero matrix with the profile implied by `first`.
    pub fn with_profile(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (j, f) in first.iter().enumerate() {
            start.push(acc);
            acc += j - f + 1;
        }
        start.push(acc);
        Self {
            first,
            start,
            values: vec![0.0; acc],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored_len(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        (i >= self.first[j]).then(|| self.start[j] + i - self.first[j])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.values[s])
    }

    /// Adds to `(i, j)` (and implicitly `(j, i)`); panics outside the profile.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside skyline profile");
        self.values[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for j in 0..self.dim() {
            let f = self.first[j];
            let col = &self.values[self.start[j]..self.start[j + 1]];
            for (off, a) in col.iter().enumerate() {
                let i = f + off;
                y[i] += a * x[j];
                if i != j {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Decouples dof `k`: zero row and column, unit diagonal.
    fn eliminate(&mut self, k: usize) {
        for j in k..self.dim() {
            if let Some(s) = self.slot(k, j) {
                self.values[s] = 0.0;
            }
        }
        for i in self.first[k]..k {
            let s = self.slot(i, k).unwrap();
            self.values[s] = 0.0;
        }
        let s = self.slot(k, k).unwrap();
        self.values[s] = 1.0;
    }

    /// In-place Cholesky `A = U^T U`; returns the first dof with a
    /// non-positive pivot on failure.
    fn factor(&mut self) -> std::result::Result<(), (usize, f64)> {
        let n = self.dim();
        for j in 0..n {
            let fj = self.first[j];
            let sj = self.start[j];
            for i in fj..j {
                let fi = self.first[i];
                let si = self.start[i];
                let k0 = fi.max(fj);
                let mut sum = self.values[sj + i - fj];
                for k in k0..i {
                    sum -= self.values[si + k - fi] * self.values[sj + k - fj];
                }
                let diag = self.values[si + i - fi];
                self.values[sj + i - fj] = sum / diag;
            }
            let original = self.values[sj + j - fj];
            let mut d = original;
            for k in fj..j {
                let u = self.values[sj + k - fj];
                d -= u * u;
            }
            if !(d > 1e-14 * original.abs()) || d <= 0.0 {
                return Err((j, d));
            }
            self.values[sj + j - fj] = d.sqrt();
        }
        Ok(())
    }

    /// Solves with a factor produced by [`Self::factor`].
    fn substitute(&self, b: &mut [f64]) {
        let n = self.dim();
        // U^T y = b
        for j in 0..n {
            let fj = self.first[j];
            let sj = self.start[j];
            let mut s = b[j];
            for k in fj..j {
                s -= self.values[sj + k - fj] * b[k];
            }
            b[j] = s / self.values[sj + j - fj];
        }
        // U x = y
        for j in (0..n).rev() {
            let fj = self.first[j];
            let sj = self.start[j];
            b[j] /= self.values[sj + j - fj];
            let xj = b[j];
            for k in fj..j {
                b[k] -= self.values[sj + k - fj] * xj;
            }
        }
    }
}

/// Assembled global stiffness over every dof of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStiffness {
    pub matrix: SkylineMatrix,
    /// Dofs touched by at least one active element.
    pub supported: Vec<bool>,
    /// Number of elements visited by the assembly loop.
    pub elements_visited: usize,
}

impl GlobalStiffness {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }
}

fn grid_profile(grid: &Grid) -> Vec<usize> {
    let mut first: Vec<usize> = (0..grid.dof_count()).collect();
    for e in grid.active_elements() {
        let dofs = grid.element_dofs(e);
        let lo = *dofs.iter().min().unwrap();
        for d in dofs {
            first[d] = first[d].min(lo);
        }
    }
    first
}

/// `K = sum_k K_e^k E(x^k)` over the Gauss points of the active elements,
/// with `modulus` ordered like [`crate::geometry::gauss_points`].
pub fn assemble(
    grid: &Grid,
    unit: &UnitElementStiffness,
    modulus: &[f64],
) -> Result<GlobalStiffness> {
    let expected = grid.active_count() * GAUSS_PER_ELEMENT;
    if modulus.len() != expected {
        return invalid(format!(
            "modulus has {} values, grid has {} active Gauss points",
            modulus.len(),
            expected
        ));
    }
    let mut matrix = SkylineMatrix::with_profile(grid_profile(grid));
    let mut supported = vec![false; grid.dof_count()];
    let mut visited = 0;
    for (block, e) in grid.active_elements().enumerate() {
        visited += 1;
        let dofs = grid.element_dofs(e);
        let mut ke = [[0.0; 8]; 8];
        for (g, kg) in unit.per_point.iter().enumerate() {
            let m = modulus[block * GAUSS_PER_ELEMENT + g];
            for i in 0..8 {
                for j in 0..8 {
                    ke[i][j] += m * kg[i][j];
                }
            }
        }
        for i in 0..8 {
            supported[dofs[i]] = true;
            for j in 0..8 {
                if dofs[i] <= dofs[j] {
                    matrix.add(dofs[i], dofs[j], ke[i][j]);
                }
            }
        }
    }
    Ok(GlobalStiffness {
        matrix,
        supported,
        elements_visited: visited,
    })
}

/// Solves `K U = F` on the free dofs; constrained dofs get `U = 0`.
pub fn solve(
    grid: &Grid,
    k: &GlobalStiffness,
    f: &[f64],
    fixed_dofs: &[usize],
) -> Result<Vec<f64>> {
    let n = k.matrix.dim();
    if f.len() != n {
        return invalid(format!(
            "load vector has {} entries, system has {n}",
            f.len()
        ));
    }
    let mut constrained = vec![false; n];
    for &d in fixed_dofs {
        if d >= n {
            return invalid(format!("fixed dof {d} out of range"));
        }
        constrained[d] = true;
    }
    for (d, s) in k.supported.iter().enumerate() {
        if !s {
            constrained[d] = true;
        }
    }
    let mut a = k.matrix.clone();
    let mut rhs = f.to_vec();
    for d in 0..n {
        if constrained[d] {
            a.eliminate(d);
            rhs[d] = 0.0;
        }
    }
    a.factor()
        .map_err(|(dof, pivot)| Error::Singular {
            dof,
            node: dof / 2,
            direction: if dof % 2 == 0 {
                Direction::X.name()
            } else {
                Direction::Y.name()
            },
            pivot,
        })
        .inspect_err(|e| {
            if let Error::Singular { node, .. } = e {
                let (x, y) = grid.node_coords(*node);
                log::debug!("singular pivot near ({x:.3}, {y:.3})");
            }
        })?;
    a.substitute(&mut rhs);
    Ok(rhs)
}

/// `C = F^T U`.
pub fn compliance(f: &[f64], u: &[f64]) -> f64 {
    f.iter().zip(u).map(|(a, b)| a * b).sum()
}

/// Element displacement vector gathered from the global one.
pub fn element_displacements(grid: &Grid, element: usize, u: &[f64]) -> [f64; 8] {
    grid.element_dofs(element).map(|d| u[d])
}

fn quadratic_form(k: &Matrix8, u: &[f64; 8]) -> f64 {
    let mut s = 0.0;
    for i in 0..8 {
        let mut row = 0.0;
        for j in 0..8 {
            row += k[i][j] * u[j];
        }
        s += u[i] * row;
    }
    s
}

/// Strain energy density integrand `u_e^T K_e^k u_e` per Gauss point.
pub fn point_energies(grid: &Grid, unit: &UnitElementStiffness, u: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.active_count() * GAUSS_PER_ELEMENT);
    for e in grid.active_elements() {
        let ue = element_displacements(grid, e, u);
        for kg in &unit.per_point {
            out.push(quadratic_form(kg, &ue));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct StaticSolution {
    pub u: Vec<f64>,
    pub compliance: f64,
    pub stiffness: GlobalStiffness,
    /// Layout revision of the field the solution was computed from.
    pub revision: u64,
}

/// Grid, loads and element matrices of one problem.
#[derive(Debug, Clone)]
pub struct FemModel {
    pub grid: Grid,
    pub boundary: BoundarySpec,
    pub unit: UnitElementStiffness,
    pub force: Vec<f64>,
}

impl FemModel {
    pub fn new(grid: Grid, boundary: BoundarySpec, nu: f64) -> Result<Self> {
        let unit = unit_element_stiffness(nu, grid.dx, grid.dy)?;
        let force = boundary.force_vector(&grid);
        Ok(Self {
            grid,
            boundary,
            unit,
            force,
        })
    }

    pub fn solve_modulus(&self, modulus: &[f64], revision: u64) -> Result<StaticSolution> {
        let stiffness = assemble(&self.grid, &self.unit, modulus)?;
        let u = solve(
            &self.grid,
            &stiffness,
            &self.force,
            &self.boundary.fixed_dofs,
        )?;
        let c = compliance(&self.force, &u);
        Ok(StaticSolution {
            u,
            compliance: c,
            stiffness,
            revision,
        })
    }

    pub fn solve_field(&self, field: &FieldEvaluation) -> Result<StaticSolution> {
        self.solve_modulus(&field.modulus, field.revision)
    }
}

/// `dC/d mu = -U^T (dK/d mu) U` for every node and variable, in
/// [`Var`] order. The load does not depend on the layout.
pub fn compliance_gradient(
    model: &FemModel,
    solution: &StaticSolution,
    field: &FieldEvaluation,
) -> Result<Vec<[f64; 5]>> {
    if solution.revision != field.revision {
        return Err(Error::InvalidState(format!(
            "solution from layout revision {} used with field revision {}",
            solution.revision, field.revision
        )));
    }
    let energies = point_energies(&model.grid, &model.unit, &solution.u);
    Ok(field
        .sensitivities
        .iter()
        .map(|s| {
            let mut g = [0.0; 5];
            for (k, de) in &s.entries {
                for v in Var::ALL {
                    g[v.index()] -= energies[*k] * de[v.index()];
                }
            }
            g
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, gauss_points, preset_case, Case, PointLoad};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    /// Closed-form element matrix of the 88-line code (unit square, E = 1).
    fn closed_form_ke(nu: f64) -> DMatrix<f64> {
        let k = [
            0.5 - nu / 6.0,
            0.125 + nu / 8.0,
            -0.25 - nu / 12.0,
            -0.125 + 3.0 * nu / 8.0,
            -0.25 + nu / 12.0,
            -0.125 - nu / 8.0,
            nu / 6.0,
            0.125 - 3.0 * nu / 8.0,
        ];
        let idx = [
            [0, 1, 2, 3, 4, 5, 6, 7],
            [1, 0, 7, 6, 5, 4, 3, 2],
            [2, 7, 0, 5, 6, 3, 4, 1],
            [3, 6, 5, 0, 7, 2, 1, 4],
            [4, 5, 6, 7, 0, 1, 2, 3],
            [5, 4, 3, 2, 1, 0, 7, 6],
            [6, 3, 4, 1, 2, 7, 0, 5],
            [7, 2, 1, 4, 3, 6, 5, 0],
        ];
        DMatrix::from_fn(8, 8, |i, j| k[idx[i][j]] / (1.0 - nu * nu))
    }

    fn to_dense(m: &Matrix8) -> DMatrix<f64> {
        DMatrix::from_fn(8, 8, |i, j| m[i][j])
    }

    #[test]
    fn element_matrix_matches_closed_form() {
        let unit = unit_element_stiffness(0.3, 1.0, 1.0).unwrap();
        let diff = to_dense(&unit.element()) - closed_form_ke(0.3);
        assert!(diff.amax() < 1e-12, "{diff}");
    }

    #[test]
    fn element_matrix_scale_invariant() {
        let a = unit_element_stiffness(0.3, 1.0, 1.0).unwrap().element();
        let b = unit_element_stiffness(0.3, 0.1, 0.1).unwrap().element();
        assert!((to_dense(&a) - to_dense(&b)).amax() < 1e-12);
    }

    #[test]
    fn element_matrix_annihilates_rigid_modes() {
        let (dx, dy) = (0.25, 0.5);
        let k = to_dense(&unit_element_stiffness(0.3, dx, dy).unwrap().element());
        let corners = [(0.0, 0.0), (dx, 0.0), (dx, dy), (0.0, dy)];
        let tx = DVector::from_fn(8, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
        let ty = DVector::from_fn(8, |i, _| if i % 2 == 1 { 1.0 } else { 0.0 });
        let rot = DVector::from_fn(8, |i, _| {
            let (x, y) = corners[i / 2];
            if i % 2 == 0 {
                -y
            } else {
                x
            }
        });
        for mode in [tx, ty, rot] {
            assert!((&k * mode).amax() < 1e-12);
        }
        let eig = k.symmetric_eigenvalues();
        assert_eq!(eig.iter().filter(|v| v.abs() < 1e-10).count(), 3);
        assert!(eig.iter().all(|v| *v > -1e-12));
    }

    #[test]
    fn rejects_bad_poisson_ratio() {
        assert!(unit_element_stiffness(0.5, 1.0, 1.0).is_err());
        assert!(unit_element_stiffness(-0.1, 1.0, 1.0).is_err());
    }

    fn dense_reduced(k: &GlobalStiffness, fixed: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
        let free: Vec<usize> = (0..k.matrix.dim())
            .filter(|d| !fixed.contains(d) && k.supported[*d])
            .collect();
        let m = DMatrix::from_fn(free.len(), free.len(), |i, j| k.get(free[i], free[j]));
        (m, free)
    }

    fn dense_compliance(model: &FemModel, modulus: &[f64]) -> f64 {
        let k = assemble(&model.grid, &model.unit, modulus).unwrap();
        let (m, free) = dense_reduced(&k, &model.boundary.fixed_dofs);
        let f = DVector::from_fn(free.len(), |i, _| model.force[free[i]]);
        let u = m.lu().solve(&f).unwrap();
        f.dot(&u)
    }

    #[test]
    fn uniform_cantilever_matches_dense_oracle() {
        for epu in [1, 2, 4] {
            let (g, bc) = preset_case(Case::Cantilever, epu).unwrap();
            let model = FemModel::new(g, bc, 0.3).unwrap();
            let e = vec![1.0; model.grid.active_count() * 4];
            let sol = model.solve_modulus(&e, 0).unwrap();
            let oracle = dense_compliance(&model, &e);
            assert_relative_eq!(sol.compliance, oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn single_element_extension() {
        // clamp left edge, unit x pull on the two right nodes
        let g = build_grid(1.0, 1.0, 1).unwrap();
        let loads = [1, 3].map(|n| PointLoad {
            node: n,
            direction: Direction::X,
            magnitude: 0.5,
        });
        let bc = BoundarySpec::new(&g, vec![0, 1, 4, 5], loads.to_vec()).unwrap();
        let model = FemModel::new(g, bc, 0.3).unwrap();
        let sol = model.solve_modulus(&[1.0; 4], 0).unwrap();
        let oracle = dense_compliance(&model, &[1.0; 4]);
        assert_relative_eq!(sol.compliance, oracle, max_relative = 1e-12);
        // both right nodes stretch equally
        assert_relative_eq!(sol.u[2], sol.u[6], max_relative = 1e-12);
        assert!(sol.u[2] > 0.0);
        // the clamped nodes stay put
        assert_eq!([sol.u[0], sol.u[1], sol.u[4], sol.u[5]], [0.0; 4]);
    }

    #[test]
    fn residual_small_on_free_dofs() {
        let (g, bc) = preset_case(Case::Lshape, 10).unwrap();
        let model = FemModel::new(g, bc, 0.3).unwrap();
        let e: Vec<f64> = (0..model.grid.active_count() * 4)
            .map(|k| 0.2 + (k % 7) as f64 * 0.1)
            .collect();
        let sol = model.solve_modulus(&e, 0).unwrap();
        let ku = sol.stiffness.matrix.mul_vec(&sol.u);
        let mut num = 0.0;
        for d in 0..ku.len() {
            if !model.boundary.is_fixed(d) && sol.stiffness.supported[d] {
                num += (ku[d] - model.force[d]).powi(2);
            }
        }
        let fnorm: f64 = model.force.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num.sqrt() / fnorm <= 1e-10);
        // energy identity
        let energy = compliance(&sol.u, &ku);
        assert_relative_eq!(energy, sol.compliance, max_relative = 1e-10);
    }

    #[test]
    fn zero_load_gives_zero_response() {
        let (g, mut bc) = preset_case(Case::Cantilever, 2).unwrap();
        bc.loads.clear();
        let model = FemModel::new(g, bc, 0.3).unwrap();
        let sol = model.solve_modulus(&vec![1.0; 32], 0).unwrap();
        assert!(sol.u.iter().all(|v| *v == 0.0));
        assert_eq!(sol.compliance, 0.0);
    }

    #[test]
    fn load_scaling_is_quadratic() {
        let (g, bc) = preset_case(Case::Cantilever, 2).unwrap();
        let mut model = FemModel::new(g, bc, 0.3).unwrap();
        let e = vec![1.0; 32];
        let c1 = model.solve_modulus(&e, 0).unwrap().compliance;
        for f in model.force.iter_mut() {
            *f *= 3.0;
        }
        let c3 = model.solve_modulus(&e, 0).unwrap().compliance;
        assert_relative_eq!(c3, 9.0 * c1, max_relative = 1e-12);
    }

    #[test]
    fn zero_modulus_is_singular() {
        let (g, bc) = preset_case(Case::Cantilever, 2).unwrap();
        let model = FemModel::new(g, bc, 0.3).unwrap();
        let err = model.solve_modulus(&vec![0.0; 32], 0).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }), "{err}");
    }

    #[test]
    fn assembly_is_linear_in_modulus() {
        let (g, _) = preset_case(Case::Cantilever, 2).unwrap();
        let unit = unit_element_stiffness(0.3, g.dx, g.dy).unwrap();
        let k1 = assemble(&g, &unit, &vec![1.0; 32]).unwrap();
        let k3 = assemble(&g, &unit, &vec![2.5; 32]).unwrap();
        for i in 0..g.dof_count() {
            for j in 0..g.dof_count() {
                assert_relative_eq!(k3.get(i, j), 2.5 * k1.get(i, j), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn one_point_change_touches_one_block() {
        let g = build_grid(1.0, 1.0, 3).unwrap();
        let unit = unit_element_stiffness(0.3, g.dx, g.dy).unwrap();
        let mut e = vec![1.0; 36];
        let a = assemble(&g, &unit, &e).unwrap();
        e[4 * 4 + 2] = 2.0; // centre element, third Gauss point
        let b = assemble(&g, &unit, &e).unwrap();
        let mut changed = 0;
        for i in 0..g.dof_count() {
            for j in 0..g.dof_count() {
                if a.get(i, j) != b.get(i, j) {
                    changed += 1;
                    let dofs = g.element_dofs(4);
                    assert!(dofs.contains(&i) && dofs.contains(&j));
                }
            }
        }
        assert_eq!(changed, 64);
    }

    #[test]
    fn masked_elements_never_assembled() {
        let (g, _) = preset_case(Case::Lshape, 10).unwrap();
        let unit = unit_element_stiffness(0.3, g.dx, g.dy).unwrap();
        let k = assemble(&g, &unit, &vec![1.0; 256]).unwrap();
        assert_eq!(k.elements_visited, 64);
        assert!(assemble(&g, &unit, &vec![1.0; 400]).is_err());
    }

    #[test]
    fn cantilever_stiffness_spd_on_free_dofs() {
        let (g, bc) = preset_case(Case::Cantilever, 2).unwrap();
        let unit = unit_element_stiffness(0.3, g.dx, g.dy).unwrap();
        let k = assemble(&g, &unit, &vec![1.0; 32]).unwrap();
        let (m, _) = dense_reduced(&k, &bc.fixed_dofs);
        assert!((&m - m.transpose()).amax() < 1e-14);
        assert!(m.cholesky().is_some());
    }

    #[test]
    fn refinement_changes_shrink() {
        let mut prev: Option<f64> = None;
        let mut deltas = Vec::new();
        for epu in [4, 8, 16] {
            let (g, bc) = preset_case(Case::Cantilever, epu).unwrap();
            let n = g.active_count() * 4;
            let model = FemModel::new(g, bc, 0.3).unwrap();
            let c = model.solve_modulus(&vec![1.0; n], 0).unwrap().compliance;
            if let Some(p) = prev {
                deltas.push(((c - p) / p).abs());
            }
            prev = Some(c);
        }
        assert!(deltas[1] < deltas[0], "{deltas:?}");
    }

    #[test]
    fn stale_field_rejected() {
        use crate::density::{MassNode, MaterialLayout, NodeKind};
        use crate::material::{evaluate_field, PipelineConfig};
        let (g, bc) = preset_case(Case::Cantilever, 4).unwrap();
        let pts = gauss_points(&g).unwrap();
        let model = FemModel::new(g, bc, 0.3).unwrap();
        let mut layout = MaterialLayout::calibrated(
            vec![MassNode::new(
                0.5,
                0.0,
                0.0,
                1.0,
                0.5,
                NodeKind::DeformableMember,
            )],
            1.5,
        )
        .unwrap();
        let field = evaluate_field(&layout, &pts, &PipelineConfig::default()).unwrap();
        let sol = model.solve_field(&field).unwrap();
        assert!(compliance_gradient(&model, &sol, &field).is_ok());
        layout.nodes_mut()[0].x += 0.1;
        let moved = evaluate_field(&layout, &pts, &PipelineConfig::default()).unwrap();
        assert!(matches!(
            compliance_gradient(&model, &sol, &moved),
            Err(Error::InvalidState(_))
        ));
    }
}
