//! Uniform structured meshes for the finite-volume scheme.
//!
//! Cells are stored row-major; every cell lists its faces with outward
//! normals, face lengths, and either an interior neighbor or a boundary
//! condition. 1D meshes have unit face length and cell area `dx`; 2D
//! meshes are uniform quadrilaterals.

/// Boundary behavior of a face, applied to incoming velocity nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryKind {
    /// Fixed inflow density on nodes pointing into the domain (the
    /// half-range beam of the 1D transport cases); outgoing nodes upwind
    /// from the interior.
    Inflow { density: f64 },
    /// Far-field vacuum: the ghost carries the solver's floor density.
    Vacuum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Neighbor {
    Cell(usize),
    Boundary(BoundaryKind),
}

#[derive(Clone, Copy, Debug)]
pub struct Face {
    pub neighbor: Neighbor,
    /// Outward unit normal of the owning cell.
    pub normal: [f64; 2],
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub cell_area: f64,
    pub centers: Vec<[f64; 2]>,
    faces: Vec<Face>,
    faces_per_cell: usize,
}

impl Mesh {
    /// 1D interval with `nx` cells and the given boundary conditions.
    pub fn line(a: f64, b: f64, nx: usize, left: BoundaryKind, right: BoundaryKind) -> Mesh {
        assert!(nx > 0 && b > a);
        let dx = (b - a) / nx as f64;
        let mut centers = Vec::with_capacity(nx);
        let mut faces = Vec::with_capacity(2 * nx);
        for i in 0..nx {
            centers.push([a + (i as f64 + 0.5) * dx, 0.0]);
            let left_neighbor = if i == 0 {
                Neighbor::Boundary(left)
            } else {
                Neighbor::Cell(i - 1)
            };
            let right_neighbor = if i + 1 == nx {
                Neighbor::Boundary(right)
            } else {
                Neighbor::Cell(i + 1)
            };
            faces.push(Face {
                neighbor: left_neighbor,
                normal: [-1.0, 0.0],
                length: 1.0,
            });
            faces.push(Face {
                neighbor: right_neighbor,
                normal: [1.0, 0.0],
                length: 1.0,
            });
        }
        Mesh {
            nx,
            ny: 1,
            dx,
            dy: 1.0,
            cell_area: dx,
            centers,
            faces,
            faces_per_cell: 2,
        }
    }

    /// 2D rectangle with fully periodic boundaries, `nx` by `ny` cells.
    pub fn periodic_rect(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Mesh {
        assert!(nx > 0 && ny > 0 && x.1 > x.0 && y.1 > y.0);
        let dx = (x.1 - x.0) / nx as f64;
        let dy = (y.1 - y.0) / ny as f64;
        let index = |ix: usize, iy: usize| iy * nx + ix;
        let mut centers = Vec::with_capacity(nx * ny);
        let mut faces = Vec::with_capacity(4 * nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                centers.push([
                    x.0 + (ix as f64 + 0.5) * dx,
                    y.0 + (iy as f64 + 0.5) * dy,
                ]);
                let left = index((ix + nx - 1) % nx, iy);
                let right = index((ix + 1) % nx, iy);
                let down = index(ix, (iy + ny - 1) % ny);
                let up = index(ix, (iy + 1) % ny);
                faces.push(Face {
                    neighbor: Neighbor::Cell(left),
                    normal: [-1.0, 0.0],
                    length: dy,
                });
                faces.push(Face {
                    neighbor: Neighbor::Cell(right),
                    normal: [1.0, 0.0],
                    length: dy,
                });
                faces.push(Face {
                    neighbor: Neighbor::Cell(down),
                    normal: [0.0, -1.0],
                    length: dx,
                });
                faces.push(Face {
                    neighbor: Neighbor::Cell(up),
                    normal: [0.0, 1.0],
                    length: dx,
                });
            }
        }
        Mesh {
            nx,
            ny,
            dx,
            dy,
            cell_area: dx * dy,
            centers,
            faces,
            faces_per_cell: 4,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn faces_of(&self, cell: usize) -> &[Face] {
        &self.faces[cell * self.faces_per_cell..(cell + 1) * self.faces_per_cell]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_mesh_topology() {
        let mesh = Mesh::line(
            0.0,
            1.0,
            4,
            BoundaryKind::Inflow { density: 0.5 },
            BoundaryKind::Vacuum,
        );
        assert_eq!(mesh.n_cells(), 4);
        assert_eq!(mesh.dx, 0.25);
        assert_eq!(mesh.cell_area, 0.25);
        assert_eq!(
            mesh.faces_of(0)[0].neighbor,
            Neighbor::Boundary(BoundaryKind::Inflow { density: 0.5 })
        );
        assert_eq!(mesh.faces_of(0)[1].neighbor, Neighbor::Cell(1));
        assert_eq!(
            mesh.faces_of(3)[1].neighbor,
            Neighbor::Boundary(BoundaryKind::Vacuum)
        );
        assert_eq!(mesh.centers[0][0], 0.125);
    }

    #[test]
    fn periodic_mesh_wraps_and_shares_faces() {
        let mesh = Mesh::periodic_rect((-1.5, 1.5), (-1.5, 1.5), 3, 3);
        assert_eq!(mesh.n_cells(), 9);
        // interior faces appear in both cells' lists with opposite normals
        for cell in 0..9 {
            for face in mesh.faces_of(cell) {
                let Neighbor::Cell(other) = face.neighbor else {
                    panic!("periodic mesh has no boundary faces");
                };
                let back = mesh
                    .faces_of(other)
                    .iter()
                    .find(|f| f.neighbor == Neighbor::Cell(cell) && {
                        f.normal[0] == -face.normal[0] && f.normal[1] == -face.normal[1]
                    });
                assert!(back.is_some(), "face {cell}->{other} lacks a mirror");
            }
        }
    }
}
