use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neutral-pose vertex set over which all motion is expressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateMesh {
    /// `V` rows of `[x, y, z]` in meters.
    pub vertices: Vec<[f64; 3]>,
    /// Lower-face vertices used by the lip losses and metrics.
    pub lip_mask: Vec<usize>,
}

impl TemplateMesh {
    pub fn new(vertices: Vec<[f64; 3]>, lip_mask: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; vertices.len()];
        for &i in &lip_mask {
            if i >= vertices.len() {
                return Err(Error::invalid(format!("lip mask index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("lip mask index {i} repeated")));
            }
        }
        Ok(Self { vertices, lip_mask })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Columns of a flattened `T×(V·3)` motion that belong to lip vertices.
    pub fn lip_columns(&self) -> Vec<usize> {
        self.lip_mask
            .iter()
            .flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2])
            .collect()
    }

    /// The 24-vertex toy face: twelve lower-face vertices (lips, mouth
    /// corners, chin, jaw) followed by twelve upper-face vertices.
    pub fn toy_face() -> Self {
        let vertices = vec![
            [0.000, -0.030, 0.095],  // 0 upper lip centre
            [-0.015, -0.031, 0.090], // 1 upper lip left
            [0.015, -0.031, 0.090],  // 2 upper lip right
            [-0.027, -0.037, 0.082], // 3 mouth corner left
            [0.027, -0.037, 0.082],  // 4 mouth corner right
            [0.000, -0.044, 0.093],  // 5 lower lip centre
            [-0.015, -0.043, 0.088], // 6 lower lip left
            [0.015, -0.043, 0.088],  // 7 lower lip right
            [0.000, -0.070, 0.085],  // 8 chin
            [-0.020, -0.066, 0.078], // 9 chin left
            [0.020, -0.066, 0.078],  // 10 chin right
            [0.000, -0.082, 0.060],  // 11 jaw underside
            [0.000, 0.000, 0.110],   // 12 nose tip
            [-0.012, -0.008, 0.095], // 13 nostril left
            [0.012, -0.008, 0.095],  // 14 nostril right
            [-0.045, -0.020, 0.070], // 15 lower cheek left
            [0.045, -0.020, 0.070],  // 16 lower cheek right
            [-0.050, 0.010, 0.065],  // 17 upper cheek left
            [0.050, 0.010, 0.065],   // 18 upper cheek right
            [-0.032, 0.035, 0.075],  // 19 eye left
            [0.032, 0.035, 0.075],   // 20 eye right
            [-0.035, 0.055, 0.080],  // 21 brow left
            [0.035, 0.055, 0.080],   // 22 brow right
            [0.000, 0.080, 0.085],   // 23 forehead
        ];
        Self::new(vertices, (0..12).collect()).expect("static mesh is valid")
    }
}

/// Indices of the chin/jaw vertices, which only move along the opening axis.
pub const JAW_VERTICES: [usize; 4] = [8, 9, 10, 11];

/// Number of viseme classes; id 0 is silence.
pub const NUM_VISEMES: usize = 10;

/// `(opening, spreading, rounding)` coefficients of each viseme keyframe.
pub const VISEME_COEFFS: [[f64; 3]; NUM_VISEMES] = [
    [0.0, 0.0, 0.0],   // sil
    [1.0, 0.2, 0.0],   // aa
    [0.6, 0.5, 0.0],   // eh
    [0.25, 1.0, 0.0],  // iy
    [0.6, -0.3, 0.8],  // ow
    [0.3, -0.5, 1.0],  // uw
    [-0.15, 0.0, 0.2], // m b p
    [0.15, 0.2, -0.4], // f v
    [0.4, 0.3, 0.0],   // l th
    [0.3, -0.2, 0.7],  // ch sh
];

/// Displacement fields of the toy face rig, each `V×3` flattened to `V·3`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisemeBasis {
    pub opening: Vec<f64>,
    pub spreading: Vec<f64>,
    pub rounding: Vec<f64>,
}

impl VisemeBasis {
    pub fn toy_face() -> Self {
        let v = 24;
        let mut opening = vec![0.0; v * 3];
        let mut spreading = vec![0.0; v * 3];
        let mut rounding = vec![0.0; v * 3];
        let set = |field: &mut Vec<f64>, vert: usize, d: [f64; 3]| {
            field[3 * vert..3 * vert + 3].copy_from_slice(&d);
        };
        // opening: jaw drops, lower lip follows, upper lip lifts slightly
        for (vert, dy) in [(0, 0.002), (1, 0.0015), (2, 0.0015), (3, -0.004), (4, -0.004)] {
            set(&mut opening, vert, [0.0, dy, 0.0]);
        }
        for (vert, dy) in [(5, -0.010), (6, -0.009), (7, -0.009)] {
            set(&mut opening, vert, [0.0, dy, 0.0]);
        }
        for (vert, dy) in [(8, -0.012), (9, -0.011), (10, -0.011), (11, -0.012)] {
            set(&mut opening, vert, [0.0, dy, 0.0]);
        }
        for (vert, dy) in [(15, -0.002), (16, -0.002)] {
            set(&mut opening, vert, [0.0, dy, 0.0]);
        }
        // spreading: corners pulled outwards and back
        for (vert, dx, dz) in [
            (1, -0.003, 0.0),
            (2, 0.003, 0.0),
            (3, -0.006, -0.002),
            (4, 0.006, -0.002),
            (6, -0.003, 0.0),
            (7, 0.003, 0.0),
            (15, -0.001, 0.0),
            (16, 0.001, 0.0),
        ] {
            set(&mut spreading, vert, [dx, 0.0, dz]);
        }
        // rounding: lips pushed forward and pulled inwards
        for (vert, dx, dz) in [
            (0, 0.0, 0.005),
            (1, 0.002, 0.004),
            (2, -0.002, 0.004),
            (3, 0.005, 0.002),
            (4, -0.005, 0.002),
            (5, 0.0, 0.005),
            (6, 0.002, 0.004),
            (7, -0.002, 0.004),
        ] {
            set(&mut rounding, vert, [dx, 0.0, dz]);
        }
        Self {
            opening,
            spreading,
            rounding,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.opening.len() / 3
    }
}
