//! Omnidirectional wrench-feasible workspace over the treadmill grid.

use crate::model::{allocate_tensions, ForceCommand, Geometry, ModelError};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// One grid cell, classified by its centre point.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WorkspaceCell {
    pub center: Vec2,
    pub feasible: bool,
}

/// Feasibility map of one force magnitude over the treadmill.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkspaceMap {
    pub force_magnitude: f64,
    pub grid_resolution: f64,
    pub n_directions: u32,
    /// Cells in row-major order: x fastest, y outer, both ascending.
    pub cells: Vec<WorkspaceCell>,
    pub nx: usize,
    pub ny: usize,
    /// Feasible-cell count times resolution squared (m^2).
    pub area: f64,
}

/// True iff the commanded magnitude is realisable in every probe direction
/// at this position. Positions outside the treadmill propagate the error.
pub fn is_omnidirectional_feasible(
    pos: Vec2,
    magnitude: f64,
    n_directions: u32,
    geometry: &Geometry,
) -> Result<bool, ModelError> {
    assert!(n_directions >= 4, "need at least 4 probe directions");
    for k in 0..n_directions {
        let beta = f64::from(k) * 360.0 / f64::from(n_directions);
        let cmd = ForceCommand::new(magnitude, beta);
        match allocate_tensions(&cmd, geometry, pos) {
            Ok(_) => {}
            Err(ModelError::Infeasible { .. }) => return Ok(false),
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Sweep the treadmill grid and classify every cell centre.
///
/// Deterministic for fixed inputs; cells are visited in row-major order.
pub fn workspace_map(
    magnitude: f64,
    resolution: f64,
    n_directions: u32,
    geometry: &Geometry,
) -> Result<WorkspaceMap, ModelError> {
    assert!(
        resolution > 0.0 && resolution <= 0.5,
        "resolution must be in (0, 0.5] m"
    );
    let nx = (2.0 * geometry.treadmill_half_width / resolution).round() as usize;
    let ny = (2.0 * geometry.treadmill_half_length / resolution).round() as usize;
    let mut cells = Vec::with_capacity(nx * ny);
    let mut feasible_count = 0usize;
    for j in 0..ny {
        let y = -geometry.treadmill_half_length + (j as f64 + 0.5) * resolution;
        for i in 0..nx {
            let x = -geometry.treadmill_half_width + (i as f64 + 0.5) * resolution;
            let center = Vec2::new(x, y);
            let feasible = is_omnidirectional_feasible(center, magnitude, n_directions, geometry)?;
            feasible_count += usize::from(feasible);
            cells.push(WorkspaceCell { center, feasible });
        }
    }
    Ok(WorkspaceMap {
        force_magnitude: magnitude,
        grid_resolution: resolution,
        n_directions,
        cells,
        nx,
        ny,
        area: feasible_count as f64 * resolution * resolution,
    })
}

impl WorkspaceMap {
    /// CSV rows `x_m,y_m,feasible` with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_m,y_m,feasible\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{:.4},{:.4},{}",
                c.center.x,
                c.center.y,
                u8::from(c.feasible)
            );
        }
        out
    }

    /// One-line summary used by the CLI.
    pub fn summary(&self) -> String {
        format!(
            "force {:.1} N, grid {:.3} m, {} directions: area {:.2} m^2 ({} of {} cells feasible)",
            self.force_magnitude,
            self.grid_resolution,
            self.n_directions,
            self.area,
            self.cells.iter().filter(|c| c.feasible).count(),
            self.cells.len()
        )
    }

    /// Render the map as an SVG: feasible cells, treadmill outline, anchors.
    pub fn to_svg(&self, geometry: &Geometry) -> String {
        let scale = 120.0; // px per metre
        let pad = 60.0;
        let min_x = geometry
            .anchor_left
            .x
            .min(-geometry.treadmill_half_width);
        let max_x = geometry
            .anchor_right
            .x
            .max(geometry.treadmill_half_width);
        let min_y = geometry
            .anchor_back
            .y
            .min(-geometry.treadmill_half_length);
        let max_y = geometry.treadmill_half_length.max(
            geometry
                .anchor_left
                .y
                .max(geometry.anchor_right.y),
        );
        let w = (max_x - min_x) * scale + 2.0 * pad;
        let h = (max_y - min_y) * scale + 2.0 * pad;
        // SVG y grows downward; flip so +y (forward) points up.
        let px = |p: Vec2| ((p.x - min_x) * scale + pad, (max_y - p.y) * scale + pad);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let half_cell = self.grid_resolution * scale;
        for c in self.cells.iter().filter(|c| c.feasible) {
            let (cx, cy) = px(c.center);
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4a90d9"/>"##,
                cx - half_cell / 2.0,
                cy - half_cell / 2.0,
                half_cell,
                half_cell
            );
        }
        let (tx, ty) = px(Vec2::new(
            -geometry.treadmill_half_width,
            geometry.treadmill_half_length,
        ));
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black" stroke-width="2"/>"#,
            tx,
            ty,
            2.0 * geometry.treadmill_half_width * scale,
            2.0 * geometry.treadmill_half_length * scale
        );
        for (anchor, label) in [
            (geometry.anchor_left, "L"),
            (geometry.anchor_right, "R"),
            (geometry.anchor_back, "B"),
        ] {
            let (ax, ay) = px(anchor);
            let _ = writeln!(
                s,
                r##"<circle cx="{ax:.1}" cy="{ay:.1}" r="6" fill="#c0392b"/><text x="{:.1}" y="{:.1}" font-size="14">{label}</text>"##,
                ax + 9.0,
                ay + 5.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{pad:.0}" y="24" font-size="15">{}</text>"#,
            self.summary()
        );
        s.push_str("</svg>\n");
        s
    }
}
