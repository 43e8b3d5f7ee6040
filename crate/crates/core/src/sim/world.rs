//! Plane-set world geometry with exact ray casting.

use nalgebra::Vector3;

/// A finite rectangular patch: `origin + a*edge_u + b*edge_v`, a,b in [0,1].
#[derive(Clone, Debug)]
pub struct Rect {
    pub origin: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    normal: Vector3<f64>,
    inv_u2: f64,
    inv_v2: f64,
}

impl Rect {
    pub fn new(origin: Vector3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>) -> Self {
        let normal = edge_u.cross(&edge_v).normalize();
        Self {
            origin,
            edge_u,
            edge_v,
            normal,
            inv_u2: 1.0 / edge_u.norm_squared(),
            inv_v2: 1.0 / edge_v.norm_squared(),
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    /// Ray-patch intersection distance, if any.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.origin - origin)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let hit = origin + dir * t - self.origin;
        let a = hit.dot(&self.edge_u) * self.inv_u2;
        let b = hit.dot(&self.edge_v) * self.inv_v2;
        if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
            Some(t)
        } else {
            None
        }
    }
}

/// World model: rectangular surfaces plus identified point landmarks for
/// the synthetic visual pipeline.
#[derive(Clone, Debug, Default)]
pub struct WorldModel {
    pub rects: Vec<Rect>,
    pub landmarks: Vec<(u64, Vector3<f64>)>,
}

impl WorldModel {
    /// Nearest hit distance along the ray within `max_range`, or `None` for
    /// a max-range miss.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for rect in &self.rects {
            if let Some(t) = rect.intersect(origin, dir) {
                if t <= max_range && best.map(|b| t < b).unwrap_or(true) {
                    best = Some(t);
                }
            }
        }
        best
    }

    fn add_wall_x(&mut self, x0: f64, x1: f64, y: f64, height: f64) {
        // Wall parallel to the x axis at lateral offset y.
        self.rects.push(Rect::new(
            Vector3::new(x0, y, 0.0),
            Vector3::new(x1 - x0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, height),
        ));
    }

    fn add_wall_y(&mut self, y0: f64, y1: f64, x: f64, height: f64) {
        self.rects.push(Rect::new(
            Vector3::new(x, y0, 0.0),
            Vector3::new(0.0, y1 - y0, 0.0),
            Vector3::new(0.0, 0.0, height),
        ));
    }

    /// Straight corridor along +x: two side walls and two end walls, no
    /// floor or ceiling, so mid-corridor scans land on exactly two parallel
    /// planes once the end walls fall outside the range cap.
    pub fn corridor(length: f64, width: f64, height: f64) -> Self {
        let half_w = width * 0.5;
        let mut w = Self::default();
        w.add_wall_x(0.0, length, -half_w, height);
        w.add_wall_x(0.0, length, half_w, height);
        w.add_wall_y(-half_w, half_w, 0.0, height);
        w.add_wall_y(-half_w, half_w, length, height);
        w.sprinkle_landmarks(length, half_w, height);
        w
    }

    fn sprinkle_landmarks(&mut self, length: f64, half_w: f64, height: f64) {
        // Regular grid on both side walls.
        let mut id = 0u64;
        let mut x = 1.0;
        while x < length {
            for z in [height * 0.3, height * 0.7] {
                self.landmarks.push((id, Vector3::new(x, -half_w + 1e-3, z)));
                id += 1;
                self.landmarks.push((id, Vector3::new(x, half_w - 1e-3, z)));
                id += 1;
            }
            x += 1.5;
        }
    }

    /// Square ring corridor (outer box minus inner block), walls only.
    pub fn square_ring(outer: f64, inner: f64, height: f64) -> Self {
        let ho = outer * 0.5;
        let hi = inner * 0.5;
        let mut w = Self::default();
        // Outer walls, normals irrelevant (two-sided patches).
        w.add_wall_x(-ho, ho, -ho, height);
        w.add_wall_x(-ho, ho, ho, height);
        w.add_wall_y(-ho, ho, -ho, height);
        w.add_wall_y(-ho, ho, ho, height);
        // Inner block walls.
        w.add_wall_x(-hi, hi, -hi, height);
        w.add_wall_x(-hi, hi, hi, height);
        w.add_wall_y(-hi, hi, -hi, height);
        w.add_wall_y(-hi, hi, hi, height);
        let mut id = 0u64;
        let mut s = -ho + 1.0;
        while s < ho {
            for z in [height * 0.35, height * 0.65] {
                w.landmarks.push((id, Vector3::new(s, -ho + 1e-3, z)));
                id += 1;
                w.landmarks.push((id, Vector3::new(-ho + 1e-3, s, z)));
                id += 1;
            }
            s += 2.0;
        }
        w
    }

    /// Closed box room viewed from inside.
    pub fn box_room(width: f64, depth: f64, height: f64) -> Self {
        let hw = width * 0.5;
        let hd = depth * 0.5;
        let mut w = Self::default();
        w.add_wall_x(-hw, hw, -hd, height);
        w.add_wall_x(-hw, hw, hd, height);
        w.add_wall_y(-hd, hd, -hw, height);
        w.add_wall_y(-hd, hd, hw, height);
        // Floor and ceiling close the box so every ray terminates.
        w.rects.push(Rect::new(
            Vector3::new(-hw, -hd, 0.0),
            Vector3::new(width, 0.0, 0.0),
            Vector3::new(0.0, depth, 0.0),
        ));
        w.rects.push(Rect::new(
            Vector3::new(-hw, -hd, height),
            Vector3::new(width, 0.0, 0.0),
            Vector3::new(0.0, depth, 0.0),
        ));
        // A few interior pillars give the room structure along every axis.
        for (px, py) in [(-hw * 0.5, -hd * 0.4), (hw * 0.4, hd * 0.5), (hw * 0.1, -hd * 0.55)] {
            w.add_wall_x(px - 0.3, px + 0.3, py - 0.3, height);
            w.add_wall_x(px - 0.3, px + 0.3, py + 0.3, height);
            w.add_wall_y(py - 0.3, py + 0.3, px - 0.3, height);
            w.add_wall_y(py - 0.3, py + 0.3, px + 0.3, height);
        }
        w
    }
}
