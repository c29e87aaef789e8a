//! Convex polygon clipping with edge provenance.
//!
//! Regions are built by cutting the input box with one halfplane per neuron.
//! Every polygon edge remembers where it came from (a box side or a neuron's
//! switching line), which is what lets the enumerator jump across facets.

/// Where a polygon edge comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLabel {
    /// One of the four input-box sides.
    Box(u8),
    /// The switching line of this hidden neuron (flat index).
    Neuron(usize),
}

/// Convex polygon, counterclockwise. `labels[i]` belongs to the edge from
/// `vertices[i]` to `vertices[(i+1) % n]`.
#[derive(Debug, Clone)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
    pub labels: Vec<EdgeLabel>,
}

impl Polygon {
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        Polygon {
            vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
            labels: vec![EdgeLabel::Box(0), EdgeLabel::Box(1), EdgeLabel::Box(2), EdgeLabel::Box(3)],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Shoelace area; positive for counterclockwise orientation.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            s += a[0] * b[1] - b[0] * a[1];
        }
        0.5 * s
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.vertices.len() as f64;
        let mut c = [0.0, 0.0];
        for v in &self.vertices {
            c[0] += v[0];
            c[1] += v[1];
        }
        [c[0] / n, c[1] / n]
    }

    /// Clips against the halfplane `a.x + b >= 0`, labeling the cut edge.
    /// `eps` decides when a vertex counts as on the line (kept inside).
    pub fn clip(&self, a: [f64; 2], b: f64, label: EdgeLabel, eps: f64) -> Polygon {
        let n = self.vertices.len();
        if n == 0 {
            return Polygon { vertices: Vec::new(), labels: Vec::new() };
        }
        let dist = |v: &[f64; 2]| a[0] * v[0] + a[1] * v[1] + b;
        let mut out_v: Vec<[f64; 2]> = Vec::with_capacity(n + 2);
        let mut out_l: Vec<EdgeLabel> = Vec::with_capacity(n + 2);
        for i in 0..n {
            let v0 = self.vertices[i];
            let v1 = self.vertices[(i + 1) % n];
            let d0 = dist(&v0);
            let d1 = dist(&v1);
            let in0 = d0 >= -eps;
            let in1 = d1 >= -eps;
            if in0 {
                // v0 is kept; its outgoing edge is the original one (possibly
                // truncated at the exit crossing handled below).
                out_v.push(v0);
                out_l.push(self.labels[i]);
            }
            if in0 != in1 {
                let t = d0 / (d0 - d1);
                let p = [v0[0] + t * (v1[0] - v0[0]), v0[1] + t * (v1[1] - v0[1])];
                if in0 {
                    // Leaving: from p the boundary runs along the clip line.
                    out_v.push(p);
                    out_l.push(label);
                } else {
                    // Entering: from p the boundary continues on edge i.
                    out_v.push(p);
                    out_l.push(self.labels[i]);
                }
            }
        }
        dedup(&mut out_v, &mut out_l, eps);
        Polygon { vertices: out_v, labels: out_l }
    }

    /// Midpoints and outward normals of all edges carrying `label`.
    pub fn edges_with_label(&self, label: EdgeLabel) -> Vec<([f64; 2], [f64; 2])> {
        let n = self.vertices.len();
        let mut out = Vec::new();
        for i in 0..n {
            if self.labels[i] == label {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                // CCW polygon: outward normal of edge (a -> b) is (dy, -dx).
                let d = [b[0] - a[0], b[1] - a[1]];
                let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if len > 0.0 {
                    out.push((mid, [d[1] / len, -d[0] / len]));
                }
            }
        }
        out
    }

    pub fn neuron_labels(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for l in &self.labels {
            if let EdgeLabel::Neuron(n) = l {
                if !seen.contains(n) {
                    seen.push(*n);
                }
            }
        }
        seen.sort_unstable();
        seen
    }

    pub fn contains(&self, p: [f64; 2], eps: f64) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if cross < -eps {
                return false;
            }
        }
        n >= 3
    }
}

/// Removes zero-length edges; when `w_j == w_{j+1}` the first vertex and its
/// outgoing label vanish.
fn dedup(vs: &mut Vec<[f64; 2]>, ls: &mut Vec<EdgeLabel>, eps: f64) {
    let mut i = 0;
    while vs.len() >= 2 && i < vs.len() {
        let j = (i + 1) % vs.len();
        let same = (vs[i][0] - vs[j][0]).abs() <= eps && (vs[i][1] - vs[j][1]).abs() <= eps;
        if same {
            vs.remove(i);
            ls.remove(i);
        } else {
            i += 1;
        }
    }
    if vs.len() < 3 {
        vs.clear();
        ls.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn rect_area_and_orientation() {
        let p = Polygon::rect(-1.0, -1.0, 1.0, 1.0);
        assert!((p.area() - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn clip_through_middle() {
        // Keep x >= 0: right half of the unit-ish square.
        let p = Polygon::rect(-1.0, -1.0, 1.0, 1.0);
        let c = p.clip([1.0, 0.0], 0.0, EdgeLabel::Neuron(7), EPS);
        assert!((c.area() - 2.0).abs() <= 1e-12);
        assert_eq!(c.neuron_labels(), vec![7]);
        let facets = c.edges_with_label(EdgeLabel::Neuron(7));
        assert_eq!(facets.len(), 1);
        let (mid, normal) = facets[0];
        assert!(mid[0].abs() <= 1e-12);
        // Outward from the kept side x >= 0 points in -x.
        assert!(normal[0] < -0.99);
    }

    #[test]
    fn clip_missing_the_polygon_keeps_it() {
        let p = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        let c = p.clip([1.0, 0.0], 5.0, EdgeLabel::Neuron(0), EPS);
        assert_eq!(c.vertices.len(), 4);
        assert!(c.neuron_labels().is_empty());
    }

    #[test]
    fn clip_removing_everything() {
        let p = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        let c = p.clip([1.0, 0.0], -5.0, EdgeLabel::Neuron(0), EPS);
        assert!(c.is_empty());
    }

    #[test]
    fn successive_clips_partition_area() {
        let p = Polygon::rect(0.0, 0.0, 2.0, 2.0);
        let left = p.clip([-1.0, 0.0], 1.0, EdgeLabel::Neuron(1), EPS); // x <= 1
        let right = p.clip([1.0, 0.0], -1.0, EdgeLabel::Neuron(1), EPS); // x >= 1
        assert!((left.area() + right.area() - p.area()).abs() <= 1e-12);
    }

    #[test]
    fn diagonal_clip_labels_cut_edge() {
        let p = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        // Keep x + y <= 1.
        let c = p.clip([-1.0, -1.0], 1.0, EdgeLabel::Neuron(3), EPS);
        assert!((c.area() - 0.5).abs() <= 1e-12);
        assert_eq!(c.vertices.len(), 3);
        assert_eq!(c.edges_with_label(EdgeLabel::Neuron(3)).len(), 1);
    }

    #[test]
    fn contains_checks_interior() {
        let p = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        assert!(p.contains([0.5, 0.5], EPS));
        assert!(!p.contains([1.5, 0.5], EPS));
    }
}
