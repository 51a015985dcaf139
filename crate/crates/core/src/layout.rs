//! Planar electrode layouts.
//!
//! A layout is a set of polygonal patches lying in the trap plane `z = 0`.
//! Coordinates are stored in micrometres exactly as they appear in the
//! layout file; conversion to SI happens in [`crate::fields`].
//!
//! Inter-electrode gaps are not represented: neighbouring patches share
//! their boundary, and everything outside the listed patches is an
//! implicit grounded plane.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point2 = [f64; 2];

const EXAMPLE_LAYOUT_JSON: &str = include_str!("../data/example_layout.json");

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout syntax error: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("invalid layout: {}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    RfInner,
    RfOuter,
    DcCenter,
    DcPad,
    Ground,
}

impl Role {
    pub fn is_dc(self) -> bool {
        matches!(self, Role::DcCenter | Role::DcPad)
    }

    pub fn is_rf(self) -> bool {
        matches!(self, Role::RfInner | Role::RfOuter)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::RfInner => "rf_inner",
            Role::RfOuter => "rf_outer",
            Role::DcCenter => "dc_center",
            Role::DcPad => "dc_pad",
            Role::Ground => "ground",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RingKind {
    Outer,
    Hole,
}

/// A closed polygonal ring in the trap plane (μm).
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
    pub kind: RingKind,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>, kind: RingKind) -> Self {
        Self { vertices, kind }
    }

    /// Counter-clockwise outer ring.
    pub fn outer(vertices: Vec<Point2>) -> Self {
        Self::new(vertices, RingKind::Outer)
    }

    /// Clockwise hole ring.
    pub fn hole(vertices: Vec<Point2>) -> Self {
        Self::new(vertices, RingKind::Hole)
    }

    /// Axis-aligned rectangle with the winding its kind requires.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, kind: RingKind) -> Self {
        let mut v = vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
        if kind == RingKind::Hole {
            v.reverse();
        }
        Self::new(v, kind)
    }

    /// Regular `n`-gon approximating a circle, with the winding its kind requires.
    pub fn regular(center: Point2, radius: f64, n: usize, kind: RingKind) -> Self {
        let mut v: Vec<Point2> = (0..n)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / n as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect();
        if kind == RingKind::Hole {
            v.reverse();
        }
        Self::new(v, kind)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Iterator over directed edges `(a, b)`, closing the ring.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area: positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        0.5 * self
            .edges()
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
    }

    pub fn centroid(&self) -> Point2 {
        let a = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let w = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * w;
            cy += (p[1] + q[1]) * w;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    fn bbox(&self) -> (Point2, Point2) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Strict interior test; points on the boundary are reported as outside.
    pub fn contains_strict(&self, p: Point2) -> bool {
        let scale = self.scale();
        let tol = 1e-12 * scale;
        for (a, b) in self.edges() {
            if point_segment_distance(p, a, b) <= tol {
                return false;
            }
        }
        winding_number(&self.vertices, p) != 0
    }

    fn scale(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi[0] - lo[0]).hypot(hi[1] - lo[1]).max(f64::MIN_POSITIVE)
    }

    /// True when no two non-adjacent edges touch and adjacent edges only
    /// share their common vertex.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if adjacent {
                    // Only a fold-back (collinear overlap) breaks simplicity here.
                    let shared = if j == i + 1 { b } else { a };
                    let (p, q) = if j == i + 1 { (a, d) } else { (b, c) };
                    if cross(sub(p, shared), sub(q, shared)).abs()
                        <= 1e-15 * self.scale() * self.scale()
                        && dot(sub(p, shared), sub(q, shared)) > 0.0
                    {
                        return false;
                    }
                } else if segments_touch(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }
}

/// One electrode: an outer boundary plus optional holes.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodePatch {
    pub id: String,
    pub role: Role,
    pub outer: Polygon,
    pub holes: Vec<Polygon>,
}

impl ElectrodePatch {
    pub fn new(id: impl Into<String>, role: Role, outer: Polygon, holes: Vec<Polygon>) -> Self {
        Self {
            id: id.into(),
            role,
            outer,
            holes,
        }
    }

    pub fn rings(&self) -> impl Iterator<Item = &Polygon> {
        std::iter::once(&self.outer).chain(self.holes.iter())
    }

    /// Net area in μm² (outer minus holes).
    pub fn area(&self) -> f64 {
        self.rings().map(Polygon::signed_area).sum()
    }

    /// Area centroid of the patch including holes.
    pub fn centroid(&self) -> Point2 {
        let (mut ax, mut ay, mut total) = (0.0, 0.0, 0.0);
        for ring in self.rings() {
            let a = ring.signed_area();
            let c = ring.centroid();
            ax += a * c[0];
            ay += a * c[1];
            total += a;
        }
        [ax / total, ay / total]
    }

    /// Strict interior membership: inside the outer ring and not inside or on a hole.
    pub fn contains_strict(&self, p: Point2) -> bool {
        if !self.outer.contains_strict(p) {
            return false;
        }
        self.holes.iter().all(|h| {
            let on_edge = h
                .edges()
                .any(|(a, b)| point_segment_distance(p, a, b) <= 1e-12 * h.scale());
            !on_edge && winding_number(&h.vertices, p) == 0
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeLayout {
    pub name: String,
    pub description: String,
    pub patches: Vec<ElectrodePatch>,
}

impl ElectrodeLayout {
    pub fn patch(&self, id: &str) -> Option<&ElectrodePatch> {
        self.patches.iter().find(|p| p.id == id)
    }

    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &ElectrodePatch> {
        self.patches.iter().filter(move |p| p.role == role)
    }

    pub fn rf_inner(&self) -> Option<&ElectrodePatch> {
        self.by_role(Role::RfInner).next()
    }

    pub fn rf_outer(&self) -> Option<&ElectrodePatch> {
        self.by_role(Role::RfOuter).next()
    }

    pub fn dc_ids(&self) -> Vec<String> {
        self.patches
            .iter()
            .filter(|p| p.role.is_dc())
            .map(|p| p.id.clone())
            .collect()
    }

    /// Serialize to the JSON layout-file schema.
    pub fn to_json(&self) -> String {
        let file = LayoutFile {
            name: self.name.clone(),
            description: if self.description.is_empty() {
                None
            } else {
                Some(self.description.clone())
            },
            unit: "um".to_string(),
            patches: self
                .patches
                .iter()
                .map(|p| PatchFile {
                    id: p.id.clone(),
                    role: p.role,
                    outer: p.outer.vertices.clone(),
                    holes: p.holes.iter().map(|h| h.vertices.clone()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("layout serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    unit: String,
    patches: Vec<PatchFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchFile {
    id: String,
    role: Role,
    outer: Vec<Point2>,
    #[serde(default)]
    holes: Vec<Vec<Point2>>,
}

/// Which layout invariant a diagnostic reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    UnsupportedUnit(String),
    TooFewVertices,
    NonFiniteCoordinate,
    DegenerateRing,
    SelfIntersecting,
    OuterWinding,
    HoleWinding,
    HoleOutsideOuter,
    DuplicateId,
    Overlap,
    RfInnerCount(usize),
    RfOuterCount(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub patch_ids: Vec<String>,
    pub rule: Rule,
}

impl Diagnostic {
    fn new(ids: &[&str], rule: Rule) -> Self {
        Self {
            patch_ids: ids.iter().map(|s| s.to_string()).collect(),
            rule,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match &self.rule {
            Rule::UnsupportedUnit(u) => format!("unsupported unit '{u}' (expected 'um')"),
            Rule::TooFewVertices => "ring has fewer than 3 vertices".into(),
            Rule::NonFiniteCoordinate => "non-finite coordinate".into(),
            Rule::DegenerateRing => "ring has zero area".into(),
            Rule::SelfIntersecting => "ring is self-intersecting".into(),
            Rule::OuterWinding => "outer ring must be counter-clockwise".into(),
            Rule::HoleWinding => "hole ring must be clockwise".into(),
            Rule::HoleOutsideOuter => "hole ring is not strictly inside the outer ring".into(),
            Rule::DuplicateId => "duplicate patch id".into(),
            Rule::Overlap => "patches overlap".into(),
            Rule::RfInnerCount(n) => format!("expected exactly one rf_inner patch, found {n}"),
            Rule::RfOuterCount(n) => format!("expected at most one rf_outer patch, found {n}"),
        };
        if self.patch_ids.is_empty() {
            write!(f, "{what}")
        } else {
            write!(f, "[{}] {what}", self.patch_ids.join(", "))
        }
    }
}

/// Parse and validate a layout file.
pub fn parse_layout(text: &str) -> Result<ElectrodeLayout, LayoutError> {
    let file: LayoutFile = serde_json::from_str(text)?;
    let mut diags = Vec::new();
    if file.unit != "um" {
        diags.push(Diagnostic::new(&[], Rule::UnsupportedUnit(file.unit.clone())));
    }
    let layout = ElectrodeLayout {
        name: file.name,
        description: file.description.unwrap_or_default(),
        patches: file
            .patches
            .into_iter()
            .map(|p| ElectrodePatch {
                id: p.id,
                role: p.role,
                outer: Polygon::outer(p.outer),
                holes: p.holes.into_iter().map(Polygon::hole).collect(),
            })
            .collect(),
    };
    diags.extend(validate_layout(&layout));
    if diags.is_empty() {
        Ok(layout)
    } else {
        Err(LayoutError::Invalid(diags))
    }
}

/// The bundled reconstruction of the fiber-trap electrode pattern.
pub fn example_layout() -> ElectrodeLayout {
    parse_layout(EXAMPLE_LAYOUT_JSON).expect("bundled example layout is valid")
}

/// Check every layout invariant; an empty result means the layout is valid.
pub fn validate_layout(layout: &ElectrodeLayout) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut sound = vec![true; layout.patches.len()];

    for (idx, patch) in layout.patches.iter().enumerate() {
        let id = patch.id.as_str();
        for ring in patch.rings() {
            let before = diags.len();
            check_ring(id, ring, &mut diags);
            if diags.len() > before {
                sound[idx] = false;
            }
        }
        if !sound[idx] {
            continue;
        }
        for hole in &patch.holes {
            let inside = hole
                .vertices
                .iter()
                .all(|&v| patch.outer.contains_strict(v))
                && !rings_cross(&patch.outer, hole);
            if !inside {
                diags.push(Diagnostic::new(&[id], Rule::HoleOutsideOuter));
                sound[idx] = false;
            }
        }
    }

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &layout.patches {
        *seen.entry(p.id.as_str()).or_default() += 1;
    }
    for (id, n) in seen {
        if n > 1 {
            diags.push(Diagnostic::new(&[id], Rule::DuplicateId));
        }
    }

    let n_inner = layout.by_role(Role::RfInner).count();
    if n_inner != 1 {
        diags.push(Diagnostic::new(&[], Rule::RfInnerCount(n_inner)));
    }
    let n_outer = layout.by_role(Role::RfOuter).count();
    if n_outer > 1 {
        diags.push(Diagnostic::new(&[], Rule::RfOuterCount(n_outer)));
    }

    for i in 0..layout.patches.len() {
        for j in (i + 1)..layout.patches.len() {
            if !(sound[i] && sound[j]) {
                continue;
            }
            let (a, b) = (&layout.patches[i], &layout.patches[j]);
            if patches_overlap(a, b) {
                diags.push(Diagnostic::new(&[&a.id, &b.id], Rule::Overlap));
            }
        }
    }
    diags
}

fn check_ring(id: &str, ring: &Polygon, diags: &mut Vec<Diagnostic>) {
    if ring.len() < 3 {
        diags.push(Diagnostic::new(&[id], Rule::TooFewVertices));
        return;
    }
    if ring.vertices.iter().flatten().any(|c| !c.is_finite()) {
        diags.push(Diagnostic::new(&[id], Rule::NonFiniteCoordinate));
        return;
    }
    let area = ring.signed_area();
    if area.abs() <= 1e-12 * ring.scale() * ring.scale() {
        diags.push(Diagnostic::new(&[id], Rule::DegenerateRing));
        return;
    }
    if !ring.is_simple() {
        diags.push(Diagnostic::new(&[id], Rule::SelfIntersecting));
        return;
    }
    match ring.kind {
        RingKind::Outer if area < 0.0 => diags.push(Diagnostic::new(&[id], Rule::OuterWinding)),
        RingKind::Hole if area > 0.0 => diags.push(Diagnostic::new(&[id], Rule::HoleWinding)),
        _ => {}
    }
}

/// Interiors of two patches intersect.
///
/// Shared (collinear) boundaries are allowed; proper edge crossings, or a
/// probe point just inside one patch lying strictly inside the other, count
/// as overlap.
fn patches_overlap(a: &ElectrodePatch, b: &ElectrodePatch) -> bool {
    let (alo, ahi) = a.outer.bbox();
    let (blo, bhi) = b.outer.bbox();
    if alo[0] >= bhi[0] || blo[0] >= ahi[0] || alo[1] >= bhi[1] || blo[1] >= ahi[1] {
        return false;
    }
    for ra in a.rings() {
        for rb in b.rings() {
            if rings_cross(ra, rb) {
                return true;
            }
        }
    }
    probe_points(a).any(|p| b.contains_strict(p)) || probe_points(b).any(|p| a.contains_strict(p))
}

/// Points just inside the patch next to the midpoint of every edge.
fn probe_points(patch: &ElectrodePatch) -> impl Iterator<Item = Point2> + '_ {
    let eps = 1e-6 * patch.outer.scale();
    patch.rings().flat_map(move |ring| {
        ring.edges().filter_map(move |(a, b)| {
            let d = sub(b, a);
            let len = d[0].hypot(d[1]);
            if len == 0.0 {
                return None;
            }
            // Interior lies to the left of a counter-clockwise outer edge and
            // to the left of a clockwise hole edge as well.
            let n = [-d[1] / len, d[0] / len];
            let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            Some([m[0] + eps * n[0], m[1] + eps * n[1]])
        })
    })
}

fn rings_cross(a: &Polygon, b: &Polygon) -> bool {
    for (p, q) in a.edges() {
        for (r, s) in b.edges() {
            if segments_cross_properly(p, q, r, s) {
                return true;
            }
        }
    }
    false
}

fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point2, b: Point2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn orient_sign(a: Point2, b: Point2, c: Point2) -> i8 {
    let o = orient(a, b, c);
    let scale = (sub(b, a)[0].abs() + sub(b, a)[1].abs()) * (sub(c, a)[0].abs() + sub(c, a)[1].abs());
    if o.abs() <= 1e-14 * scale {
        0
    } else if o > 0.0 {
        1
    } else {
        -1
    }
}

/// Segments cross at a single point interior to both.
fn segments_cross_properly(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o1 = orient_sign(a, b, c);
    let o2 = orient_sign(a, b, d);
    let o3 = orient_sign(c, d, a);
    let o4 = orient_sign(c, d, b);
    o1 * o2 < 0 && o3 * o4 < 0
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Segments share any point.
fn segments_touch(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o1 = orient_sign(a, b, c);
    let o2 = orient_sign(a, b, d);
    let o3 = orient_sign(c, d, a);
    let o4 = orient_sign(c, d, b);
    if o1 * o2 < 0 && o3 * o4 < 0 {
        return true;
    }
    (o1 == 0 && on_segment(c, a, b))
        || (o2 == 0 && on_segment(d, a, b))
        || (o3 == 0 && on_segment(a, c, d))
        || (o4 == 0 && on_segment(b, c, d))
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(ap, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let c = [a[0] + t * ab[0], a[1] + t * ab[1]];
    (p[0] - c[0]).hypot(p[1] - c[1])
}

fn winding_number(vertices: &[Point2], p: Point2) -> i32 {
    let n = vertices.len();
    let mut wn = 0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        if a[1] <= p[1] {
            if b[1] > p[1] && orient(a, b, p) > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && orient(a, b, p) < 0.0 {
            wn -= 1;
        }
    }
    wn
}
