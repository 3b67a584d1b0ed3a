//! Topology analysis ahead of code generation: breadth-first levels of the
//! kinematic tree, structurally zero columns of gradient temporaries, and the
//! flat workspace layout kernels address.

use std::fmt::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::urdf::{RobotModel, Tree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Id,
    Minv,
    Fd,
    GradId,
    GradFd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Id, Algorithm::Minv, Algorithm::Fd, Algorithm::GradId, Algorithm::GradFd];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Id => "ID",
            Algorithm::Minv => "Minv",
            Algorithm::Fd => "FD",
            Algorithm::GradId => "gradID",
            Algorithm::GradFd => "gradFD",
        }
    }

    pub fn is_gradient(self) -> bool {
        matches!(self, Algorithm::GradId | Algorithm::GradFd)
    }

    fn uses_minv(self) -> bool {
        matches!(self, Algorithm::Minv | Algorithm::Fd | Algorithm::GradFd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase().replace(['_', '-'], "");
        let key = match lower.strip_prefix('∇') {
            Some(rest) => format!("grad{rest}"),
            None => lower,
        };
        Ok(match key.as_str() {
            "id" | "rnea" => Algorithm::Id,
            "minv" => Algorithm::Minv,
            "fd" => Algorithm::Fd,
            "gradid" => Algorithm::GradId,
            "gradfd" => Algorithm::GradFd,
            _ => return Err(ScheduleError::UnknownAlgorithm(s.to_string())),
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("unknown algorithm `{0}` (expected ID, Minv, FD, gradID or gradFD)")]
    UnknownAlgorithm(String),
    #[error("workspace budget {budget} is below the smallest feasible layout of {floor} slots")]
    InfeasibleBudget { floor: usize, budget: usize },
}

/// Frames grouped by tree depth. Forward sweeps run the levels in order,
/// backward sweeps in reverse.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LevelSchedule {
    /// Frames of each level, ascending.
    pub levels: Vec<Vec<usize>>,
    pub level_of: Vec<usize>,
}

pub fn build_levels(model: &RobotModel) -> LevelSchedule {
    levels_from_parents(&model.parent)
}

pub fn levels_from_parents(parent: &[Option<usize>]) -> LevelSchedule {
    let tree = Tree::new(parent);
    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); tree.max_depth() + usize::from(!parent.is_empty())];
    for (i, &d) in tree.depth.iter().enumerate() {
        levels[d].push(i);
    }
    LevelSchedule { levels, level_of: tree.depth }
}

/// Structurally retained `(frame, column)` entries of one temporary.
#[derive(Clone, Debug, PartialEq)]
pub struct TempColumns {
    pub name: &'static str,
    /// Scalars per entry.
    pub width: usize,
    pub n_cols: usize,
    pub retained: Vec<(usize, usize)>,
    /// `frame * n_cols + col` → index into `retained`.
    index: Vec<Option<u32>>,
}

impl TempColumns {
    fn build(name: &'static str, width: usize, n_frames: usize, n_cols: usize, keep: impl Fn(usize, usize) -> bool) -> Self {
        let mut retained = Vec::new();
        let mut index = vec![None; n_frames * n_cols];
        for i in 0..n_frames {
            for c in 0..n_cols {
                if keep(i, c) {
                    index[i * n_cols + c] = Some(retained.len() as u32);
                    retained.push((i, c));
                }
            }
        }
        TempColumns { name, width, n_cols, retained, index }
    }

    /// Position of entry `(frame, col)` among the retained entries.
    pub fn position(&self, frame: usize, col: usize) -> Option<usize> {
        self.index[frame * self.n_cols + col].map(|p| p as usize)
    }

    pub fn contains(&self, frame: usize, col: usize) -> bool {
        self.position(frame, col).is_some()
    }

    pub fn retained_scalars(&self) -> usize {
        self.retained.len() * self.width
    }

    pub fn dense_scalars(&self) -> usize {
        self.index.len() * self.width
    }
}

/// Which entries of each column-indexed temporary a kernel keeps.
///
/// Gradient columns `c < n` are `∂/∂q_c`, columns `n ≤ c < 2n` are `∂/∂q̇_{c−n}`;
/// inverse-mass temporaries are indexed by the column `j` of `M⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMap {
    pub algorithm: Algorithm,
    pub n_frames: usize,
    pub compressed: bool,
    pub temps: Vec<TempColumns>,
}

impl ColumnMap {
    pub fn get(&self, name: &str) -> Option<&TempColumns> {
        self.temps.iter().find(|t| t.name == name)
    }

    /// # Panics
    /// If the algorithm has no temporary called `name`.
    pub fn temp(&self, name: &str) -> &TempColumns {
        self.get(name).unwrap_or_else(|| panic!("{} has no column temporary `{name}`", self.algorithm))
    }

    pub fn retained_scalars(&self) -> usize {
        self.temps.iter().map(TempColumns::retained_scalars).sum()
    }

    pub fn dense_scalars(&self) -> usize {
        self.temps.iter().map(TempColumns::dense_scalars).sum()
    }

    /// Retained share of the dense footprint; 1.0 when there is nothing to
    /// compress.
    pub fn retained_fraction(&self) -> f64 {
        let dense = self.dense_scalars();
        if dense == 0 {
            1.0
        } else {
            self.retained_scalars() as f64 / dense as f64
        }
    }
}

/// Names of the gradient temporaries that are compressed.
pub const GRADIENT_TEMPS: [&str; 4] = ["dv", "da", "df", "dftot"];
/// Names of the inverse-mass temporaries that are compressed.
pub const MINV_TEMPS: [&str; 3] = ["minv_partial", "f_cols", "p_cols"];

fn column_temps(model: &RobotModel, algorithm: Algorithm, keep_all: bool) -> Vec<TempColumns> {
    let n = model.n_frames();
    let tree = model.tree();
    let t = &tree;
    let mut temps = Vec::new();
    let pick = |rule: bool| keep_all || rule;
    if algorithm.uses_minv() {
        temps.push(TempColumns::build("minv_partial", 1, n, n, |i, j| pick(t.is_ancestor_or_self(i, j))));
        temps.push(TempColumns::build("f_cols", 6, n, n, |i, j| pick(j != i && t.is_ancestor_or_self(i, j))));
        temps.push(TempColumns::build("p_cols", 6, n, n, |i, j| {
            pick(j > i && t.same_limb(i, j) && !t.children[i].is_empty())
        }));
    }
    if algorithm.is_gradient() {
        let joint = |c: usize| c % n;
        for name in ["dv", "da", "df"] {
            temps.push(TempColumns::build(name, 6, n, 2 * n, |i, c| pick(t.is_ancestor_or_self(joint(c), i))));
        }
        temps.push(TempColumns::build("dv_crm", 36, n, 2 * n, |i, c| pick(t.is_ancestor_or_self(joint(c), i))));
        let related = |i: usize, c: usize| t.is_ancestor_or_self(joint(c), i) || t.is_ancestor_or_self(i, joint(c));
        temps.push(TempColumns::build("dftot", 6, n, 2 * n, |i, c| pick(related(i, c))));
        if algorithm == Algorithm::GradFd {
            temps.push(TempColumns::build("dtau", 1, n, 2 * n, |i, c| pick(related(i, c))));
        }
    }
    temps
}

/// Keep column `j` of a frame's temporary only where it can be nonzero:
/// derivative temporaries of the outward sweep need `j` to be an ancestor of
/// (or equal to) the frame; accumulated forces also depend on descendants.
pub fn analyze_sparsity(model: &RobotModel, algorithm: Algorithm) -> ColumnMap {
    ColumnMap { algorithm, n_frames: model.n_frames(), compressed: true, temps: column_temps(model, algorithm, false) }
}

/// Every column kept; the uncompressed baseline.
pub fn dense_columns(model: &RobotModel, algorithm: Algorithm) -> ColumnMap {
    ColumnMap { algorithm, n_frames: model.n_frames(), compressed: false, temps: column_temps(model, algorithm, true) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SegmentRole {
    Input,
    Temp,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SegmentShape {
    Flat,
    PerFrame { width: usize },
    /// Compressed entries of the [`ColumnMap`] temporary of the same name.
    Columns { width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: SegmentShape,
    pub role: SegmentRole,
}

/// Default workspace budget in scalar slots (96 KiB of 4-byte scalars, the
/// largest per-block shared memory of common data-center GPUs).
pub const DEFAULT_BUDGET: usize = 24 * 1024;

/// A flat scalar arena partitioned into named segments.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkspaceLayout {
    pub algorithm: Algorithm,
    pub n_frames: usize,
    pub segments: Vec<Segment>,
    pub total_size: usize,
    pub budget: Option<usize>,
    /// Cross products are evaluated inline instead of through materialized
    /// `crm(v)` and `crm(∂v)` matrices.
    pub fused_cross: bool,
    pub columns: ColumnMap,
}

impl WorkspaceLayout {
    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    fn seg(&self, name: &str) -> &Segment {
        self.segment(name).unwrap_or_else(|| panic!("{} layout has no segment `{name}`", self.algorithm))
    }

    /// Slot of element `k` of a flat segment.
    pub fn flat(&self, name: &str, k: usize) -> usize {
        let s = self.seg(name);
        assert!(k < s.len, "`{name}` index {k} out of range {}", s.len);
        s.offset + k
    }

    /// Slot of component `k` of frame `i` in a per-frame segment.
    pub fn frame(&self, name: &str, i: usize, k: usize) -> usize {
        let s = self.seg(name);
        let SegmentShape::PerFrame { width } = s.shape else { panic!("`{name}` is not per-frame") };
        assert!(k < width && i < self.n_frames);
        s.offset + i * width + k
    }

    /// Slot of component `k` of entry `(i, col)` of a column segment, or
    /// `None` where the column is structurally zero.
    pub fn column(&self, name: &str, i: usize, col: usize, k: usize) -> Option<usize> {
        let s = self.seg(name);
        let SegmentShape::Columns { width } = s.shape else { panic!("`{name}` is not a column segment") };
        assert!(k < width);
        self.columns.temp(name).position(i, col).map(|p| s.offset + p * width + k)
    }

    pub fn has_column(&self, name: &str, i: usize, col: usize) -> bool {
        self.columns.temp(name).contains(i, col)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.role == SegmentRole::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.role == SegmentRole::Output)
    }
}

struct SegmentList<'a> {
    segments: Vec<Segment>,
    n: usize,
    columns: &'a ColumnMap,
}

impl SegmentList<'_> {
    fn push(&mut self, name: &str, len: usize, shape: SegmentShape, role: SegmentRole) {
        let offset = self.segments.last().map_or(0, |s| s.offset + s.len);
        self.segments.push(Segment { name: name.to_string(), offset, len, shape, role });
    }

    fn flat(&mut self, name: &str, len: usize, role: SegmentRole) {
        self.push(name, len, SegmentShape::Flat, role);
    }

    fn per_frame(&mut self, name: &str, width: usize) {
        self.push(name, self.n * width, SegmentShape::PerFrame { width }, SegmentRole::Temp);
    }

    fn cols(&mut self, name: &str) {
        let t = self.columns.temp(name);
        self.push(name, t.retained_scalars(), SegmentShape::Columns { width: t.width }, SegmentRole::Temp);
    }

    fn rnea(&mut self, prefix: &str) {
        for v in ["v", "a", "f", "ftot"] {
            self.per_frame(&format!("{prefix}{v}"), 6);
        }
    }

    fn minv(&mut self) {
        self.per_frame("ia", 36);
        self.per_frame("u", 6);
        self.per_frame("dinv", 1);
        for name in MINV_TEMPS {
            self.cols(name);
        }
    }

    fn gradient(&mut self, materialize_crm: bool) {
        for name in ["xv", "xa", "iv", "xv_s", "xa_s", "v_s", "g"] {
            self.per_frame(name, 6);
        }
        if materialize_crm {
            self.per_frame("crm", 36);
            self.cols("dv_crm");
        }
        for name in GRADIENT_TEMPS {
            self.cols(name);
        }
    }
}

fn layout(model: &RobotModel, algorithm: Algorithm, columns: &ColumnMap, materialize_crm: bool) -> WorkspaceLayout {
    use SegmentRole::{Input, Output, Temp};
    let n = model.n_frames();
    assert_eq!(columns.n_frames, n, "column map and model disagree on frame count");
    assert_eq!(columns.algorithm, algorithm, "column map was built for {}", columns.algorithm);
    let mut l = SegmentList { segments: Vec::new(), n, columns };
    l.flat("q", n, Input);
    match algorithm {
        Algorithm::Id | Algorithm::GradId => {
            l.flat("qd", n, Input);
            l.flat("qdd", n, Input);
            l.flat("fext", 6 * n, Input);
        }
        Algorithm::Fd | Algorithm::GradFd => {
            l.flat("qd", n, Input);
            l.flat("tau", n, Input);
            l.flat("fext", 6 * n, Input);
        }
        Algorithm::Minv => {}
    }
    l.per_frame("xform", 12);
    match algorithm {
        Algorithm::Id => {
            l.rnea("");
            l.flat("tau", n, Output);
        }
        Algorithm::Minv => {
            l.minv();
            l.flat("minv", n * n, Output);
        }
        Algorithm::Fd => {
            l.minv();
            l.flat("minv", n * n, Temp);
            l.rnea("");
            l.flat("bias", n, Temp);
            l.flat("qdd", n, Output);
        }
        Algorithm::GradId => {
            l.rnea("");
            l.gradient(materialize_crm);
            l.flat("dtau_dq", n * n, Output);
            l.flat("dtau_dqd", n * n, Output);
        }
        Algorithm::GradFd => {
            l.minv();
            l.flat("minv", n * n, Temp);
            l.rnea("bias.");
            l.flat("bias", n, Temp);
            l.flat("qdd", n, Output);
            l.rnea("");
            l.gradient(materialize_crm);
            l.cols("dtau");
            l.flat("dqdd_dq", n * n, Output);
            l.flat("dqdd_dqd", n * n, Output);
        }
    }
    let total_size = l.segments.last().map_or(0, |s| s.offset + s.len);
    WorkspaceLayout {
        algorithm,
        n_frames: n,
        segments: l.segments,
        total_size,
        budget: None,
        fused_cross: !materialize_crm && algorithm.is_gradient(),
        columns: columns.clone(),
    }
}

/// The layout with every optional temporary materialized, ignoring budgets.
pub fn full_layout(model: &RobotModel, algorithm: Algorithm, columns: &ColumnMap) -> WorkspaceLayout {
    layout(model, algorithm, columns, algorithm.is_gradient())
}

/// Smallest layout the generator supports: cross products fused.
pub fn floor_layout(model: &RobotModel, algorithm: Algorithm, columns: &ColumnMap) -> WorkspaceLayout {
    layout(model, algorithm, columns, false)
}

/// Pick the full layout if it fits in `budget` slots, otherwise the reduced
/// layout with fused cross products, otherwise fail with the floor size.
pub fn plan_workspace(
    model: &RobotModel,
    algorithm: Algorithm,
    columns: &ColumnMap,
    budget: usize,
) -> Result<WorkspaceLayout, ScheduleError> {
    let full = full_layout(model, algorithm, columns);
    let chosen = if full.total_size <= budget {
        full
    } else {
        let floor = floor_layout(model, algorithm, columns);
        if floor.total_size > budget {
            return Err(ScheduleError::InfeasibleBudget { floor: floor.total_size, budget });
        }
        floor
    };
    Ok(WorkspaceLayout { budget: Some(budget), ..chosen })
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record<'a> {
    Level { index: usize, frames: &'a [usize] },
    Segment { name: &'a str, offset: usize, len: usize, role: SegmentRole, shape: SegmentShape },
    Layout { algorithm: &'a str, total_size: usize, budget: Option<usize>, fused_cross: bool, retained_fraction: f64 },
}

/// Human-readable dump of a schedule and layout.
pub fn dump_text(levels: &LevelSchedule, layout: &WorkspaceLayout) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "levels {}", levels.levels.len());
    for (k, frames) in levels.levels.iter().enumerate() {
        let list: Vec<String> = frames.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "  level {k}: {}", list.join(" "));
    }
    let _ = writeln!(
        out,
        "layout {} total {} budget {} fused_cross {} retained {:.4}",
        layout.algorithm,
        layout.total_size,
        layout.budget.map_or("none".to_string(), |b| b.to_string()),
        layout.fused_cross,
        layout.columns.retained_fraction()
    );
    for s in &layout.segments {
        let shape = match s.shape {
            SegmentShape::Flat => "flat".to_string(),
            SegmentShape::PerFrame { width } => format!("per-frame x{width}"),
            SegmentShape::Columns { width } => format!("columns x{width}"),
        };
        let _ = writeln!(out, "  {:<14} {:>7} +{:<7} {:?} {shape}", s.name, s.offset, s.len, s.role);
    }
    out
}

/// One JSON record per line: levels, then the layout summary, then segments.
pub fn dump_json_lines(levels: &LevelSchedule, layout: &WorkspaceLayout) -> String {
    let mut records = Vec::new();
    for (index, frames) in levels.levels.iter().enumerate() {
        records.push(Record::Level { index, frames });
    }
    records.push(Record::Layout {
        algorithm: layout.algorithm.name(),
        total_size: layout.total_size,
        budget: layout.budget,
        fused_cross: layout.fused_cross,
        retained_fraction: layout.columns.retained_fraction(),
    });
    for s in &layout.segments {
        records.push(Record::Segment { name: &s.name, offset: s.offset, len: s.len, role: s.role, shape: s.shape });
    }
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}
