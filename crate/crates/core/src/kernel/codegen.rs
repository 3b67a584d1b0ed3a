//! Kernel generation: the reference recurrences traced one work item at a
//! time, addressed through a [`WorkspaceLayout`] and scheduled level by level.

use super::ir::{IoSegment, ItemTag, KernelMeta, KernelProgram, Phase, WorkItem};
use super::trace::{trace_item, Sym};
use crate::recur::{self, ColumnRole, FrameMotion, SelfTerms};
use crate::scalar::Scalar;
use crate::schedule::{
    analyze_sparsity, build_levels, dense_columns, floor_layout, full_layout, plan_workspace, Algorithm, ColumnMap,
    LevelSchedule, ScheduleError, WorkspaceLayout, DEFAULT_BUDGET,
};
use crate::spatial::{crm, motion_subspace, xform_from_joint, Mat3, Mat6, RigidInertia, SpatialVec, Transform, Vec3};
use crate::urdf::{classify_topology, RobotModel, Topology, Tree};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("layout was planned for {layout} frames, model `{model}` has {frames}")]
    LayoutMismatch { model: String, frames: usize, layout: usize },
}

/// Which workspace layout to generate against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LayoutChoice {
    /// Full layout if it fits the budget, else the reduced one.
    #[default]
    Auto,
    /// Materialize every optional temporary regardless of budget.
    Full,
    /// Fuse cross products even if the full layout would fit.
    Reduced,
}

#[derive(Clone, Debug)]
pub struct GenOptions {
    pub budget: usize,
    /// Drop structurally zero gradient columns.
    pub compress: bool,
    pub layout: LayoutChoice,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions { budget: DEFAULT_BUDGET, compress: true, layout: LayoutChoice::Auto }
    }
}

/// Plan the workspace for `algorithm` and generate its kernel.
pub fn generate(model: &RobotModel, algorithm: Algorithm, opts: &GenOptions) -> Result<KernelProgram, GenError> {
    let columns =
        if opts.compress { analyze_sparsity(model, algorithm) } else { dense_columns(model, algorithm) };
    let layout = match opts.layout {
        LayoutChoice::Auto => plan_workspace(model, algorithm, &columns, opts.budget)?,
        LayoutChoice::Full => full_layout(model, algorithm, &columns),
        LayoutChoice::Reduced => floor_layout(model, algorithm, &columns),
    };
    generate_with_layout(model, &layout)
}

/// Generate against an explicit layout.
pub fn generate_with_layout(model: &RobotModel, layout: &WorkspaceLayout) -> Result<KernelProgram, GenError> {
    if layout.n_frames != model.n_frames() || layout.columns.n_frames != model.n_frames() {
        return Err(GenError::LayoutMismatch {
            model: model.name.clone(),
            frames: model.n_frames(),
            layout: layout.n_frames,
        });
    }
    let g = Gen::new(model, layout);
    let n = g.n;
    let setup = vec![g.setup()];
    let phases = match layout.algorithm {
        Algorithm::Id => {
            let mut p = setup;
            p.extend(g.rnea_forward("", Qdd::Input, false));
            p.extend(g.rnea_backward("", false));
            p.push(g.tau_out("", "tau", "tau_out"));
            p
        }
        Algorithm::Minv => {
            let mut p = setup;
            p.extend(g.minv());
            p
        }
        Algorithm::Fd => {
            let mut p = setup;
            p.extend(merge(g.minv(), g.bias("")));
            p.push(g.rows());
            p
        }
        Algorithm::GradId => {
            let mut p = setup;
            p.extend(g.gradient(Qdd::Input));
            p
        }
        Algorithm::GradFd => {
            let mut p = setup;
            p.extend(merge(g.minv(), g.bias("bias.")));
            p.push(g.rows());
            p.extend(g.gradient(Qdd::Computed));
            p.push(g.products());
            p
        }
    };
    let phases: Vec<Phase> = phases.into_iter().filter(|p| !p.items.is_empty()).collect();
    let io = |it: &mut dyn Iterator<Item = &crate::schedule::Segment>| -> Vec<IoSegment> {
        it.map(|s| IoSegment { name: s.name.clone(), offset: s.offset, len: s.len }).collect()
    };
    Ok(KernelProgram {
        meta: KernelMeta {
            model: model.name.clone(),
            algorithm: layout.algorithm,
            n_dof: n,
            parents: model.parent.clone(),
            serial_chain: classify_topology(model) == Topology::SerialChain,
            fused_cross: layout.fused_cross,
            compressed: layout.columns.compressed,
        },
        arena_size: layout.total_size,
        inputs: io(&mut layout.inputs()),
        outputs: io(&mut layout.outputs()),
        phases,
    })
}

/// Where the forward sweep takes joint accelerations from.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Qdd {
    Input,
    Zero,
    /// The `qdd` output of an earlier forward-dynamics section.
    Computed,
}

/// Run two sections side by side, phase `k` of one with phase `k` of the
/// other.
fn merge(a: Vec<Phase>, b: Vec<Phase>) -> Vec<Phase> {
    let len = a.len().max(b.len());
    let mut a = a.into_iter();
    let mut b = b.into_iter();
    (0..len)
        .map(|_| match (a.next(), b.next()) {
            (Some(x), Some(y)) => {
                let label = match (x.items.is_empty(), y.items.is_empty()) {
                    (false, true) => x.label,
                    (true, false) => y.label,
                    _ => format!("{} | {}", x.label, y.label),
                };
                Phase { label, items: x.items.into_iter().chain(y.items).collect() }
            }
            (Some(x), None) | (None, Some(x)) => x,
            (None, None) => unreachable!(),
        })
        .collect()
}

fn tag(kind: &str, frame: Option<usize>, column: Option<usize>) -> ItemTag {
    ItemTag { kind: kind.to_string(), frame, column }
}

struct Gen<'a> {
    model: &'a RobotModel,
    l: &'a WorkspaceLayout,
    tree: Tree,
    levels: LevelSchedule,
    /// Structural sparsity, independent of whether the layout is compressed.
    structure: ColumnMap,
    s: Vec<SpatialVec>,
    inertia: Vec<RigidInertia>,
    children_desc: Vec<Vec<usize>>,
    n: usize,
}

impl<'a> Gen<'a> {
    fn new(model: &'a RobotModel, l: &'a WorkspaceLayout) -> Self {
        let tree = model.tree();
        let children_desc = tree.children.iter().map(|c| c.iter().rev().copied().collect()).collect();
        Gen {
            model,
            l,
            levels: build_levels(model),
            structure: analyze_sparsity(model, l.algorithm),
            s: model.joints.iter().map(motion_subspace).collect(),
            inertia: model.inertias.iter().map(RigidInertia::from_link).collect(),
            children_desc,
            n: model.n_frames(),
            tree,
        }
    }

    fn n_levels(&self) -> usize {
        self.levels.levels.len()
    }

    // ---- arena access -------------------------------------------------

    fn load6(base: usize) -> SpatialVec<Sym> {
        SpatialVec(std::array::from_fn(|k| Sym::load(base + k)))
    }

    fn store6(base: usize, v: &SpatialVec<Sym>) {
        for (k, x) in v.0.iter().enumerate() {
            Sym::store(base + k, *x);
        }
    }

    fn load36(base: usize) -> Mat6<Sym> {
        Mat6(std::array::from_fn(|r| std::array::from_fn(|c| Sym::load(base + 6 * r + c))))
    }

    fn store36(base: usize, m: &Mat6<Sym>) {
        for r in 0..6 {
            for c in 0..6 {
                Sym::store(base + 6 * r + c, m.0[r][c]);
            }
        }
    }

    fn frame6(&self, name: &str, i: usize) -> SpatialVec<Sym> {
        Self::load6(self.l.frame(name, i, 0))
    }

    fn put_frame6(&self, name: &str, i: usize, v: &SpatialVec<Sym>) {
        Self::store6(self.l.frame(name, i, 0), v);
    }

    fn col6(&self, name: &str, i: usize, c: usize) -> Option<SpatialVec<Sym>> {
        self.l.column(name, i, c, 0).map(Self::load6)
    }

    fn put_col6(&self, name: &str, i: usize, c: usize, v: &SpatialVec<Sym>) {
        let base = self.l.column(name, i, c, 0).unwrap_or_else(|| panic!("`{name}` has no column ({i}, {c})"));
        Self::store6(base, v);
    }

    fn flat(&self, name: &str, k: usize) -> Sym {
        Sym::load(self.l.flat(name, k))
    }

    fn put_flat(&self, name: &str, k: usize, v: Sym) {
        Sym::store(self.l.flat(name, k), v);
    }

    fn xform(&self, i: usize) -> Transform<Sym> {
        let b = self.l.frame("xform", i, 0);
        Transform {
            rot: Mat3(std::array::from_fn(|r| std::array::from_fn(|c| Sym::load(b + 3 * r + c)))),
            trans: Vec3(std::array::from_fn(|k| Sym::load(b + 9 + k))),
        }
    }

    fn s_of(&self, i: usize) -> SpatialVec<Sym> {
        SpatialVec::lit(self.s[i].0)
    }

    fn inertia_of(&self, i: usize) -> RigidInertia<Sym> {
        self.inertia[i].lift()
    }

    fn fext(&self, i: usize) -> SpatialVec<Sym> {
        SpatialVec(std::array::from_fn(|k| self.flat("fext", 6 * i + k)))
    }

    // ---- sections -----------------------------------------------------

    fn setup(&self) -> Phase {
        let items = (0..self.n)
            .map(|i| {
                trace_item(tag("xform", Some(i), None), || {
                    let x = xform_from_joint(&self.model.joints[i], self.flat("q", i));
                    let b = self.l.frame("xform", i, 0);
                    for r in 0..3 {
                        for c in 0..3 {
                            Sym::store(b + 3 * r + c, x.rot.0[r][c]);
                        }
                    }
                    for k in 0..3 {
                        Sym::store(b + 9 + k, x.trans.0[k]);
                    }
                })
            })
            .collect();
        Phase { label: "joint transforms".into(), items }
    }

    /// One phase per level, roots first. `extras` also stores what the
    /// derivative sweep reads back.
    fn rnea_forward(&self, prefix: &str, qdd: Qdd, extras: bool) -> Vec<Phase> {
        let kind = if prefix.is_empty() { "rnea_fwd" } else { "bias_fwd" };
        let key = |v: &str| format!("{prefix}{v}");
        self.levels
            .levels
            .iter()
            .enumerate()
            .map(|(k, frames)| {
                let items = frames
                    .iter()
                    .map(|&i| {
                        trace_item(tag(kind, Some(i), None), || {
                            let (pv, pa) = match self.model.parent[i] {
                                Some(p) => (Some(self.frame6(&key("v"), p)), self.frame6(&key("a"), p)),
                                None => (None, recur::base_acceleration(self.model.gravity)),
                            };
                            let qdd_i = match qdd {
                                Qdd::Input | Qdd::Computed => self.flat("qdd", i),
                                Qdd::Zero => Sym::zero(),
                            };
                            let m = recur::rnea_forward(
                                &self.xform(i),
                                &self.s_of(i),
                                &self.inertia_of(i),
                                pv.as_ref(),
                                &pa,
                                self.flat("qd", i),
                                qdd_i,
                                &self.fext(i),
                            );
                            self.put_frame6(&key("v"), i, &m.v);
                            self.put_frame6(&key("a"), i, &m.a);
                            self.put_frame6(&key("f"), i, &m.f);
                            if extras {
                                self.put_frame6("xv", i, &m.xv);
                                self.put_frame6("xa", i, &m.xa);
                                self.put_frame6("iv", i, &m.iv);
                                let t = recur::self_terms(&m, &self.s_of(i));
                                self.put_frame6("xv_s", i, &t.xv_s);
                                self.put_frame6("xa_s", i, &t.xa_s);
                                self.put_frame6("v_s", i, &t.v_s);
                                if !self.l.fused_cross {
                                    Self::store36(self.l.frame("crm", i, 0), &crm(&m.v));
                                }
                            }
                        })
                    })
                    .collect();
                Phase { label: format!("{kind} level {k}"), items }
            })
            .collect()
    }

    /// Backward force items of level `k`.
    fn rnea_backward_items(&self, prefix: &str, k: usize, extras: bool) -> Vec<WorkItem> {
        let kind = if prefix.is_empty() { "rnea_bwd" } else { "bias_bwd" };
        let key = |v: &str| format!("{prefix}{v}");
        self.levels.levels[k]
            .iter()
            .map(|&i| {
                trace_item(tag(kind, Some(i), None), || {
                    let children: Vec<_> =
                        self.children_desc[i].iter().map(|&c| (self.xform(c), self.frame6(&key("ftot"), c))).collect();
                    let ftot = recur::accumulate_force(&self.frame6(&key("f"), i), &children);
                    self.put_frame6(&key("ftot"), i, &ftot);
                    if extras && self.model.parent[i].is_some() {
                        let g = recur::child_position_term(&self.xform(i), &self.s_of(i), &ftot);
                        self.put_frame6("g", i, &g);
                    }
                })
            })
            .collect()
    }

    /// One phase per level, leaves first.
    fn rnea_backward(&self, prefix: &str, extras: bool) -> Vec<Phase> {
        let kind = if prefix.is_empty() { "rnea_bwd" } else { "bias_bwd" };
        (0..self.n_levels())
            .rev()
            .map(|k| Phase { label: format!("{kind} level {k}"), items: self.rnea_backward_items(prefix, k, extras) })
            .collect()
    }

    fn tau_out(&self, prefix: &str, dest: &str, kind: &str) -> Phase {
        let items = (0..self.n)
            .map(|i| {
                trace_item(tag(kind, Some(i), None), || {
                    let ftot = self.frame6(&format!("{prefix}ftot"), i);
                    self.put_flat(dest, i, self.s_of(i).dot(&ftot));
                })
            })
            .collect();
        Phase { label: kind.into(), items }
    }

    /// Bias forces `C q̇ + G − Jᵀ F` into the `bias` segment.
    fn bias(&self, prefix: &str) -> Vec<Phase> {
        let mut p = self.rnea_forward(prefix, Qdd::Zero, false);
        p.extend(self.rnea_backward(prefix, false));
        p.push(self.tau_out(prefix, "bias", "bias_out"));
        p
    }

    fn minv_backward_items(&self, k: usize) -> Vec<WorkItem> {
        self.levels.levels[k]
            .iter()
            .map(|&i| {
                trace_item(tag("minv_bwd", Some(i), None), || {
                    let children: Vec<_> = self.children_desc[i]
                        .iter()
                        .map(|&c| (self.xform(c), Self::load36(self.l.frame("ia", c, 0))))
                        .collect();
                    let art = recur::minv_backward(&self.inertia_of(i), &self.s_of(i), &children);
                    self.put_frame6("u", i, &art.u);
                    Sym::store(self.l.frame("dinv", i, 0), art.dinv);
                    Sym::store(self.partial_slot(i, i), recur::minv_partial(art.dinv, &self.s_of(i), None));
                    if self.model.parent[i].is_some() {
                        Self::store36(self.l.frame("ia", i, 0), &art.ia_out);
                    }
                })
            })
            .collect()
    }

    fn partial_slot(&self, i: usize, j: usize) -> usize {
        self.l.column("minv_partial", i, j, 0).expect("partial row entry outside the subtree")
    }

    /// Off-diagonal partial rows of level `k`, one item per subtree column.
    fn minv_column_items(&self, k: usize) -> Vec<WorkItem> {
        let mut items = Vec::new();
        for &i in &self.levels.levels[k] {
            for j in self.tree.subtree(i) {
                if j == i {
                    continue;
                }
                let c = *self.children_desc[i].iter().find(|&&c| self.tree.is_ancestor_or_self(c, j)).unwrap();
                items.push(trace_item(tag("minv_col", Some(i), Some(j)), || {
                    let f_c = if self.structure.temp("f_cols").contains(c, j) { self.col6("f_cols", c, j) } else { None };
                    let f = recur::minv_column_force(
                        &self.xform(c),
                        f_c.as_ref(),
                        &self.frame6("u", c),
                        Sym::load(self.partial_slot(c, j)),
                    );
                    let dinv = Sym::load(self.l.frame("dinv", i, 0));
                    Sym::store(self.partial_slot(i, j), recur::minv_partial(dinv, &self.s_of(i), Some(&f)));
                    self.put_col6("f_cols", i, j, &f);
                }));
            }
        }
        items
    }

    fn minv_forward_items(&self, k: usize, dest: &str) -> Vec<WorkItem> {
        let n = self.n;
        let mut items = Vec::new();
        for &i in &self.levels.levels[k] {
            for j in i..n {
                if !self.tree.same_limb(i, j) {
                    continue;
                }
                items.push(trace_item(tag("minv_fwd", Some(i), Some(j)), || {
                    let pp = self.model.parent[i].map(|p| self.col6("p_cols", p, j).expect("carried column missing"));
                    let partial = self.tree.is_ancestor_or_self(i, j).then(|| Sym::load(self.partial_slot(i, j)));
                    let (m, p) = recur::minv_forward(
                        &self.xform(i),
                        pp.as_ref(),
                        partial,
                        Sym::load(self.l.frame("dinv", i, 0)),
                        &self.frame6("u", i),
                        &self.s_of(i),
                    );
                    self.put_flat(dest, i * n + j, m);
                    if j != i {
                        self.put_flat(dest, j * n + i, m);
                    }
                    if self.structure.temp("p_cols").contains(i, j) {
                        self.put_col6("p_cols", i, j, &p);
                    }
                }));
            }
        }
        items
    }

    /// Inverse mass matrix into the `minv` segment. The inward sweep runs
    /// articulated inertias of level `k` next to partial rows of level `k + 1`.
    fn minv(&self) -> Vec<Phase> {
        let levels = self.n_levels();
        let mut phases = Vec::new();
        for t in 0..=levels {
            let mut items = Vec::new();
            let mut label = Vec::new();
            if t < levels {
                let k = levels - 1 - t;
                items.extend(self.minv_backward_items(k));
                label.push(format!("minv_bwd level {k}"));
            }
            if t > 0 {
                let k = levels - t;
                items.extend(self.minv_column_items(k));
                label.push(format!("minv_col level {k}"));
            }
            phases.push(Phase { label: label.join(" | "), items });
        }
        for k in 0..levels {
            phases.push(Phase { label: format!("minv_fwd level {k}"), items: self.minv_forward_items(k, "minv") });
        }
        phases
    }

    /// `q̈ = M⁻¹ (τ − bias)`, one item per row.
    fn rows(&self) -> Phase {
        let n = self.n;
        let items = (0..n)
            .map(|r| {
                trace_item(tag("qdd_row", Some(r), None), || {
                    let terms: Vec<(Sym, Sym)> = (0..n)
                        .filter(|&k| self.tree.same_limb(r, k))
                        .map(|k| (self.flat("minv", r * n + k), self.flat("tau", k) - self.flat("bias", k)))
                        .collect();
                    self.put_flat("qdd", r, recur::dot_ascending(&terms));
                })
            })
            .collect();
        Phase { label: "qdd_row".into(), items }
    }

    fn grad_forward_items(&self, k: usize) -> Vec<WorkItem> {
        let n = self.n;
        let mut items = Vec::new();
        for &i in &self.levels.levels[k] {
            for c in 0..2 * n {
                if !self.l.has_column("dv", i, c) {
                    continue;
                }
                let j = c % n;
                items.push(trace_item(tag("grad_fwd", Some(i), Some(c)), || {
                    let m = FrameMotion {
                        v: self.frame6("v", i),
                        a: self.frame6("a", i),
                        f: self.frame6("f", i),
                        xv: self.frame6("xv", i),
                        xa: self.frame6("xa", i),
                        iv: self.frame6("iv", i),
                    };
                    let terms = SelfTerms {
                        xv_s: self.frame6("xv_s", i),
                        xa_s: self.frame6("xa_s", i),
                        v_s: self.frame6("v_s", i),
                    };
                    let crm_v = (!self.l.fused_cross).then(|| Self::load36(self.l.frame("crm", i, 0)));
                    let parent = self.model.parent[i].and_then(|p| Some((self.col6("dv", p, c)?, self.col6("da", p, c)?)));
                    let role = ColumnRole { own_q: c < n && i == j, own_qd: c >= n && i == j };
                    let materialize = |dv: &SpatialVec<Sym>| -> Option<Mat6<Sym>> {
                        let base = self.l.column("dv_crm", i, c, 0)?;
                        let mat = crm(dv);
                        Self::store36(base, &mat);
                        Some(mat)
                    };
                    let mut hook: Box<dyn FnMut(&SpatialVec<Sym>) -> Option<Mat6<Sym>>> =
                        if self.l.fused_cross { Box::new(|_| None) } else { Box::new(materialize) };
                    let (dv, da, df) = recur::grad_forward(
                        &self.xform(i),
                        &self.s_of(i),
                        &self.inertia_of(i),
                        &m,
                        &terms,
                        crm_v.as_ref(),
                        self.flat("qd", i),
                        parent.as_ref().map(|(a, b)| (a, b)),
                        role,
                        &mut *hook,
                    );
                    self.put_col6("dv", i, c, &dv);
                    self.put_col6("da", i, c, &da);
                    self.put_col6("df", i, c, &df);
                }));
            }
        }
        items
    }

    fn grad_backward_items(&self, k: usize) -> Vec<WorkItem> {
        let n = self.n;
        let mut items = Vec::new();
        for &i in &self.levels.levels[k] {
            for c in 0..2 * n {
                if !self.l.has_column("dftot", i, c) {
                    continue;
                }
                let j = c % n;
                items.push(trace_item(tag("grad_bwd", Some(i), Some(c)), || {
                    let df = self.col6("df", i, c).unwrap_or_else(SpatialVec::zero);
                    let children: Vec<_> = self.children_desc[i]
                        .iter()
                        .map(|&ch| (self.xform(ch), self.col6("dftot", ch, c), c < n && ch == j, self.frame6("g", ch)))
                        .collect();
                    let dftot = recur::grad_accumulate(&df, &children);
                    self.put_col6("dftot", i, c, &dftot);
                    let dtau = self.s_of(i).dot(&dftot);
                    match self.l.algorithm {
                        Algorithm::GradId => {
                            let dest = if c < n { "dtau_dq" } else { "dtau_dqd" };
                            self.put_flat(dest, i * n + j, dtau);
                        }
                        _ => Sym::store(self.l.column("dtau", i, c, 0).expect("dtau column"), dtau),
                    }
                }));
            }
        }
        items
    }

    /// Value sweep plus derivative columns. Derivative items of level `k`
    /// run one phase behind the value items of the same level; on the way
    /// back they run next to the value items of their level.
    fn gradient(&self, qdd: Qdd) -> Vec<Phase> {
        let levels = self.n_levels();
        let mut fwd = self.rnea_forward("", qdd, true);
        fwd.push(Phase { label: String::new(), items: Vec::new() });
        for t in 1..=levels {
            let items = self.grad_forward_items(t - 1);
            let p = &mut fwd[t];
            p.label = if p.label.is_empty() {
                format!("grad_fwd level {}", t - 1)
            } else {
                format!("{} | grad_fwd level {}", p.label, t - 1)
            };
            p.items.extend(items);
        }
        let bwd = (0..levels).rev().map(|k| {
            let mut items = self.rnea_backward_items("", k, true);
            items.extend(self.grad_backward_items(k));
            Phase { label: format!("rnea_bwd level {k} | grad_bwd level {k}"), items }
        });
        fwd.into_iter().chain(bwd).collect()
    }

    /// `∂q̈ = −M⁻¹ ∂τ`, one item per output entry with a structurally
    /// nonzero term.
    fn products(&self) -> Phase {
        let n = self.n;
        let mut items = Vec::new();
        for r in 0..n {
            for c in 0..2 * n {
                let ks: Vec<usize> =
                    (0..n).filter(|&k| self.tree.same_limb(r, k) && self.l.has_column("dtau", k, c)).collect();
                if ks.is_empty() {
                    continue;
                }
                items.push(trace_item(tag("dqdd", Some(r), Some(c)), || {
                    let terms: Vec<(Sym, Sym)> = ks
                        .iter()
                        .map(|&k| {
                            (self.flat("minv", r * n + k), Sym::load(self.l.column("dtau", k, c, 0).unwrap()))
                        })
                        .collect();
                    let dest = if c < n { "dqdd_dq" } else { "dqdd_dqd" };
                    self.put_flat(dest, r * n + c % n, -recur::dot_ascending(&terms));
                }));
            }
        }
        Phase { label: "dqdd".into(), items }
    }
}
