#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use keyscan_core::analytics::{Fraction, KeyConfig};
use keyscan_core::benchstats::{BenchSample, KeystoreKind, Operation};
use keyscan_core::callgraph::CallGraph;
use keyscan_core::sigdb::{find_call_sites, ApiCallSite, SignatureDb};
use keyscan_core::slicer::{resolve_args, UnresolvedReason, Value};
use keyscan_core::smali::{package_of, parse_smali_file, MethodSignature};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn app_fixture(name: &str) -> PathBuf {
    fixtures().join("apps").join(name)
}

pub fn corpus_dir() -> PathBuf {
    fixtures().join("corpus")
}

/// Every committed smali app: the standalone apps and the corpus members.
pub fn all_app_dirs() -> Vec<PathBuf> {
    let mut out = Vec::new();
    for group in ["apps", "corpus"] {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(fixtures().join(group))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        out.extend(dirs);
    }
    out
}

// ---------------------------------------------------------------------------
// Instruction line classifier, independent of the parser.

/// Counts opcode and label lines inside `.method` blocks, skipping directive
/// blocks whose bodies are data.
pub fn count_instruction_lines(text: &str) -> usize {
    let mut in_method = false;
    let mut skip_until: Option<&str> = None;
    let mut n = 0;
    for raw in text.lines() {
        let line = raw.trim();
        if let Some(end) = skip_until {
            if line == end {
                skip_until = None;
            }
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let word = line.split_whitespace().next().unwrap();
        match word {
            ".method" => in_method = true,
            ".end" if line == ".end method" => in_method = false,
            ".annotation" => skip_until = Some(".end annotation"),
            ".array-data" => skip_until = Some(".end array-data"),
            ".packed-switch" => skip_until = Some(".end packed-switch"),
            ".sparse-switch" => skip_until = Some(".end sparse-switch"),
            w if w.starts_with('.') => {}
            _ if in_method => n += 1,
            _ => {}
        }
    }
    n
}

// ---------------------------------------------------------------------------
// Random methods and a reference interpreter for the slicer oracle.

pub const LOCALS: u32 = 6;

#[derive(Debug, Clone)]
pub enum Op {
    Const(u32, i64),
    Str(u32, String),
    Move(u32, u32),
    MoveParam(u32, u32),
    Sget(u32),
    NewInstance(u32),
    Helper(u32),
    Add(u32, u32, u32),
    Filled(u32, Vec<u32>),
}

#[derive(Debug, Clone)]
pub enum Segment {
    Straight(Vec<Op>),
    Diamond(Vec<Op>, Vec<Op>),
    Loop(Vec<Op>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    StrongBox,
    KeySize,
    BlockModes,
    Init,
    KeyGenerator,
}

impl Target {
    pub const ALL: [Target; 5] = [Target::StrongBox, Target::KeySize, Target::BlockModes, Target::Init, Target::KeyGenerator];

    fn api_id(self) -> &'static str {
        match self {
            Target::StrongBox => "kgps.setIsStrongBoxBacked",
            Target::KeySize => "kgps.setKeySize",
            Target::BlockModes => "kgps.setBlockModes",
            Target::Init => "kgps.init",
            Target::KeyGenerator => "java.KeyGenerator.getInstance",
        }
    }

    /// Kind of each evaluated argument, in index order.
    fn domains(self) -> Vec<Dom> {
        match self {
            Target::StrongBox => vec![Dom::Bool],
            Target::KeySize => vec![Dom::Int],
            Target::BlockModes => vec![Dom::StrArray],
            Target::Init => vec![Dom::Str, Dom::Int],
            Target::KeyGenerator => vec![Dom::Str, Dom::Str],
        }
    }

    fn invoke(self, recv: u32, args: &[u32]) -> String {
        const B: &str = "Landroid/security/keystore/KeyGenParameterSpec$Builder;";
        let regs = |rs: &[u32]| rs.iter().map(|r| format!("v{r}")).collect::<Vec<_>>().join(", ");
        match self {
            Target::StrongBox => format!("invoke-virtual {{{}}}, {B}->setIsStrongBoxBacked(Z){B}", regs(&[recv, args[0]])),
            Target::KeySize => format!("invoke-virtual {{{}}}, {B}->setKeySize(I){B}", regs(&[recv, args[0]])),
            Target::BlockModes => {
                format!("invoke-virtual {{{}}}, {B}->setBlockModes([Ljava/lang/String;){B}", regs(&[recv, args[0]]))
            }
            Target::Init => format!("invoke-direct {{{}}}, {B}-><init>(Ljava/lang/String;I)V", regs(&[recv, args[0], args[1]])),
            Target::KeyGenerator => format!(
                "invoke-static {{{}}}, Ljavax/crypto/KeyGenerator;->getInstance(Ljava/lang/String;Ljava/lang/String;)Ljavax/crypto/KeyGenerator;",
                regs(args)
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dom {
    Bool,
    Int,
    Str,
    StrArray,
}

#[derive(Debug, Clone)]
pub struct GenMethod {
    pub segments: Vec<Segment>,
    pub target: Target,
    pub recv: u32,
    pub args: Vec<u32>,
}

fn gen_op<R: Rng>(rng: &mut R) -> Op {
    let r = |rng: &mut R| rng.random_range(0..LOCALS);
    match rng.random_range(0..20) {
        0..=5 => Op::Const(r(rng), *[0i64, 1, 1, 0, -1, 2, 3, 7, 12, 256, -8, 0x7fff].choose(rng).unwrap()),
        6..=8 => Op::Str(r(rng), ["GCM", "CBC", "AES", "AndroidKeyStore", "alias"].choose(rng).unwrap().to_string()),
        9..=12 => Op::Move(r(rng), r(rng)),
        13 => Op::MoveParam(r(rng), rng.random_range(0..2)),
        14 => Op::Sget(r(rng)),
        15 => Op::NewInstance(r(rng)),
        16 => Op::Helper(r(rng)),
        17 => Op::Add(r(rng), r(rng), r(rng)),
        _ => {
            let n = rng.random_range(1..=3);
            Op::Filled(r(rng), (0..n).map(|_| r(rng)).collect())
        }
    }
}

fn gen_ops<R: Rng>(rng: &mut R, max: usize) -> Vec<Op> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| gen_op(rng)).collect()
}

fn gen_target<R: Rng>(rng: &mut R, segments: Vec<Segment>) -> GenMethod {
    let target = *Target::ALL.choose(rng).unwrap();
    let args = (0..target.domains().len()).map(|_| rng.random_range(0..LOCALS)).collect();
    GenMethod { segments, target, recv: rng.random_range(0..LOCALS), args }
}

pub fn gen_straight_line<R: Rng>(rng: &mut R) -> GenMethod {
    let ops = gen_ops(rng, 14);
    gen_target(rng, vec![Segment::Straight(ops)])
}

pub fn gen_branching<R: Rng>(rng: &mut R) -> GenMethod {
    let mut segments = vec![Segment::Straight(gen_ops(rng, 6))];
    let control = rng.random_range(1..=3);
    for _ in 0..control {
        segments.push(if rng.random_bool(0.7) {
            Segment::Diamond(gen_ops(rng, 4), gen_ops(rng, 4))
        } else {
            Segment::Loop(gen_ops(rng, 3))
        });
        segments.push(Segment::Straight(gen_ops(rng, 3)));
    }
    gen_target(rng, segments)
}

/// Smali text of the method plus the 1-based line of every emitted op, in
/// emission order, and the line of the final invoke.
pub fn render_method(m: &GenMethod) -> (String, usize) {
    let mut lines: Vec<String> = vec![
        ".class public Lgen/T;".into(),
        ".super Ljava/lang/Object;".into(),
        String::new(),
        ".method public static m(II)V".into(),
        format!("    .registers {}", LOCALS + 2),
    ];
    let mut label = 0;
    let emit = |ops: &[Op], lines: &mut Vec<String>| {
        for op in ops {
            match op {
                Op::Const(r, v) => lines.push(if (-8..=7).contains(v) {
                    format!("    const/4 v{r}, {}", lit(*v))
                } else {
                    format!("    const/16 v{r}, {}", lit(*v))
                }),
                Op::Str(r, s) => lines.push(format!("    const-string v{r}, \"{s}\"")),
                Op::Move(d, s) => lines.push(format!("    move-object v{d}, v{s}")),
                Op::MoveParam(d, p) => lines.push(format!("    move v{d}, p{p}")),
                Op::Sget(r) => lines.push(format!("    sget v{r}, Lgen/T;->f:I")),
                Op::NewInstance(r) => lines.push(format!("    new-instance v{r}, Ljava/lang/Object;")),
                Op::Helper(r) => {
                    lines.push("    invoke-static {}, Lgen/T;->h()I".into());
                    lines.push(format!("    move-result v{r}"));
                }
                Op::Add(d, a, b) => lines.push(format!("    add-int v{d}, v{a}, v{b}")),
                Op::Filled(d, els) => {
                    let regs = els.iter().map(|r| format!("v{r}")).collect::<Vec<_>>().join(", ");
                    lines.push(format!("    filled-new-array {{{regs}}}, [Ljava/lang/String;"));
                    lines.push(format!("    move-result-object v{d}"));
                }
            }
        }
    };
    for seg in &m.segments {
        match seg {
            Segment::Straight(ops) => emit(ops, &mut lines),
            Segment::Diamond(a, b) => {
                let (l_else, l_join) = (label, label + 1);
                label += 2;
                lines.push(format!("    if-eqz p0, :L{l_else}"));
                emit(a, &mut lines);
                lines.push(format!("    goto :L{l_join}"));
                lines.push(format!("    :L{l_else}"));
                emit(b, &mut lines);
                lines.push(format!("    :L{l_join}"));
            }
            Segment::Loop(body) => {
                let l = label;
                label += 1;
                lines.push(format!("    :L{l}"));
                emit(body, &mut lines);
                lines.push(format!("    if-nez p1, :L{l}"));
            }
        }
    }
    lines.push(format!("    {}", m.target.invoke(m.recv, &m.args)));
    let invoke_line = lines.len();
    lines.push("    return-void".into());
    lines.push(".end method".into());
    (lines.join("\n") + "\n", invoke_line)
}

fn lit(v: i64) -> String {
    if v < 0 {
        format!("-{:#x}", -v)
    } else {
        format!("{v:#x}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Abs {
    Undef,
    Int(i64, BTreeSet<u32>),
    Str(String, BTreeSet<u32>),
    Arr(Vec<String>, BTreeSet<u32>),
    Bad(UnresolvedReason),
}

/// One concrete execution path as a flat op list, each op tagged with the
/// source line of its defining instruction.
fn path_ops(m: &GenMethod, choice: &[usize]) -> Vec<(Op, u32)> {
    let (text, _) = render_method(m);
    let body: Vec<&str> = text.lines().collect();
    let mut cursor = 5usize; // index of the first body line (0-based)
    fn take(ops: &[Op], cursor: &mut usize) -> Vec<(Op, u32)> {
        let mut out = Vec::new();
        for op in ops {
            let span = match op {
                Op::Helper(_) | Op::Filled(..) => 2,
                _ => 1,
            };
            // defining line is the last line of the op's span
            out.push((op.clone(), (*cursor + span) as u32));
            *cursor += span;
        }
        out
    }
    let mut per_segment: Vec<Vec<Vec<(Op, u32)>>> = Vec::new();
    for seg in &m.segments {
        match seg {
            Segment::Straight(ops) => per_segment.push(vec![take(ops, &mut cursor)]),
            Segment::Diamond(a, b) => {
                cursor += 1;
                let then_ops = take(a, &mut cursor);
                cursor += 2;
                let else_ops = take(b, &mut cursor);
                cursor += 1;
                per_segment.push(vec![then_ops, else_ops]);
            }
            Segment::Loop(bodyops) => {
                cursor += 1;
                let ops = take(bodyops, &mut cursor);
                cursor += 1;
                per_segment.push(vec![ops]);
            }
        }
    }
    debug_assert!(body.len() > cursor);
    let mut flat = Vec::new();
    let mut ci = 0;
    for (seg, alts) in m.segments.iter().zip(&per_segment) {
        match seg {
            Segment::Straight(_) => flat.extend(alts[0].iter().cloned()),
            Segment::Diamond(..) => {
                flat.extend(alts[choice[ci]].iter().cloned());
                ci += 1;
            }
            Segment::Loop(_) => {
                for _ in 0..choice[ci] {
                    flat.extend(alts[0].iter().cloned());
                }
                ci += 1;
            }
        }
    }
    flat
}

fn execute(ops: &[(Op, u32)]) -> Vec<Abs> {
    let mut regs = vec![Abs::Undef; LOCALS as usize];
    for (op, line) in ops {
        let prov = BTreeSet::from([*line]);
        match op {
            Op::Const(r, v) => regs[*r as usize] = Abs::Int(*v, prov),
            Op::Str(r, s) => regs[*r as usize] = Abs::Str(s.clone(), prov),
            Op::Move(d, s) => regs[*d as usize] = regs[*s as usize].clone(),
            Op::MoveParam(d, _) => regs[*d as usize] = Abs::Bad(UnresolvedReason::CrossMethod),
            Op::Sget(r) | Op::NewInstance(r) => regs[*r as usize] = Abs::Bad(UnresolvedReason::NonConstantDef),
            Op::Helper(r) => regs[*r as usize] = Abs::Bad(UnresolvedReason::CrossMethod),
            Op::Add(d, ..) => regs[*d as usize] = Abs::Bad(UnresolvedReason::UnsupportedOp),
            Op::Filled(d, els) => {
                let mut out = Vec::new();
                let mut p = BTreeSet::new();
                let mut bad = None;
                for e in els {
                    match &regs[*e as usize] {
                        Abs::Str(s, sp) => {
                            out.push(s.clone());
                            p.extend(sp.iter().copied());
                        }
                        Abs::Undef => {
                            bad = Some(UnresolvedReason::RegisterUndefined);
                            break;
                        }
                        Abs::Bad(r) => {
                            bad = Some(*r);
                            break;
                        }
                        _ => {
                            bad = Some(UnresolvedReason::UnsupportedOp);
                            break;
                        }
                    }
                }
                regs[*d as usize] = match bad {
                    Some(r) => Abs::Bad(r),
                    None => Abs::Arr(out, p),
                };
            }
        }
    }
    regs
}

fn to_value(a: &Abs, dom: Dom) -> (Value, Vec<u32>) {
    let unsupported = (Value::Unresolved(UnresolvedReason::UnsupportedOp), Vec::new());
    match (a, dom) {
        (Abs::Undef, _) => (Value::Unresolved(UnresolvedReason::RegisterUndefined), Vec::new()),
        (Abs::Bad(r), _) => (Value::Unresolved(*r), Vec::new()),
        (Abs::Int(0, p), Dom::Bool) => (Value::Bool(false), p.iter().copied().collect()),
        (Abs::Int(1, p), Dom::Bool) => (Value::Bool(true), p.iter().copied().collect()),
        (Abs::Int(v, p), Dom::Int) => (Value::Int(*v), p.iter().copied().collect()),
        (Abs::Str(s, p), Dom::Str) => (Value::Str(s.clone()), p.iter().copied().collect()),
        (Abs::Arr(v, p), Dom::StrArray) => (Value::StrArray(v.clone()), p.iter().copied().collect()),
        _ => unsupported,
    }
}

/// Expected (value, provenance) per evaluated argument on one path.
fn interpret_path(m: &GenMethod, choice: &[usize]) -> Vec<(Value, Vec<u32>)> {
    let regs = execute(&path_ops(m, choice));
    m.target.domains().iter().zip(&m.args).map(|(d, r)| to_value(&regs[*r as usize], *d)).collect()
}

pub fn interpret_straight_line(m: &GenMethod) -> Vec<(Value, Vec<u32>)> {
    interpret_path(m, &[])
}

const LOOP_UNROLL: usize = 14;

/// Distinct values one argument takes over every path, with the union of
/// their provenance lines.
#[derive(Debug, Default)]
pub struct PathOutcome {
    pub values: Vec<Value>,
    pub provenance: BTreeSet<u32>,
}

pub fn has_loop(m: &GenMethod) -> bool {
    m.segments.iter().any(|s| matches!(s, Segment::Loop(_)))
}

/// Every combination of branch choices; loops run 1 to 14 times.
pub fn interpret_all_paths(m: &GenMethod) -> Vec<PathOutcome> {
    let arity: Vec<usize> = m
        .segments
        .iter()
        .filter_map(|s| match s {
            Segment::Straight(_) => None,
            Segment::Diamond(..) => Some(2),
            Segment::Loop(_) => Some(LOOP_UNROLL),
        })
        .collect();
    let loops: Vec<bool> = m
        .segments
        .iter()
        .filter_map(|s| match s {
            Segment::Straight(_) => None,
            Segment::Diamond(..) => Some(false),
            Segment::Loop(_) => Some(true),
        })
        .collect();
    let mut outcomes: Vec<PathOutcome> = (0..m.target.domains().len()).map(|_| PathOutcome::default()).collect();
    let mut idx = vec![0usize; arity.len()];
    loop {
        let choice: Vec<usize> = idx.iter().zip(&loops).map(|(i, l)| if *l { i + 1 } else { *i }).collect();
        for (k, (v, prov)) in interpret_path(m, &choice).into_iter().enumerate() {
            if !outcomes[k].values.contains(&v) {
                outcomes[k].values.push(v);
            }
            outcomes[k].provenance.extend(prov);
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return outcomes;
            }
            idx[pos] += 1;
            if idx[pos] < arity[pos] {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Runs the slicer on the generated method: (value, provenance) per evaluated argument.
pub fn slice_generated(m: &GenMethod, db: &SignatureDb) -> Vec<(Value, Vec<u32>)> {
    let (text, invoke_line) = render_method(m);
    let class = parse_smali_file(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    let app = keyscan_core::smali::AppIR {
        app_id: "gen".into(),
        classes: BTreeMap::from([(class.name.clone(), class)]),
        file_count: 1,
        warnings: Vec::new(),
    };
    let sites: Vec<ApiCallSite> = find_call_sites(&app, db);
    let site = sites
        .iter()
        .find(|s| s.source_line as usize == invoke_line)
        .unwrap_or_else(|| panic!("no site at line {invoke_line}\n{text}"));
    assert_eq!(site.callee, m.target.api_id());
    let method = app.find_method(&site.caller).unwrap();
    let entry = db.get(&site.callee).unwrap();
    let out = resolve_args(method, site, entry);
    out.resolved_args.iter().map(|a| (a.value.value.clone(), a.value.provenance.clone())).collect()
}

// ---------------------------------------------------------------------------
// Reachability oracle over committed graphs.

#[derive(Debug, Deserialize)]
pub struct GraphFixture {
    pub first_party: Vec<String>,
    #[serde(default)]
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

pub fn sig(dotted: &str) -> MethodSignature {
    let (class, name) = dotted.rsplit_once('.').unwrap();
    MethodSignature::new(class, name, &[], "V")
}

pub fn load_graphs() -> Vec<(String, GraphFixture)> {
    let dir = fixtures().join("graphs");
    let mut out: Vec<(String, GraphFixture)> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let g: GraphFixture = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
            (p.file_stem().unwrap().to_string_lossy().into_owned(), g)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

impl GraphFixture {
    pub fn graph(&self) -> CallGraph {
        let edges: Vec<(MethodSignature, MethodSignature)> =
            self.edges.iter().map(|(a, b)| (sig(a), sig(b))).collect();
        CallGraph::from_edges(self.nodes.iter().map(|n| sig(n)), &edges)
    }

    pub fn is_first_party(&self, pkg: &str) -> bool {
        self.first_party.iter().any(|p| p == pkg)
    }
}

/// Shortest simple backward path (as node count) from `start` to any node
/// whose package satisfies `first`, by enumerating every simple path.
pub fn brute_force_shortest(graph: &CallGraph, start: &MethodSignature, first: &dyn Fn(&str) -> bool) -> Option<usize> {
    fn walk(
        graph: &CallGraph,
        at: &MethodSignature,
        on_path: &mut Vec<MethodSignature>,
        first: &dyn Fn(&str) -> bool,
        best: &mut Option<usize>,
    ) {
        on_path.push(at.clone());
        if first(package_of(&at.class_name)) {
            let len = on_path.len();
            *best = Some(best.map_or(len, |b| b.min(len)));
        } else {
            for caller in graph.callers(at) {
                if !on_path.contains(caller) {
                    walk(graph, caller, on_path, first, best);
                }
            }
        }
        on_path.pop();
    }
    let mut best = None;
    walk(graph, start, &mut Vec::new(), first, &mut best);
    best
}

/// Nodes with a backward path from `start`, including `start`.
pub fn backward_closure(graph: &CallGraph, start: &MethodSignature) -> BTreeSet<MethodSignature> {
    let mut seen = BTreeSet::from([start.clone()]);
    let mut q = VecDeque::from([start.clone()]);
    while let Some(n) = q.pop_front() {
        for c in graph.callers(&n) {
            if seen.insert(c.clone()) {
                q.push_back(c.clone());
            }
        }
    }
    seen
}

/// A valid evidence path starts in first-party code, ends at `start`,
/// follows call edges and repeats no node.
pub fn evidence_path_valid(
    graph: &CallGraph,
    path: &[MethodSignature],
    start: &MethodSignature,
    first: &dyn Fn(&str) -> bool,
) -> bool {
    let Some(head) = path.first() else { return false };
    let distinct: BTreeSet<_> = path.iter().collect();
    first(package_of(&head.class_name))
        && path.last() == Some(start)
        && distinct.len() == path.len()
        && path.windows(2).all(|w| graph.callees(&w[0]).contains(&&w[1]))
}

// ---------------------------------------------------------------------------
// Benchmark statistics.

/// Two-pass sample mean and standard deviation.
pub fn two_pass(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, Some((ss / (n - 1.0)).sqrt()))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// `n` draws rescaled so their sample mean and standard deviation are exactly
/// `mean` and `std` (up to rounding).
pub fn samples_with_moments<R: Rng>(rng: &mut R, n: usize, mean: f64, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let raw: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let (m, s) = two_pass(&raw);
    raw.iter().map(|x| mean + std * (x - m) / s.unwrap()).collect()
}

pub fn bench_group(
    device: &str,
    kind: KeystoreKind,
    op: Operation,
    alg: &str,
    payload: u64,
    values: &[f64],
) -> Vec<BenchSample> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| BenchSample {
            device: device.into(),
            device_year: None,
            keystore_kind: kind,
            operation: op,
            algorithm: alg.into(),
            payload_bytes: payload,
            iteration: i as u64,
            elapsed_seconds: v,
        })
        .collect()
}

pub const MIB: u64 = 1 << 20;

// ---------------------------------------------------------------------------
// Hand-computed metrics of the six-app corpus with its label file.

pub fn expected_corpus_fractions() -> BTreeMap<&'static str, (u64, u64)> {
    BTreeMap::from([
        ("keystore_reference", (5, 6)),
        ("keystore_reference_sensitive", (3, 4)),
        ("strongbox_reference", (3, 3)),
        ("strongbox_args_resolved", (3, 3)),
        ("strongbox_true", (2, 3)),
        ("strongbox_false", (1, 3)),
        ("apps_strongbox_requested", (2, 6)),
        ("init_party.third", (2, 5)),
        ("init_party.first", (3, 5)),
        ("init_party.excluded_obfuscated", (1, 6)),
        ("purposes.encrypt_decrypt_only", (2, 5)),
        ("purposes.sign_verify_only", (3, 5)),
        ("purposes.other", (0, 5)),
        ("auth.auth_required", (3, 5)),
        ("auth.validity.per-use", (2, 3)),
        ("auth.validity.le-3s", (0, 3)),
        ("auth.validity.5s", (1, 3)),
        ("auth.validity.1h", (0, 3)),
        ("auth.validity.other", (0, 3)),
        ("randomized_encryption.disabled_of_resolved", (2, 2)),
        ("randomized_encryption.disabled_estimate", (6, 10)),
        ("attestation", (2, 5)),
        ("cipher.AES", (2, 5)),
        ("cipher.EC", (2, 5)),
        ("cipher.HMAC-SHA256", (1, 5)),
        ("genre.Finance.keystore", (2, 3)),
        ("genre.Finance.strongbox", (1, 3)),
        ("genre.Tools.keystore", (3, 3)),
        ("genre.Tools.strongbox", (2, 3)),
    ])
}

/// Largest gap, in percentage points, between each emitted fraction and its
/// expected ratio; errors name missing or unexpected metrics.
pub fn compare_fractions(actual: &[(String, Fraction)]) -> Result<f64, String> {
    let expected = expected_corpus_fractions();
    let names: BTreeSet<&str> = actual.iter().map(|(n, _)| n.as_str()).collect();
    let want: BTreeSet<&str> = expected.keys().copied().collect();
    if names != want {
        return Err(format!("metric names differ: missing {:?}, extra {:?}", &want - &names, &names - &want));
    }
    let mut worst: f64 = 0.0;
    for (name, f) in actual {
        let (num, den) = expected[name.as_str()];
        let want_pct = num as f64 / den as f64 * 100.0;
        let got_pct = f.value().ok_or(format!("{name} has a zero denominator"))? * 100.0;
        worst = worst.max((want_pct - got_pct).abs());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Key configurations for the lint suite.

pub fn clean_config() -> KeyConfig {
    let mut c = KeyConfig::empty("app", &MethodSignature::new("app.Keys", "make", &[], "V"), "k0".into());
    c.cipher = Some("AES".into());
    c.block_modes = Some(vec!["GCM".into()]);
    c.strongbox = Some(true);
    c
}

pub fn random_config<R: Rng>(rng: &mut R) -> KeyConfig {
    use keyscan_core::slicer::Purpose;
    let mut c = KeyConfig::empty("app", &MethodSignature::new("app.Keys", "make", &[], "V"), format!("k{}", rng.random::<u8>()));
    let tri = |rng: &mut R| match rng.random_range(0..3) {
        0 => None,
        1 => Some(true),
        _ => Some(false),
    };
    c.randomized_encryption = tri(rng);
    c.strongbox = tri(rng);
    c.user_confirmation = tri(rng);
    c.cipher = [None, Some("AES"), Some("EC"), Some("RSA"), Some("3DES"), Some("HMAC-SHA1"), Some("HMAC-SHA256")]
        .choose(rng)
        .unwrap()
        .map(String::from);
    c.auth_validity_seconds = [None, Some(-1), Some(0), Some(1), Some(2), Some(3), Some(4), Some(5), Some(3600)]
        .choose(rng)
        .copied()
        .unwrap();
    if rng.random_bool(0.8) {
        let all = [Purpose::Encrypt, Purpose::Decrypt, Purpose::Sign, Purpose::Verify];
        c.purposes = Some(all.iter().filter(|_| rng.random_bool(0.5)).copied().collect());
    }
    c
}

pub fn copy_dir(from: &Path, to: &Path) {
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry.unwrap();
        let target = to.join(entry.path().strip_prefix(from).unwrap());
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).unwrap();
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

/// Every file under `dir` except the status log, keyed by relative path.
pub fn snapshot_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file() && e.file_name() != "status.jsonl")
        .map(|e| {
            let rel = e.path().strip_prefix(dir).unwrap().display().to_string();
            (rel, std::fs::read(e.path()).unwrap())
        })
        .collect()
}
