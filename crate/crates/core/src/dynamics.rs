//! Discrete-time dynamical systems shaped like lenses.
//!
//! A system has a state, a deterministic readout and a stochastic update
//! driven by an input. Wiring is synchronous (Moore style): within one step
//! every component reads the wires computed from the *current* readouts and
//! then all components update at once. Every feedback loop therefore carries
//! a one-step delay, and unit laws hold up to that delay.
//!
//! States, inputs and outputs are dynamically typed [`Value`]s. A system may
//! expose the exact finite distribution of its successor states; closed
//! systems built only from such components can then be propagated exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::Serialize;

use crate::prob::{FiniteChannel, FiniteSpace};
use crate::rng::{self, StdRng};

/// A state, input or output.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Value {
    Unit,
    Atom(usize),
    Real(Vec<f64>),
    Tuple(Vec<Value>),
}

// Equality and hashing are bitwise on floats, so values can key exact
// distributions.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Unit, Value::Unit) => true,
            (Value::Atom(a), Value::Atom(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Value::Tuple(a), Value::Tuple(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, h: &mut H) {
        match self {
            Value::Unit => 0u8.hash(h),
            Value::Atom(a) => {
                1u8.hash(h);
                a.hash(h);
            }
            Value::Real(v) => {
                2u8.hash(h);
                v.len().hash(h);
                for x in v {
                    x.to_bits().hash(h);
                }
            }
            Value::Tuple(v) => {
                3u8.hash(h);
                v.hash(h);
            }
        }
    }
}

impl Value {
    pub fn real(x: f64) -> Value {
        Value::Real(vec![x])
    }

    pub fn pair(a: Value, b: Value) -> Value {
        Value::Tuple(vec![a, b])
    }

    /// Component `i` of a tuple.
    pub fn get(&self, i: usize) -> &Value {
        match self {
            Value::Tuple(v) => &v[i],
            other => panic!("expected a tuple, got {other:?}"),
        }
    }

    pub fn as_atom(&self) -> usize {
        match self {
            Value::Atom(a) => *a,
            other => panic!("expected an atom, got {other:?}"),
        }
    }

    pub fn as_real(&self) -> &[f64] {
        match self {
            Value::Real(v) => v,
            other => panic!("expected a real vector, got {other:?}"),
        }
    }

    /// Numeric coordinates, depth first; atoms count as their index.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.flatten_into(&mut out);
        out
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        match self {
            Value::Unit => {}
            Value::Atom(a) => out.push(*a as f64),
            Value::Real(v) => out.extend_from_slice(v),
            Value::Tuple(v) => v.iter().for_each(|x| x.flatten_into(out)),
        }
    }

    /// Whether the value has no real coordinates.
    pub fn is_discrete(&self) -> bool {
        match self {
            Value::Real(_) => false,
            Value::Tuple(v) => v.iter().all(Value::is_discrete),
            _ => true,
        }
    }

    /// Sup-norm on real coordinates, discrete metric on atoms; values of
    /// different shape are infinitely far apart.
    pub fn distance(&self, other: &Value) -> f64 {
        match (self, other) {
            (Value::Unit, Value::Unit) => 0.0,
            (Value::Atom(a), Value::Atom(b)) => f64::from(u8::from(a != b)),
            (Value::Real(a), Value::Real(b)) if a.len() == b.len() => a.iter().zip(b).fold(0.0, |m, (x, y)| {
                let d = (x - y).abs();
                if d.is_nan() {
                    f64::INFINITY
                } else {
                    m.max(d)
                }
            }),
            (Value::Tuple(a), Value::Tuple(b)) if a.len() == b.len() => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max(x.distance(y))),
            _ => f64::INFINITY,
        }
    }
}

/// A finite distribution over values, in first-seen order.
pub type Dist = Vec<(Value, f64)>;

/// Merges repeated values.
pub fn normalize_dist(items: impl IntoIterator<Item = (Value, f64)>) -> Dist {
    let mut index: HashMap<Value, usize> = HashMap::new();
    let mut out: Dist = Vec::new();
    for (v, p) in items {
        if p <= 0.0 {
            continue;
        }
        match index.get(&v) {
            Some(&i) => out[i].1 += p,
            None => {
                index.insert(v.clone(), out.len());
                out.push((v, p));
            }
        }
    }
    out
}

fn pick(dist: &Dist, rng: &mut StdRng) -> Value {
    let probs: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
    dist[crate::prob::finite::sample_index(&probs, rng)].0.clone()
}

/// A discrete-time system with deterministic readout.
pub trait DynSystem: Send + Sync {
    fn readout(&self, state: &Value) -> Value;

    /// Exact successor distribution, when finite.
    fn successors(&self, state: &Value, input: &Value) -> Option<Dist>;

    fn sample(&self, state: &Value, input: &Value, rng: &mut StdRng) -> Value {
        let succ = self
            .successors(state, input)
            .expect("system has neither a sampler nor finite successors");
        pick(&succ, rng)
    }
}

pub type Sys = Arc<dyn DynSystem>;

type ReadFn = dyn Fn(&Value) -> Value + Send + Sync;
type UpdateFn = dyn Fn(&Value, &Value) -> Dist + Send + Sync;
type SampleFn = dyn Fn(&Value, &Value, &mut StdRng) -> Value + Send + Sync;

/// A system given by closures with a finite update distribution.
pub struct FnSystem {
    readout: Arc<ReadFn>,
    update: Arc<UpdateFn>,
}

impl FnSystem {
    pub fn new(
        readout: impl Fn(&Value) -> Value + Send + Sync + 'static,
        update: impl Fn(&Value, &Value) -> Dist + Send + Sync + 'static,
    ) -> Sys {
        Arc::new(Self {
            readout: Arc::new(readout),
            update: Arc::new(update),
        })
    }

    pub fn deterministic(
        readout: impl Fn(&Value) -> Value + Send + Sync + 'static,
        next: impl Fn(&Value, &Value) -> Value + Send + Sync + 'static,
    ) -> Sys {
        Self::new(readout, move |s, a| vec![(next(s, a), 1.0)])
    }
}

impl DynSystem for FnSystem {
    fn readout(&self, state: &Value) -> Value {
        (self.readout)(state)
    }

    fn successors(&self, state: &Value, input: &Value) -> Option<Dist> {
        Some(normalize_dist((self.update)(state, input)))
    }
}

/// A system that can only be sampled (continuous noise).
pub struct SampledSystem {
    readout: Arc<ReadFn>,
    update: Arc<SampleFn>,
}

impl SampledSystem {
    pub fn new(
        readout: impl Fn(&Value) -> Value + Send + Sync + 'static,
        update: impl Fn(&Value, &Value, &mut StdRng) -> Value + Send + Sync + 'static,
    ) -> Sys {
        Arc::new(Self {
            readout: Arc::new(readout),
            update: Arc::new(update),
        })
    }
}

impl DynSystem for SampledSystem {
    fn readout(&self, state: &Value) -> Value {
        (self.readout)(state)
    }

    fn successors(&self, _: &Value, _: &Value) -> Option<Dist> {
        None
    }

    fn sample(&self, state: &Value, input: &Value, rng: &mut StdRng) -> Value {
        (self.update)(state, input, rng)
    }
}

/// The no-op system: the current input becomes the next state, which is
/// read out unchanged.
pub fn noop_system() -> Sys {
    FnSystem::deterministic(|s| s.clone(), |_, a| a.clone())
}

/// Finite system with update channel `S ⊗ A ⇸ S` and readout `S → B` given
/// as a table of indices. States and inputs are atoms.
pub fn channel_system(update: FiniteChannel, input: FiniteSpace, readout: Vec<usize>) -> Sys {
    let n_in = input.size();
    FnSystem::new(
        move |s| Value::Atom(readout[s.as_atom()]),
        move |s, a| {
            let row = update.row(s.as_atom() * n_in + a.as_atom());
            row.iter().enumerate().map(|(t, &p)| (Value::Atom(t), p)).collect()
        },
    )
}

struct Compose {
    f: Sys,
    g: Sys,
}

impl DynSystem for Compose {
    fn readout(&self, state: &Value) -> Value {
        self.g.readout(state.get(1))
    }

    fn successors(&self, state: &Value, input: &Value) -> Option<Dist> {
        let (sf, sg) = (state.get(0), state.get(1));
        let nf = self.f.successors(sf, input)?;
        let ng = self.g.successors(sg, &self.f.readout(sf))?;
        Some(product_dist(&[nf, ng]))
    }

    fn sample(&self, state: &Value, input: &Value, rng: &mut StdRng) -> Value {
        let (sf, sg) = (state.get(0), state.get(1));
        let nf = self.f.sample(sf, input, rng);
        let ng = self.g.sample(sg, &self.f.readout(sf), rng);
        Value::pair(nf, ng)
    }
}

/// `g ∘ f` with state `(s_f, s_g)`: `g` is driven by `f`'s current readout.
pub fn compose_dyn(f: Sys, g: Sys) -> Sys {
    Arc::new(Compose { f, g })
}

/// Joint distribution of independent components, as tuples.
fn product_dist(parts: &[Dist]) -> Dist {
    let mut acc: Vec<(Vec<Value>, f64)> = vec![(Vec::new(), 1.0)];
    for part in parts {
        acc = acc
            .into_iter()
            .flat_map(|(prefix, p)| {
                part.iter().map(move |(v, q)| {
                    let mut t = prefix.clone();
                    t.push(v.clone());
                    (t, p * q)
                })
            })
            .collect();
    }
    normalize_dist(acc.into_iter().map(|(v, p)| (Value::Tuple(v), p)))
}

/// Exact one-step propagation of a distribution under a fixed input.
pub fn propagate(sys: &dyn DynSystem, dist: &Dist, input: &Value) -> Option<Dist> {
    let mut out = Vec::new();
    for (s, p) in dist {
        for (t, q) in sys.successors(s, input)? {
            out.push((t, p * q));
        }
    }
    Some(normalize_dist(out))
}

/// Pushes a distribution through the readout.
pub fn readout_dist(sys: &dyn DynSystem, dist: &Dist) -> Dist {
    normalize_dist(dist.iter().map(|(s, p)| (sys.readout(s), *p)))
}

/// A dynamical lens `(X, A) ↦ (Y, B)` with residual `M`: the forward system
/// reads out pairs `(m, y)` from inputs `x`, the backward system reads out
/// `a` from inputs `(m, b)`.
#[derive(Clone)]
pub struct DynLens {
    pub forward: Sys,
    pub backward: Sys,
}

struct LensForward {
    f: Sys,
    g: Sys,
}

impl DynSystem for LensForward {
    fn readout(&self, state: &Value) -> Value {
        let (rf, rg) = (self.f.readout(state.get(0)), self.g.readout(state.get(1)));
        Value::pair(Value::pair(rf.get(0).clone(), rg.get(0).clone()), rg.get(1).clone())
    }

    fn successors(&self, state: &Value, input: &Value) -> Option<Dist> {
        let (sf, sg) = (state.get(0), state.get(1));
        let nf = self.f.successors(sf, input)?;
        let ng = self.g.successors(sg, self.f.readout(sf).get(1))?;
        Some(product_dist(&[nf, ng]))
    }

    fn sample(&self, state: &Value, input: &Value, rng: &mut StdRng) -> Value {
        let (sf, sg) = (state.get(0), state.get(1));
        let nf = self.f.sample(sf, input, rng);
        let ng = self.g.sample(sg, self.f.readout(sf).get(1), rng);
        Value::pair(nf, ng)
    }
}

struct LensBackward {
    f: Sys,
    g: Sys,
}

impl LensBackward {
    // input ((m, n), c); state (s_g, s_f)
    fn inputs(&self, state: &Value, input: &Value) -> (Value, Value) {
        let (residuals, c) = (input.get(0), input.get(1));
        let b = self.g.readout(state.get(0));
        (
            Value::pair(residuals.get(1).clone(), c.clone()),
            Value::pair(residuals.get(0).clone(), b),
        )
    }
}

impl DynSystem for LensBackward {
    fn readout(&self, state: &Value) -> Value {
        self.f.readout(state.get(1))
    }

    fn successors(&self, state: &Value, input: &Value) -> Option<Dist> {
        let (ig, if_) = self.inputs(state, input);
        let ng = self.g.successors(state.get(0), &ig)?;
        let nf = self.f.successors(state.get(1), &if_)?;
        Some(product_dist(&[ng, nf]))
    }

    fn sample(&self, state: &Value, input: &Value, rng: &mut StdRng) -> Value {
        let (ig, if_) = self.inputs(state, input);
        let ng = self.g.sample(state.get(0), &ig, rng);
        let nf = self.f.sample(state.get(1), &if_, rng);
        Value::pair(ng, nf)
    }
}

/// `g ∘ f` for dynamical lenses; the residual of the composite is `(m, n)`.
/// Forward state is `(s_f, s_g)`, backward state is `(s_g♯, s_f♯)`.
pub fn compose_dynlens(g: &DynLens, f: &DynLens) -> DynLens {
    DynLens {
        forward: Arc::new(LensForward {
            f: f.forward.clone(),
            g: g.forward.clone(),
        }),
        backward: Arc::new(LensBackward {
            f: f.backward.clone(),
            g: g.backward.clone(),
        }),
    }
}

/// Identity up to a one-step delay: no-op systems with unit residual.
pub fn identity_dynlens() -> DynLens {
    DynLens {
        forward: FnSystem::deterministic(|s| Value::pair(Value::Unit, s.clone()), |_, x| x.clone()),
        backward: FnSystem::deterministic(|s| s.clone(), |_, i| i.get(1).clone()),
    }
}

/// A dynamical context: an autonomous system reading out `(x, m)` and a
/// responder reading `(y, m)` and emitting `b`.
#[derive(Clone)]
pub struct DynContext {
    pub autonomous: Sys,
    pub responder: Sys,
}

struct Closure {
    lens: DynLens,
    ctx: DynContext,
}

/// Wires of a closed system at a joint state.
struct Wires {
    x: Value,
    m_ctx: Value,
    m: Value,
    y: Value,
    b: Value,
    a: Value,
}

impl Closure {
    fn wires(&self, z: &Value) -> Wires {
        let auto = self.ctx.autonomous.readout(z.get(0));
        let fwd = self.lens.forward.readout(z.get(1));
        Wires {
            x: auto.get(0).clone(),
            m_ctx: auto.get(1).clone(),
            m: fwd.get(0).clone(),
            y: fwd.get(1).clone(),
            b: self.ctx.responder.readout(z.get(2)),
            a: self.lens.backward.readout(z.get(3)),
        }
    }
}

impl DynSystem for Closure {
    /// All wires: `(x, m_ctx, m, y, b, a)`; `a` is discarded by the loop and
    /// only logged.
    fn readout(&self, z: &Value) -> Value {
        let w = self.wires(z);
        Value::Tuple(vec![w.x, w.m_ctx, w.m, w.y, w.b, w.a])
    }

    fn successors(&self, z: &Value, _: &Value) -> Option<Dist> {
        let w = self.wires(z);
        let parts = [
            self.ctx.autonomous.successors(z.get(0), &Value::Unit)?,
            self.lens.forward.successors(z.get(1), &w.x)?,
            self.ctx
                .responder
                .successors(z.get(2), &Value::pair(w.y.clone(), w.m_ctx.clone()))?,
            self.lens.backward.successors(z.get(3), &Value::pair(w.m, w.b))?,
        ];
        Some(product_dist(&parts))
    }

    fn sample(&self, z: &Value, _: &Value, rng: &mut StdRng) -> Value {
        let w = self.wires(z);
        Value::Tuple(vec![
            self.ctx.autonomous.sample(z.get(0), &Value::Unit, rng),
            self.lens.forward.sample(z.get(1), &w.x, rng),
            self.ctx.responder.sample(z.get(2), &Value::pair(w.y.clone(), w.m_ctx.clone()), rng),
            self.lens.backward.sample(z.get(3), &Value::pair(w.m, w.b), rng),
        ])
    }
}

type MetricFn = dyn Fn(&Value) -> Value + Send + Sync;

/// An autonomous system whose readout is its observable record.
#[derive(Clone)]
pub struct ClosedSystem {
    pub system: Sys,
    pub state_names: Option<Vec<String>>,
    pub observable_names: Option<Vec<String>>,
    metric: Option<Arc<MetricFn>>,
}

/// Closes a lens with a context. The joint state is
/// `(z_autonomous, z_forward, z_responder, z_backward)`.
pub fn close(lens: &DynLens, ctx: &DynContext) -> ClosedSystem {
    ClosedSystem::new(Arc::new(Closure {
        lens: lens.clone(),
        ctx: ctx.clone(),
    }))
    .with_observable_names(["x", "m_ctx", "m", "y", "b", "a"].map(String::from).to_vec())
}

impl ClosedSystem {
    pub fn new(system: Sys) -> Self {
        Self {
            system,
            state_names: None,
            observable_names: None,
            metric: None,
        }
    }

    pub fn with_state_names(mut self, names: Vec<String>) -> Self {
        self.state_names = Some(names);
        self
    }

    pub fn with_observable_names(mut self, names: Vec<String>) -> Self {
        self.observable_names = Some(names);
        self
    }

    /// Restricts fixed-point detection to the coordinates picked by `f`.
    pub fn with_metric(mut self, f: impl Fn(&Value) -> Value + Send + Sync + 'static) -> Self {
        self.metric = Some(Arc::new(f));
        self
    }

    fn measured(&self, z: &Value) -> Value {
        match &self.metric {
            Some(f) => f(z),
            None => z.clone(),
        }
    }

    pub fn observables(&self, z: &Value) -> Value {
        self.system.readout(z)
    }

    /// One sampled step: the successor and the observables emitted at `z`.
    pub fn step(&self, z: &Value, rng: &mut StdRng) -> (Value, Value) {
        (self.system.sample(z, &Value::Unit, rng), self.observables(z))
    }

    /// Exact one-step distribution, when every component is finite.
    pub fn step_exact(&self, dist: &Dist) -> Option<Dist> {
        propagate(self.system.as_ref(), dist, &Value::Unit)
    }

    /// The total update as a channel on the states reachable from `z0`,
    /// or `None` if some component is not finite or more than `max_states`
    /// states are reachable.
    pub fn exact_kernel(&self, z0: &Value, max_states: usize) -> Option<(Vec<Value>, FiniteChannel)> {
        let mut states = vec![z0.clone()];
        let mut index: HashMap<Value, usize> = HashMap::from([(z0.clone(), 0)]);
        let mut rows: Vec<Dist> = Vec::new();
        let mut i = 0;
        while i < states.len() {
            let succ = self.system.successors(&states[i], &Value::Unit)?;
            for (t, _) in &succ {
                if !index.contains_key(t) {
                    if states.len() >= max_states {
                        return None;
                    }
                    index.insert(t.clone(), states.len());
                    states.push(t.clone());
                }
            }
            rows.push(succ);
            i += 1;
        }
        let n = states.len();
        let table: Vec<Vec<f64>> = rows
            .iter()
            .map(|succ| {
                let mut row = vec![0.0; n];
                for (t, p) in succ {
                    row[index[t]] += p;
                }
                row
            })
            .collect();
        let space = FiniteSpace::range(n);
        let kernel = FiniteChannel::new(space.clone(), space, table).ok()?;
        Some((states, kernel))
    }
}

/// One row per step, starting from the initial state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub step: usize,
    pub state: Value,
    pub observables: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub initial: Value,
    pub records: Vec<Record>,
    pub state_names: Vec<String>,
    pub observable_names: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// CSV with header `step,<state coords>,<observables>`; numbers are
    /// written with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header = vec!["step".to_string()];
        header.extend(self.state_names.iter().cloned());
        header.extend(self.observable_names.iter().cloned());
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.step);
            for v in r.state.flatten().into_iter().chain(r.observables.flatten()) {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Names for the flattened coordinates of `v`. `names` may name every
/// coordinate or only the top-level components.
fn coord_names(v: &Value, names: Option<&Vec<String>>, prefix: &str) -> Vec<String> {
    if let Some(n) = names {
        if n.len() == v.flatten().len() {
            return n.clone();
        }
    }
    let top: Vec<Value> = match v {
        Value::Tuple(items) => items.clone(),
        other => vec![other.clone()],
    };
    let mut out = Vec::new();
    for (i, item) in top.iter().enumerate() {
        let base = names.and_then(|n| n.get(i).cloned()).unwrap_or_else(|| format!("{prefix}{i}"));
        let k = item.flatten().len();
        if k == 1 {
            out.push(base);
        } else {
            out.extend((0..k).map(|j| format!("{base}_{j}")));
        }
    }
    out
}

/// Iterates [`ClosedSystem::step`] `steps` times from `z0`.
pub fn run(sys: &ClosedSystem, z0: &Value, steps: usize, seed: u64) -> Trajectory {
    let mut rng = rng::seeded(seed);
    let mut records = Vec::with_capacity(steps + 1);
    let mut z = z0.clone();
    for t in 0..=steps {
        if t == steps {
            let observables = sys.observables(&z);
            records.push(Record {
                step: t,
                state: z,
                observables,
            });
            break;
        }
        let (next, observables) = sys.step(&z, &mut rng);
        records.push(Record {
            step: t,
            state: std::mem::replace(&mut z, next),
            observables,
        });
    }
    let first_obs = &records[0].observables;
    Trajectory {
        seed,
        initial: z0.clone(),
        state_names: coord_names(z0, sys.state_names.as_ref(), "z"),
        observable_names: coord_names(first_obs, sys.observable_names.as_ref(), "o"),
        records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub state: Value,
    /// Step at which the state was reached.
    pub step: usize,
}

/// Searches a sampled run for a fixed point.
///
/// A discrete state whose exact one-step distribution puts at least
/// `1 − eps_fix` on itself is a fixed point. Otherwise the run must move by
/// less than `eps_fix` (in the declared metric) for `window` consecutive
/// steps; the state at the end of that window is returned.
pub fn find_fixed_point(sys: &ClosedSystem, z0: &Value, max_steps: usize, eps_fix: f64, window: usize, seed: u64) -> Option<FixedPoint> {
    let mut rng = rng::seeded(seed);
    let mut z = z0.clone();
    let mut quiet = 0;
    for t in 0..=max_steps {
        if z.is_discrete() {
            if let Some(succ) = sys.system.successors(&z, &Value::Unit) {
                let stay: f64 = succ.iter().filter(|(v, _)| *v == z).map(|(_, p)| p).sum();
                if 1.0 - stay <= eps_fix {
                    return Some(FixedPoint { state: z, step: t });
                }
            }
        }
        if t == max_steps {
            break;
        }
        let next = sys.system.sample(&z, &Value::Unit, &mut rng);
        if sys.measured(&next).distance(&sys.measured(&z)) < eps_fix {
            quiet += 1;
        } else {
            quiet = 0;
        }
        z = next;
        if quiet >= window.max(1) {
            return Some(FixedPoint { state: z, step: t + 1 });
        }
    }
    None
}
