//! Controlled evolution: the car with trailers (`k = 1`), the arm, its
//! sub-arms and the Cartesian `Δ`-flow, integrated by fixed-step RK4.
//!
//! Arm states are flat vectors. In embedded form the layout is
//! `[x_0 | z_1 | ... | z_n | θ_n]`: the first `n` directions are unit vectors
//! renormalized after every step, the last sphere carries its raw chart
//! angles, driven directly by the tangential controls. In chart form every
//! sphere carries its angles, `[x_0 | θ_0 | ... | θ_n]`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arm_model::{gamma, AngularConfig, ArmDims, CartesianConfig, Direction};
use crate::error::{Error, Result};
use crate::hyperspherical::{
    angles_unchecked, partial_norms, phi_coords, phi_partials, Angles, UnitVector, CHART_GUARD,
};
use crate::vector_fields::cartesian_delta;

/// Largest constraint drift accepted from a single step, before projection.
pub const STEP_DRIFT_LIMIT: f64 = 1e-6;
/// `|A_i|` below this counts as a singular configuration.
pub const SINGULAR_EPS: f64 = 1e-9;

/// Control values at one instant: `v_n` and the `k` tangential rates `v_{θ_n^j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlValue {
    pub vn: f64,
    pub w: Vec<f64>,
}

impl ControlValue {
    pub fn new(vn: f64, w: Vec<f64>) -> Self {
        Self { vn, w }
    }

    fn lerp(&self, other: &ControlValue, s: f64) -> ControlValue {
        ControlValue {
            vn: self.vn + s * (other.vn - self.vn),
            w: self
                .w
                .iter()
                .zip(&other.w)
                .map(|(a, b)| a + s * (b - a))
                .collect(),
        }
    }
}

/// A control law `t ↦ (v_n(t), w(t))`, evaluated pointwise at RK4 stage times.
#[derive(Clone)]
pub struct ControlSignal {
    k: usize,
    label: String,
    f: Arc<dyn Fn(f64) -> ControlValue + Send + Sync>,
}

impl fmt::Debug for ControlSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSignal")
            .field("k", &self.k)
            .field("label", &self.label)
            .finish()
    }
}

impl ControlSignal {
    pub fn new(
        k: usize,
        label: impl Into<String>,
        f: impl Fn(f64) -> ControlValue + Send + Sync + 'static,
    ) -> Self {
        Self {
            k,
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn zero(k: usize) -> Self {
        Self::constant(0.0, vec![0.0; k])
    }

    pub fn constant(vn: f64, w: Vec<f64>) -> Self {
        let k = w.len();
        let label = format!("constant vn={vn} w={w:?}");
        let value = ControlValue::new(vn, w);
        Self::new(k, label, move |_| value.clone())
    }

    /// `v_n(t) = vn cos(ωt)`, `w_j(t) = wn sin(ωt + j)`, `ω = 2π freq`.
    pub fn sinusoidal(k: usize, vn: f64, wn: f64, freq: f64) -> Self {
        let omega = 2.0 * std::f64::consts::PI * freq;
        Self::new(
            k,
            format!("sinusoidal vn={vn} wn={wn} freq={freq}"),
            move |t| ControlValue {
                vn: vn * (omega * t).cos(),
                w: (0..k).map(|j| wn * (omega * t + j as f64).sin()).collect(),
            },
        )
    }

    /// Smooth random preset: offset plus one sinusoid per channel.
    pub fn random(k: usize, rng: &mut impl Rng) -> Self {
        let mut channel = |offset: f64| {
            (
                rng.gen_range(-offset..=offset),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        };
        let vn = channel(1.0);
        let w: Vec<_> = (0..k).map(|_| channel(0.3)).collect();
        let eval = |(c, a, om, ph): (f64, f64, f64, f64), t: f64| c + a * (om * t + ph).sin();
        Self::new(k, format!("random vn={vn:?} w={w:?}"), move |t| ControlValue {
            vn: eval(vn, t),
            w: w.iter().map(|&p| eval(p, t)).collect(),
        })
    }

    /// Piecewise-linear interpolation of samples, held constant outside the range.
    pub fn sampled(times: Vec<f64>, values: Vec<ControlValue>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument(
                "sampled controls need matching, nonempty times and values".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sample times must increase".into()));
        }
        let k = values[0].w.len();
        if values.iter().any(|v| v.w.len() != k) {
            return Err(Error::Dimension("sampled controls change width".into()));
        }
        let label = format!("sampled ({} samples)", times.len());
        Ok(Self::new(k, label, move |t| {
            let i = times.partition_point(|&s| s <= t);
            if i == 0 {
                values[0].clone()
            } else if i == times.len() {
                values[i - 1].clone()
            } else {
                let s = (t - times[i - 1]) / (times[i] - times[i - 1]);
                values[i - 1].lerp(&values[i], s)
            }
        }))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, t: f64) -> Result<ControlValue> {
        let u = (self.f)(t);
        if u.w.len() != self.k {
            return Err(Error::Dimension(format!(
                "control has {} tangential channels, expected {}",
                u.w.len(),
                self.k
            )));
        }
        if !u.vn.is_finite() || u.w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("control not finite at t = {t}")));
        }
        Ok(u)
    }
}

/// Right-hand side used for the arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhsForm {
    /// Chart form for `k = 1` (the angle chart is global), embedded otherwise.
    #[default]
    Auto,
    Embedded,
    Chart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSettings {
    pub step: f64,
    /// Renormalize the unit-vector states after each step.
    pub projection: bool,
    /// Record every `record_stride`-th step (the final state is always recorded).
    pub record_stride: usize,
    pub form: RhsForm,
}

impl IntegratorSettings {
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
        }
        Ok(Self {
            step,
            projection: true,
            record_stride: 1,
            form: RhsForm::Auto,
        })
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride.max(1);
        self
    }

    pub fn with_projection(mut self, on: bool) -> Self {
        self.projection = on;
        self
    }

    pub fn with_form(mut self, form: RhsForm) -> Self {
        self.form = form;
        self
    }
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self::new(1e-3).expect("positive step")
    }
}

/// Read access shared by angular and Cartesian states.
pub trait ArmState: Clone {
    fn dims(&self) -> ArmDims;
    fn base(&self) -> DVector<f64>;
    /// `z_{s+1}`, normalized.
    fn direction(&self, s: usize) -> DVector<f64>;
    /// Chart angles of the last sphere used to read tangential rates.
    fn last_angles(&self) -> Vec<f64>;
    /// Joint velocities `ẋ_0, ..., ẋ_{n+1}` under the control value `u`.
    fn joint_velocities(&self, u: &ControlValue) -> Result<Vec<DVector<f64>>>;

    /// `A_i`, `i = 1..n`.
    fn a_values(&self) -> Vec<f64> {
        let n = self.dims().n;
        (1..=n)
            .map(|i| self.direction(i - 1).dot(&self.direction(i)))
            .collect()
    }
}

impl ArmState for AngularConfig {
    fn dims(&self) -> ArmDims {
        AngularConfig::dims(self)
    }

    fn base(&self) -> DVector<f64> {
        self.x0().clone()
    }

    fn direction(&self, s: usize) -> DVector<f64> {
        self.segment(s).clone()
    }

    fn last_angles(&self) -> Vec<f64> {
        self.angles(self.dims().n).as_slice().to_vec()
    }

    fn joint_velocities(&self, u: &ControlValue) -> Result<Vec<DVector<f64>>> {
        joint_velocities(self, u)
    }
}

impl ArmState for CartesianConfig {
    fn dims(&self) -> ArmDims {
        CartesianConfig::dims(self)
    }

    fn base(&self) -> DVector<f64> {
        self.point(0).clone()
    }

    fn direction(&self, s: usize) -> DVector<f64> {
        self.segment(s).normalize()
    }

    fn last_angles(&self) -> Vec<f64> {
        angles_unchecked(self.direction(self.dims().n).as_slice())
    }

    fn joint_velocities(&self, u: &ControlValue) -> Result<Vec<DVector<f64>>> {
        let dims = CartesianConfig::dims(self);
        let qdot = cartesian_rhs(self, u)?;
        let d = dims.space();
        Ok((0..dims.joints())
            .map(|j| qdot.rows(j * d, d).into_owned())
            .collect())
    }
}

/// Joint velocities of the arm at `q` (embedded form, standard chart on the last sphere):
/// `ẋ_i = v_i z_{i+1}` for `i ≤ n`, `ẋ_{n+1} = v_n z_{n+1} + Σ_j w_j ∂Φ/∂θ_n^j`,
/// assembled as `ẋ_0 + Σ ż_j`.
pub fn joint_velocities(q: &AngularConfig, u: &ControlValue) -> Result<Vec<DVector<f64>>> {
    let dims = q.dims();
    check_width(dims, u)?;
    let n = dims.n;
    let z: Vec<&DVector<f64>> = (0..=n).map(|s| q.segment(s)).collect();
    let v = cascade(&z, u.vn);
    let mut out = Vec::with_capacity(dims.joints());
    out.push(z[0] * v[0]);
    for s in 0..n {
        let a = z[s].dot(z[s + 1]);
        let zdot = (z[s + 1] - z[s] * a) * v[s + 1];
        let next = &out[s] + zdot;
        out.push(next);
    }
    let partials = phi_partials(q.angles(n).as_slice());
    let mut last = DVector::zeros(dims.space());
    for (wj, pj) in u.w.iter().zip(&partials) {
        last += pj * *wj;
    }
    let next = &out[n] + last;
    out.push(next);
    Ok(out)
}

/// `v_i = v_n ∏_{r=i+1}^{n} ⟨z_r, z_{r+1}⟩`, `i = 0..n`.
fn cascade<V: std::borrow::Borrow<DVector<f64>>>(z: &[V], vn: f64) -> Vec<f64> {
    let n = z.len() - 1;
    let mut v = vec![0.0; n + 1];
    v[n] = vn;
    for i in (0..n).rev() {
        v[i] = v[i + 1] * z[i].borrow().dot(z[i + 1].borrow());
    }
    v
}

fn check_width(dims: ArmDims, u: &ControlValue) -> Result<()> {
    if u.w.len() != dims.k {
        return Err(Error::Dimension(format!(
            "{} tangential controls for k = {}",
            u.w.len(),
            dims.k
        )));
    }
    Ok(())
}

/// Recorded integration output.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub controls: Vec<ControlValue>,
    /// `v_0..v_n` at each recorded state, read from the joint velocities.
    pub velocities: Vec<Vec<f64>>,
    /// Constraint drift after projection at each recorded state.
    pub drift: Vec<f64>,
    /// Largest component of a joint velocity `ẋ_i` orthogonal to `z_{i+1}`.
    pub collinearity: Vec<f64>,
    /// Largest single-step drift seen before projection.
    pub max_step_drift: f64,
}

impl<S: ArmState> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &S {
        self.states.last().expect("trajectories hold at least one state")
    }

    pub fn max_drift(&self) -> f64 {
        self.drift.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_collinearity(&self) -> f64 {
        self.collinearity.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest `|A_i|` over recorded states (`∞` for a single segment).
    pub fn min_abs_a(&self) -> f64 {
        self.states
            .iter()
            .flat_map(|s| s.a_values())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn map_states<T>(&self, f: impl Fn(&S) -> Result<T>) -> Result<Trajectory<T>> {
        Ok(Trajectory {
            times: self.times.clone(),
            states: self.states.iter().map(f).collect::<Result<_>>()?,
            controls: self.controls.clone(),
            velocities: self.velocities.clone(),
            drift: self.drift.clone(),
            collinearity: self.collinearity.clone(),
            max_step_drift: self.max_step_drift,
        })
    }

    /// CSV with a leading `#` comment line, then `t,x0_*,z1_*,...,v0..vn`.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: &str) -> Result<()> {
        let dims = self.last().dims();
        let d = dims.space();
        writeln!(w, "# {comment}")?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|r| format!("x0_{r}")));
        for s in 1..=dims.segments() {
            header.extend((1..=d).map(|r| format!("z{s}_{r}")));
        }
        header.extend((0..=dims.n).map(|i| format!("v{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (idx, state) in self.states.iter().enumerate() {
            let mut row = vec![fmt_num(self.times[idx])];
            row.extend(state.base().iter().map(|&x| fmt_num(x)));
            for s in 0..dims.segments() {
                row.extend(state.direction(s).iter().map(|&x| fmt_num(x)));
            }
            row.extend(self.velocities[idx].iter().map(|&x| fmt_num(x)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_record(&self) -> TrajectoryRecord {
        let dims = self.last().dims();
        TrajectoryRecord {
            k: dims.k,
            n: dims.n,
            times: self.times.clone(),
            x0: self.states.iter().map(|s| s.base().as_slice().to_vec()).collect(),
            z: self
                .states
                .iter()
                .map(|s| {
                    (0..dims.segments())
                        .map(|i| s.direction(i).as_slice().to_vec())
                        .collect()
                })
                .collect(),
            v: self.velocities.clone(),
            controls: self.controls.clone(),
            drift: self.drift.clone(),
            max_step_drift: self.max_step_drift,
        }
    }
}

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON mirror of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub k: usize,
    pub n: usize,
    pub times: Vec<f64>,
    pub x0: Vec<Vec<f64>>,
    pub z: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
    pub controls: Vec<ControlValue>,
    pub drift: Vec<f64>,
    pub max_step_drift: f64,
}

impl TrajectoryRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn states(&self) -> Result<Vec<AngularConfig>> {
        if self.x0.len() != self.times.len() || self.z.len() != self.times.len() {
            return Err(Error::Dimension("trajectory columns differ in length".into()));
        }
        self.x0
            .iter()
            .zip(&self.z)
            .map(|(x0, z)| {
                AngularConfig::new(
                    DVector::from_column_slice(x0),
                    z.iter().map(|v| DVector::from_column_slice(v)).collect(),
                )
            })
            .collect()
    }
}

/// One ODE together with its constraint handling.
trait System {
    type State;
    fn rhs(&self, y: &DVector<f64>, u: &ControlValue) -> Result<DVector<f64>>;
    /// Constraint drift of a raw state.
    fn drift(&self, y: &DVector<f64>) -> f64;
    fn project(&self, y: &mut DVector<f64>);
    /// Recorded state, normal velocities `v_i` and collinearity residual.
    fn record(&self, y: &DVector<f64>, u: &ControlValue) -> Result<(Self::State, Vec<f64>, f64)>;
}

/// Node times `0, h, 2h, ...` with a shorter final step landing on `T`.
fn schedule(t_end: f64, h: f64) -> Result<Vec<f64>> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("final time must be >= 0, got {t_end}")));
    }
    if t_end == 0.0 {
        return Ok(vec![0.0]);
    }
    let full = (t_end / h + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=full).map(|i| i as f64 * h).collect();
    let last = *times.last().unwrap();
    if t_end - last > 1e-12 * t_end.max(1.0) {
        times.push(t_end);
    } else if full > 0 {
        *times.last_mut().unwrap() = t_end;
    }
    Ok(times)
}

fn run<Y: System>(
    sys: &Y,
    y0: DVector<f64>,
    u: &ControlSignal,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory<Y::State>> {
    let nodes = schedule(t_end, settings.step)?;
    let stride = settings.record_stride.max(1);
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        velocities: Vec::new(),
        drift: Vec::new(),
        collinearity: Vec::new(),
        max_step_drift: 0.0,
    };
    let push = |traj: &mut Trajectory<Y::State>, t: f64, y: &DVector<f64>| -> Result<()> {
        let ut = u.eval(t)?;
        let (state, v, col) = sys.record(y, &ut)?;
        traj.times.push(t);
        traj.states.push(state);
        traj.controls.push(ut);
        traj.velocities.push(v);
        traj.drift.push(sys.drift(y));
        traj.collinearity.push(col);
        Ok(())
    };
    let mut y = y0;
    push(&mut traj, nodes[0], &y)?;
    for (idx, pair) in nodes.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let h = t_next - t;
        let before = sys.drift(&y);
        let k1 = sys.rhs(&y, &u.eval(t)?)?;
        let k2 = sys.rhs(&(&y + &k1 * (h / 2.0)), &u.eval(t + h / 2.0)?)?;
        let k3 = sys.rhs(&(&y + &k2 * (h / 2.0)), &u.eval(t + h / 2.0)?)?;
        let k4 = sys.rhs(&(&y + &k3 * h), &u.eval(t_next)?)?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let step_drift = (sys.drift(&y) - before).max(0.0);
        if step_drift > STEP_DRIFT_LIMIT {
            return Err(Error::StepRejected {
                t: t_next,
                drift: step_drift,
                limit: STEP_DRIFT_LIMIT,
            });
        }
        traj.max_step_drift = traj.max_step_drift.max(step_drift);
        if settings.projection {
            sys.project(&mut y);
        }
        let step_no = idx + 1;
        if step_no % stride == 0 || step_no == nodes.len() - 1 {
            push(&mut traj, t_next, &y)?;
        }
    }
    Ok(traj)
}

fn unit_drift(v: &DVector<f64>) -> f64 {
    (v.norm() - 1.0).abs()
}

/// Normal velocities and collinearity residual from joint velocities.
fn velocity_data(state: &impl ArmState, u: &ControlValue) -> Result<(Vec<f64>, f64)> {
    let xdot = state.joint_velocities(u)?;
    let dims = state.dims();
    let mut v = Vec::with_capacity(dims.segments());
    let mut col: f64 = 0.0;
    for i in 0..dims.segments() {
        let z = state.direction(i);
        v.push(xdot[i + 1].dot(&z));
        let along = xdot[i].dot(&z);
        col = col.max((&xdot[i] - &z * along).norm());
    }
    Ok((v, col))
}

struct EmbeddedArm {
    dims: ArmDims,
}

impl EmbeddedArm {
    fn offsets(&self) -> (usize, usize) {
        let d = self.dims.space();
        (d, d + self.dims.n * d)
    }

    fn segments(&self, y: &DVector<f64>) -> Vec<DVector<f64>> {
        let d = self.dims.space();
        let (_, theta_at) = self.offsets();
        let mut z: Vec<DVector<f64>> = (0..self.dims.n)
            .map(|s| y.rows(d + s * d, d).into_owned())
            .collect();
        z.push(phi_coords(&y.as_slice()[theta_at..]));
        z
    }

    fn encode(q: &AngularConfig) -> DVector<f64> {
        let dims = q.dims();
        let d = dims.space();
        let mut y = DVector::zeros(d + dims.n * d + dims.k);
        y.rows_mut(0, d).copy_from(q.x0());
        for s in 0..dims.n {
            y.rows_mut(d + s * d, d).copy_from(q.segment(s));
        }
        y.rows_mut(d + dims.n * d, dims.k)
            .copy_from_slice(q.angles(dims.n).as_slice());
        y
    }
}

impl System for EmbeddedArm {
    type State = AngularConfig;

    fn rhs(&self, y: &DVector<f64>, u: &ControlValue) -> Result<DVector<f64>> {
        check_width(self.dims, u)?;
        let d = self.dims.space();
        let n = self.dims.n;
        let z = self.segments(y);
        let v = cascade(&z, u.vn);
        let mut dy = DVector::zeros(y.len());
        dy.rows_mut(0, d).copy_from(&(&z[0] * v[0]));
        for s in 0..n {
            let a = z[s].dot(&z[s + 1]);
            let zdot = (&z[s + 1] - &z[s] * a) * v[s + 1];
            dy.rows_mut(d + s * d, d).copy_from(&zdot);
        }
        let (_, theta_at) = self.offsets();
        dy.rows_mut(theta_at, self.dims.k).copy_from_slice(&u.w);
        Ok(dy)
    }

    fn drift(&self, y: &DVector<f64>) -> f64 {
        let d = self.dims.space();
        (0..self.dims.n)
            .map(|s| unit_drift(&y.rows(d + s * d, d).into_owned()))
            .fold(0.0, f64::max)
    }

    fn project(&self, y: &mut DVector<f64>) {
        let d = self.dims.space();
        for s in 0..self.dims.n {
            let mut block = y.rows_mut(d + s * d, d);
            let norm = block.norm();
            block /= norm;
        }
    }

    fn record(&self, y: &DVector<f64>, u: &ControlValue) -> Result<(AngularConfig, Vec<f64>, f64)> {
        let d = self.dims.space();
        let n = self.dims.n;
        let (_, theta_at) = self.offsets();
        let mut dirs = Vec::with_capacity(n + 1);
        for s in 0..n {
            dirs.push(Direction::from_unit(UnitVector::new(
                y.rows(d + s * d, d).into_owned(),
            )?));
        }
        dirs.push(Direction::from_angles(Angles::new(
            y.as_slice()[theta_at..].to_vec(),
        )?));
        let q = AngularConfig::from_directions(y.rows(0, d).into_owned(), dirs)?;
        let (v, col) = velocity_data(&q, u)?;
        Ok((q, v, col))
    }
}

struct ChartArm {
    dims: ArmDims,
}

impl ChartArm {
    fn encode(q: &AngularConfig) -> DVector<f64> {
        let dims = q.dims();
        let d = dims.space();
        let mut y = DVector::zeros(d + dims.segments() * dims.k);
        y.rows_mut(0, d).copy_from(q.x0());
        for s in 0..dims.segments() {
            y.rows_mut(d + s * dims.k, dims.k)
                .copy_from_slice(q.angles(s).as_slice());
        }
        y
    }

    fn theta<'a>(&self, y: &'a DVector<f64>, s: usize) -> &'a [f64] {
        let off = self.dims.space() + s * self.dims.k;
        &y.as_slice()[off..off + self.dims.k]
    }
}

impl System for ChartArm {
    type State = AngularConfig;

    fn rhs(&self, y: &DVector<f64>, u: &ControlValue) -> Result<DVector<f64>> {
        check_width(self.dims, u)?;
        let d = self.dims.space();
        let k = self.dims.k;
        let n = self.dims.n;
        let z: Vec<DVector<f64>> = (0..=n).map(|s| phi_coords(self.theta(y, s))).collect();
        let v = cascade(&z, u.vn);
        let mut dy = DVector::zeros(y.len());
        dy.rows_mut(0, d).copy_from(&(&z[0] * v[0]));
        for s in 0..n {
            let theta = self.theta(y, s);
            let partials = phi_partials(theta);
            let norms = partial_norms(theta);
            for j in 0..k {
                if norms[j] < CHART_GUARD {
                    return Err(Error::ChartDegenerate {
                        index: j,
                        sine: norms[j],
                    });
                }
                dy[d + s * k + j] = v[s + 1] * z[s + 1].dot(&partials[j]) / (norms[j] * norms[j]);
            }
        }
        dy.rows_mut(d + n * k, k).copy_from_slice(&u.w);
        Ok(dy)
    }

    fn drift(&self, _y: &DVector<f64>) -> f64 {
        0.0
    }

    fn project(&self, _y: &mut DVector<f64>) {}

    fn record(&self, y: &DVector<f64>, u: &ControlValue) -> Result<(AngularConfig, Vec<f64>, f64)> {
        let d = self.dims.space();
        let angles = (0..self.dims.segments())
            .map(|s| Angles::new(self.theta(y, s).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let q = AngularConfig::from_angles(y.rows(0, d).into_owned(), angles)?;
        let (v, col) = velocity_data(&q, u)?;
        Ok((q, v, col))
    }
}

/// Car with `n` trailers in its own coordinates `(x, y, θ_0, ..., θ_n)`.
struct Car {
    n: usize,
}

impl Car {
    fn state_of(&self, y: &DVector<f64>) -> Result<AngularConfig> {
        let angles = (0..=self.n)
            .map(|r| Angles::new(vec![y[2 + r]]))
            .collect::<Result<Vec<_>>>()?;
        AngularConfig::from_angles(DVector::from_vec(vec![y[1], y[0]]), angles)
    }
}

impl System for Car {
    type State = AngularConfig;

    fn rhs(&self, y: &DVector<f64>, u: &ControlValue) -> Result<DVector<f64>> {
        let n = self.n;
        let theta = &y.as_slice()[2..];
        let mut v = vec![0.0; n + 1];
        v[n] = u.vn;
        for r in (0..n).rev() {
            v[r] = v[r + 1] * (theta[r + 1] - theta[r]).cos();
        }
        let mut dy = DVector::zeros(y.len());
        dy[0] = v[0] * theta[0].cos();
        dy[1] = v[0] * theta[0].sin();
        for r in 0..n {
            dy[2 + r] = v[r + 1] * (theta[r + 1] - theta[r]).sin();
        }
        dy[2 + n] = u.w[0];
        Ok(dy)
    }

    fn drift(&self, _y: &DVector<f64>) -> f64 {
        0.0
    }

    fn project(&self, _y: &mut DVector<f64>) {}

    fn record(&self, y: &DVector<f64>, u: &ControlValue) -> Result<(AngularConfig, Vec<f64>, f64)> {
        let q = self.state_of(y)?;
        let (v, col) = velocity_data(&q, u)?;
        Ok((q, v, col))
    }
}

struct CartesianFlow {
    dims: ArmDims,
}

impl CartesianFlow {
    fn config(&self, y: &DVector<f64>) -> CartesianConfig {
        CartesianConfig::from_flat(self.dims, y.as_slice()).expect("state length matches the arm")
    }
}

/// `q̇ = Σ_r μ_r G_r` with `μ = v_n z_{n+1} + Σ_j w_j ∂Φ/∂θ_n^j` the velocity
/// of the free end and `G_r` the generators of `Δ`.
fn cartesian_rhs(c: &CartesianConfig, u: &ControlValue) -> Result<DVector<f64>> {
    let dims = c.dims();
    check_width(dims, u)?;
    let last = c.segment(dims.n);
    let unit = &last / last.norm();
    let partials = phi_partials(&angles_unchecked(unit.as_slice()));
    let mut mu = &unit * u.vn;
    for (wj, pj) in u.w.iter().zip(&partials) {
        mu += pj * *wj;
    }
    let gens = cartesian_delta(c);
    let mut qdot = DVector::zeros(dims.ambient_dim());
    for (r, g) in gens.vectors().iter().enumerate() {
        qdot += g * mu[r];
    }
    Ok(qdot)
}

impl System for CartesianFlow {
    type State = CartesianConfig;

    fn rhs(&self, y: &DVector<f64>, u: &ControlValue) -> Result<DVector<f64>> {
        cartesian_rhs(&self.config(y), u)
    }

    fn drift(&self, y: &DVector<f64>) -> f64 {
        let c = self.config(y);
        (0..self.dims.segments())
            .map(|s| unit_drift(&c.segment(s)))
            .fold(0.0, f64::max)
    }

    fn project(&self, y: &mut DVector<f64>) {
        let d = self.dims.space();
        for i in 1..self.dims.joints() {
            let prev = y.rows((i - 1) * d, d).into_owned();
            let seg = y.rows(i * d, d) - &prev;
            let fixed = prev + &seg / seg.norm();
            y.rows_mut(i * d, d).copy_from(&fixed);
        }
    }

    fn record(&self, y: &DVector<f64>, u: &ControlValue) -> Result<(CartesianConfig, Vec<f64>, f64)> {
        let c = self.config(y);
        let (v, col) = velocity_data(&c, u)?;
        Ok((c, v, col))
    }
}

fn check_controls(dims: ArmDims, u: &ControlSignal) -> Result<()> {
    if u.k() != dims.k {
        return Err(Error::Dimension(format!(
            "control signal has {} tangential channels, arm has k = {}",
            u.k(),
            dims.k
        )));
    }
    Ok(())
}

/// Car with `n` trailers. States are recorded as arm configurations with
/// `x_0 = (y, x)` and the same angles.
pub fn integrate_car(
    q0: &AngularConfig,
    u: &ControlSignal,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory<AngularConfig>> {
    let dims = q0.dims();
    if dims.k != 1 {
        return Err(Error::InvalidArgument("the car model needs k = 1".into()));
    }
    check_controls(dims, u)?;
    let mut y = DVector::zeros(3 + dims.n);
    y[0] = q0.x0()[1];
    y[1] = q0.x0()[0];
    for r in 0..=dims.n {
        y[2 + r] = q0.angles(r).as_slice()[0];
    }
    run(&Car { n: dims.n }, y, u, t_end, settings)
}

pub fn integrate_arm(
    q0: &AngularConfig,
    u: &ControlSignal,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory<AngularConfig>> {
    let dims = q0.dims();
    check_controls(dims, u)?;
    let chart = match settings.form {
        RhsForm::Auto => dims.k == 1,
        RhsForm::Chart => true,
        RhsForm::Embedded => false,
    };
    if chart {
        run(&ChartArm { dims }, ChartArm::encode(q0), u, t_end, settings)
    } else {
        run(&EmbeddedArm { dims }, EmbeddedArm::encode(q0), u, t_end, settings)
    }
}

pub fn integrate_cartesian(
    q0: &CartesianConfig,
    u: &ControlSignal,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory<CartesianConfig>> {
    let dims = q0.dims();
    check_controls(dims, u)?;
    gamma(q0)?;
    run(&CartesianFlow { dims }, q0.to_flat(), u, t_end, settings)
}

fn check_subarm(dims: ArmDims, p: usize, m: usize) -> Result<()> {
    if !(1 <= p && p < m && m <= dims.n) {
        return Err(Error::InvalidArgument(format!(
            "sub-arm needs 1 <= p < m <= n, got p = {p}, m = {m}, n = {}",
            dims.n
        )));
    }
    Ok(())
}

/// `Π_{p,m}`: the joint `x_{p-1}` and the directions `z_p, ..., z_{m+1}`
/// (the spheres `θ_{p-1}, ..., θ_m`), an arm with `m - p + 1` as its `n`.
pub fn project_subarm(q: &AngularConfig, p: usize, m: usize) -> Result<AngularConfig> {
    check_subarm(q.dims(), p, m)?;
    let mut base = q.x0().clone();
    for s in 0..p - 1 {
        base += q.segment(s);
    }
    let dirs = q.directions()[p - 1..=m].to_vec();
    AngularConfig::from_directions(base, dirs)
}

/// Sub-arm driven by free controls `u_0 = v_m` and `u_i = θ̇_m^i`.
pub fn integrate_subarm(
    q0: &AngularConfig,
    p: usize,
    m: usize,
    u: &ControlSignal,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory<AngularConfig>> {
    integrate_arm(&project_subarm(q0, p, m)?, u, t_end, settings)
}

/// Controls a full-arm state induces on the sub-arm ending at sphere `m`:
/// `v_m` and `θ̇_m = v_{m+1} B_{m+1}` (or the free-end rates when `m = n`).
pub fn induced_controls(q: &AngularConfig, m: usize, u: &ControlValue) -> Result<ControlValue> {
    let dims = q.dims();
    let n = dims.n;
    let z: Vec<&DVector<f64>> = (0..=n).map(|s| q.segment(s)).collect();
    let v = cascade(&z, u.vn);
    if m == n {
        return Ok(ControlValue::new(v[m], u.w.clone()));
    }
    let theta = q.angles(m).as_slice();
    let partials = phi_partials(theta);
    let norms = partial_norms(theta);
    let mut w = Vec::with_capacity(dims.k);
    for j in 0..dims.k {
        if norms[j] < CHART_GUARD {
            return Err(Error::ChartDegenerate {
                index: j,
                sine: norms[j],
            });
        }
        w.push(v[m + 1] * z[m + 1].dot(&partials[j]) / (norms[j] * norms[j]));
    }
    Ok(ControlValue::new(v[m], w))
}

/// Integrates the full arm at half step, samples the induced controls and
/// integrates the sub-arm with them at the requested step. Returns
/// `(sub-arm trajectory, full trajectory)`.
pub fn integrate_subarm_induced(
    q0: &AngularConfig,
    p: usize,
    m: usize,
    u: &ControlSignal,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<(Trajectory<AngularConfig>, Trajectory<AngularConfig>)> {
    check_subarm(q0.dims(), p, m)?;
    let fine = IntegratorSettings {
        step: settings.step / 2.0,
        record_stride: 1,
        ..*settings
    };
    let full = integrate_arm(q0, u, t_end, &fine)?;
    let values = full
        .states
        .iter()
        .zip(&full.controls)
        .map(|(q, c)| induced_controls(q, m, c))
        .collect::<Result<Vec<_>>>()?;
    let induced = if full.times.len() == 1 {
        ControlSignal::constant(values[0].vn, values[0].w.clone())
    } else {
        ControlSignal::sampled(full.times.clone(), values)?
    };
    let sub = integrate_subarm(q0, p, m, &induced, t_end, settings)?;
    Ok((sub, full))
}

/// Normal velocities at one recorded instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityReport {
    pub t: f64,
    /// `v_i = ⟨ẋ_{i+1}, z_{i+1}⟩`, `i = 0..n`.
    pub v: Vec<f64>,
    /// Rates `v_{θ_n^j}` read back from `ż_{n+1}`.
    pub tangential: Vec<f64>,
    /// `A_i`, `i = 1..n`.
    pub a: Vec<f64>,
    /// `max_i |v_{i-1} - v_i A_i|`.
    pub cascade_residual: f64,
}

/// Velocity decomposition at the recorded sample nearest to `t`.
pub fn velocity_report<S: ArmState>(traj: &Trajectory<S>, t: f64) -> Result<VelocityReport> {
    let (first, last) = (traj.times[0], *traj.times.last().unwrap());
    let slack = 1e-12 * last.abs().max(1.0);
    if !(t >= first - slack && t <= last + slack) {
        return Err(Error::InvalidArgument(format!(
            "t = {t} outside [{first}, {last}]"
        )));
    }
    let idx = traj
        .times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(i, _)| i)
        .unwrap();
    velocity_report_at(&traj.states[idx], traj.times[idx], &traj.controls[idx])
}

pub fn velocity_report_at<S: ArmState>(q: &S, t: f64, u: &ControlValue) -> Result<VelocityReport> {
    let dims = q.dims();
    let n = dims.n;
    let xdot = q.joint_velocities(u)?;
    let v: Vec<f64> = (0..=n).map(|i| xdot[i + 1].dot(&q.direction(i))).collect();
    let a = q.a_values();
    let cascade_residual = (1..=n)
        .map(|i| (v[i - 1] - v[i] * a[i - 1]).abs())
        .fold(0.0, f64::max);
    let zdot = &xdot[n + 1] - &xdot[n];
    let theta = q.last_angles();
    let partials = phi_partials(&theta);
    let norms = partial_norms(&theta);
    let tangential = partials
        .iter()
        .zip(&norms)
        .map(|(p, nrm)| p.dot(&zdot) / (nrm * nrm))
        .collect();
    Ok(VelocityReport {
        t,
        v,
        tangential,
        a,
        cascade_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingKind {
    SignChange,
    NearZero,
}

/// A passage through a singular configuration `A_i = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularEvent {
    /// Crossing time, linearly interpolated for sign changes.
    pub t: f64,
    pub index: usize,
    pub kind: CrossingKind,
    /// Joints `M_j`, `j < index`, whose velocity vanishes there.
    pub zero_velocity: Vec<usize>,
}

/// Lists the times where some `A_i` changes sign or falls below `eps`.
pub fn singular_scan(times: &[f64], states: &[AngularConfig], eps: f64) -> Vec<SingularEvent> {
    let mut events = Vec::new();
    let Some(first) = states.first() else {
        return events;
    };
    let n = first.dims().n;
    let a: Vec<Vec<f64>> = states.iter().map(|q| q.a_values()).collect();
    for i in 1..=n {
        let mut last_event: Option<usize> = None;
        for s in 0..states.len() {
            let cur = a[s][i - 1];
            let crossing = s > 0 && {
                let prev = a[s - 1][i - 1];
                prev * cur < 0.0
            };
            let event = if crossing {
                let prev = a[s - 1][i - 1];
                let frac = prev / (prev - cur);
                Some((
                    times[s - 1] + frac * (times[s] - times[s - 1]),
                    CrossingKind::SignChange,
                ))
            } else if cur.abs() < eps {
                Some((times[s], CrossingKind::NearZero))
            } else {
                None
            };
            if let Some((t, kind)) = event {
                let adjacent = last_event.is_some_and(|l| l + 1 >= s);
                if !adjacent {
                    events.push(SingularEvent {
                        t,
                        index: i,
                        kind,
                        zero_velocity: (0..i).collect(),
                    });
                }
                last_event = Some(s);
            }
        }
    }
    events.sort_by(|x, y| x.t.total_cmp(&y.t).then(x.index.cmp(&y.index)));
    events
}
