//! Full-batch gradient descent and analysis of its trajectory.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::net::{Activation, Dataset, Network};

/// Name of the initialization scheme; bump when the draw order changes.
pub const INIT_GENERATOR: &str = "chacha20-normal-v1";

/// Normalization of the training objective. Both have the same stationary
/// points; they differ by the constant gradient factor `2 / (K J)`, which
/// rescales time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// `1/2 sum_k |y_hat_k - y_k|^2`, the loss used by the analysis modules.
    #[default]
    HalfSum,
    /// `1/(K J) sum_k |y_hat_k - y_k|^2`, the mean squared error.
    Mean,
}

impl LossReduction {
    pub fn gradient_scale(self, samples: usize, outputs: usize) -> f64 {
        match self {
            LossReduction::HalfSum => 1.0,
            LossReduction::Mean => 2.0 / (samples * outputs) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub init_std: f64,
    pub init_seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub record_every: usize,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    #[serde(default)]
    pub loss_reduction: LossReduction,
}

impl TrainConfig {
    pub fn activation(&self) -> Result<Activation> {
        Activation::new(self.alpha_plus, self.alpha_minus)
    }

    /// `lr = 0` is accepted as a degenerate run that leaves the parameters fixed.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Validation(format!("lr must be a nonnegative finite number, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Validation("hidden must be at least 1".into()));
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return Err(Error::Validation(format!("init_std must be positive, got {}", self.init_std)));
        }
        if self.record_every == 0 {
            return Err(Error::Validation("record_every must be at least 1".into()));
        }
        self.activation().map(|_| ())
    }
}

/// `W` row-major then `H` row-major, each entry i.i.d. `N(0, init_std^2)`
/// from ChaCha20 seeded with `init_seed`.
pub fn initialize(config: &TrainConfig, d: usize, outputs: usize) -> Result<Network> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.init_seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Validation(e.to_string()))?;
    let w = Array2::from_shape_simple_fn((config.hidden, d), || normal.sample(&mut rng));
    let h = Array2::from_shape_simple_fn((outputs, config.hidden), || normal.sample(&mut rng));
    Network::new(w, h, config.activation()?)
}

/// Flat working state for the training loop.
struct Workspace {
    d: usize,
    ni: usize,
    nj: usize,
    nk: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    h: Vec<f64>,
    act: Activation,
    a: Vec<f64>,
    s: Vec<f64>,
    e: Vec<f64>,
    gw: Vec<f64>,
    gh: Vec<f64>,
}

impl Workspace {
    fn new(net: &Network, data: &Dataset) -> Result<Self> {
        data.check(net)?;
        let (ni, d, nj, nk) = (net.hidden(), net.input_dim(), net.outputs(), data.samples());
        Ok(Self {
            d,
            ni,
            nj,
            nk,
            x: data.x().iter().copied().collect(),
            y: data.y().iter().copied().collect(),
            w: net.w().iter().copied().collect(),
            h: net.h().iter().copied().collect(),
            act: net.activation(),
            a: vec![0.0; ni * nk],
            s: vec![0.0; ni * nk],
            e: vec![0.0; nk * nj],
            gw: vec![0.0; ni * d],
            gh: vec![0.0; nj * ni],
        })
    }

    /// Fills residuals and gradients; returns the loss. The activation
    /// derivative is `alpha_plus` for `z > 0` and `alpha_minus` otherwise.
    fn gradients(&mut self) -> f64 {
        let (d, ni, nj, nk) = (self.d, self.ni, self.nj, self.nk);
        for i in 0..ni {
            let w = &self.w[i * d..(i + 1) * d];
            for k in 0..nk {
                let x = &self.x[k * d..(k + 1) * d];
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                self.a[i * nk + k] = self.act.rho(z);
                self.s[i * nk + k] = if z > 0.0 { self.act.alpha_plus() } else { self.act.alpha_minus() };
            }
        }
        let mut loss = 0.0;
        for k in 0..nk {
            for j in 0..nj {
                let mut yhat = 0.0;
                for i in 0..ni {
                    yhat += self.h[j * ni + i] * self.a[i * nk + k];
                }
                let e = yhat - self.y[k * nj + j];
                self.e[k * nj + j] = e;
                loss += e * e;
            }
        }
        for j in 0..nj {
            for i in 0..ni {
                let mut g = 0.0;
                for k in 0..nk {
                    g += self.e[k * nj + j] * self.a[i * nk + k];
                }
                self.gh[j * ni + i] = g;
            }
        }
        self.gw.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..ni {
            for k in 0..nk {
                let mut q = 0.0;
                for j in 0..nj {
                    q += self.e[k * nj + j] * self.h[j * ni + i];
                }
                let c = q * self.s[i * nk + k];
                if c != 0.0 {
                    for m in 0..d {
                        self.gw[i * d + m] += c * self.x[k * d + m];
                    }
                }
            }
        }
        0.5 * loss
    }

    fn balance(&self, i: usize) -> f64 {
        let w: f64 = self.w[i * self.d..(i + 1) * self.d].iter().map(|v| v * v).sum();
        let h: f64 = (0..self.nj).map(|j| self.h[j * self.ni + i].powi(2)).sum();
        w - h
    }

    fn apply(&mut self, lr: f64) -> bool {
        let mut finite = true;
        for (p, g) in self.w.iter_mut().zip(&self.gw) {
            *p -= lr * g;
            finite &= p.is_finite();
        }
        for (p, g) in self.h.iter_mut().zip(&self.gh) {
            *p -= lr * g;
            finite &= p.is_finite();
        }
        finite
    }

    fn network(&self) -> Network {
        let w = Array2::from_shape_vec((self.ni, self.d), self.w.clone()).expect("shape");
        let h = Array2::from_shape_vec((self.nj, self.ni), self.h.clone()).expect("shape");
        Network { w, h, activation: self.act }
    }
}

/// Gradient of the loss under the training convention, as `(dL/dW, dL/dH)`.
pub fn gd_gradient(net: &Network, data: &Dataset) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut ws = Workspace::new(net, data)?;
    ws.gradients();
    let gw = Array2::from_shape_vec((ws.ni, ws.d), ws.gw).expect("shape");
    let gh = Array2::from_shape_vec((ws.nj, ws.ni), ws.gh).expect("shape");
    Ok((gw, gh))
}

/// One step on the half-sum loss.
pub fn gd_step(net: &Network, data: &Dataset, lr: f64) -> Result<Network> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Validation(format!("lr must be a nonnegative finite number, got {lr}")));
    }
    let mut ws = Workspace::new(net, data)?;
    ws.gradients();
    if !ws.apply(lr) {
        return Err(Error::Divergence { epoch: 0 });
    }
    Ok(ws.network())
}

/// Recorded training trajectory.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub config: TrainConfig,
    /// Half-sum loss before step `t`, for `t = 0..=epochs`; the last entry is
    /// the final loss. Recorded in this normalization whatever the reduction.
    pub losses: Vec<f64>,
    /// Epochs at which parameters were recorded; always includes 0 and `epochs`.
    pub recorded: Vec<usize>,
    pub w: Vec<Array2<f64>>,
    pub h: Vec<Array2<f64>>,
    /// Per neuron, the largest balance change caused by a single step.
    pub max_step_drift: Vec<f64>,
}

impl TrainTrace {
    pub fn activation(&self) -> Activation {
        self.config.activation().expect("validated at training time")
    }

    pub fn epochs(&self) -> usize {
        self.config.epochs
    }

    /// Network recorded at the latest epoch not after `epoch`.
    pub fn network_at(&self, epoch: usize) -> Network {
        let idx = self.recorded.partition_point(|&t| t <= epoch).saturating_sub(1);
        Network { w: self.w[idx].clone(), h: self.h[idx].clone(), activation: self.activation() }
    }

    pub fn final_network(&self) -> Network {
        self.network_at(self.epochs())
    }
}

pub fn train(config: &TrainConfig, data: &Dataset) -> Result<(TrainTrace, Network)> {
    let net = initialize(config, data.input_dim(), data.outputs())?;
    train_from(config, net, data)
}

/// Runs `config.epochs` steps starting from `net`; the initializer fields of `config` are ignored.
pub fn train_from(config: &TrainConfig, net: Network, data: &Dataset) -> Result<(TrainTrace, Network)> {
    config.validate()?;
    let mut ws = Workspace::new(&net, data)?;
    let mut trace = TrainTrace {
        config: *config,
        losses: Vec::with_capacity(config.epochs + 1),
        recorded: Vec::new(),
        w: Vec::new(),
        h: Vec::new(),
        max_step_drift: vec![0.0; ws.ni],
    };
    let lr = config.lr * config.loss_reduction.gradient_scale(ws.nk, ws.nj);
    let mut before = vec![0.0; ws.ni];
    for epoch in 0..config.epochs {
        if epoch % config.record_every == 0 {
            record(&mut trace, &ws, epoch);
        }
        let loss = ws.gradients();
        trace.losses.push(loss);
        for (i, b) in before.iter_mut().enumerate() {
            *b = ws.balance(i);
        }
        if !ws.apply(lr) {
            return Err(Error::Divergence { epoch });
        }
        for (i, b) in before.iter().enumerate() {
            let step = (ws.balance(i) - b).abs();
            if step > trace.max_step_drift[i] {
                trace.max_step_drift[i] = step;
            }
        }
    }
    trace.losses.push(ws.gradients());
    record(&mut trace, &ws, config.epochs);
    Ok((trace, ws.network()))
}

fn record(trace: &mut TrainTrace, ws: &Workspace, epoch: usize) {
    let net = ws.network();
    trace.recorded.push(epoch);
    trace.w.push(net.w);
    trace.h.push(net.h);
}

/// `|w_i|^2 - sum_j h_ji^2`. For several outputs this is the natural
/// extension of the scalar-output conserved quantity.
pub fn balance(net: &Network) -> Vec<f64> {
    (0..net.hidden())
        .map(|i| {
            let w = net.w_row(i);
            dot(w, w) - net.h().column(i).iter().map(|v| v * v).sum::<f64>()
        })
        .collect()
}

/// Per neuron, `max_t |balance_i(t) - balance_i(0)|` over recorded epochs.
pub fn balance_drift(trace: &TrainTrace) -> Vec<f64> {
    let act = trace.activation();
    let net_at = |idx: usize| Network { w: trace.w[idx].clone(), h: trace.h[idx].clone(), activation: act };
    let b0 = balance(&net_at(0));
    let mut drift = vec![0.0f64; b0.len()];
    for idx in 1..trace.recorded.len() {
        for (i, b) in balance(&net_at(idx)).iter().enumerate() {
            drift[i] = drift[i].max((b - b0[i]).abs());
        }
    }
    drift
}

/// `max_i drift_i / max(1e-12, max_t |P_t|^2)`.
pub fn relative_balance_drift(trace: &TrainTrace) -> f64 {
    let drift = balance_drift(trace).into_iter().fold(0.0, f64::max);
    let scale = trace
        .w
        .iter()
        .zip(&trace.h)
        .map(|(w, h)| w.iter().chain(h.iter()).map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    drift / scale.max(1e-12)
}

pub const DEFAULT_EPS_RATE: f64 = 1e-7;
pub const DEFAULT_WINDOW: usize = 1000;

/// Maximal epoch intervals covered by flat windows. Window `[t, t + window]`
/// is flat when `(L(t) - L(t + window)) / (window L(t)) < eps_rate`;
/// overlapping or touching flat windows are merged.
pub fn detect_plateaus(losses: &[f64], eps_rate: f64, window: usize) -> Result<Vec<(usize, usize)>> {
    if !(eps_rate > 0.0) {
        return Err(Error::Validation(format!("eps_rate must be positive, got {eps_rate}")));
    }
    if window < 2 {
        return Err(Error::Validation(format!("window must be at least 2, got {window}")));
    }
    if losses.len() <= window {
        return Ok(Vec::new());
    }
    let mut out: Vec<(usize, usize)> = Vec::new();
    for t in 0..losses.len() - window {
        let l = losses[t];
        let rate = if l > 0.0 { (l - losses[t + window]) / (window as f64 * l) } else { 0.0 };
        if rate < eps_rate {
            match out.last_mut() {
                Some(last) if last.1 >= t => last.1 = t + window,
                _ => out.push((t, t + window)),
            }
        }
    }
    Ok(out)
}

/// Neurons with `rho(w_i . x_k) = 0` for every sample.
pub fn is_dead(net: &Network, data: &Dataset, i: usize) -> bool {
    let act = net.activation();
    let w = net.w_row(i);
    data.x().axis_iter(Axis(0)).all(|x| act.rho(dot(w, x)) == 0.0)
}

/// Single-linkage clusters of living neurons by direction; two neurons link
/// when the cosine between their input weights is at least `1 - cos_tol`.
pub fn group_neurons(net: &Network, data: &Dataset, cos_tol: f64) -> Result<Vec<Vec<usize>>> {
    if !(cos_tol > 0.0 && cos_tol < 1.0) {
        return Err(Error::Validation(format!("cos_tol must lie in (0, 1), got {cos_tol}")));
    }
    let living: Vec<usize> = (0..net.hidden()).filter(|&i| !is_dead(net, data, i) && norm(net.w_row(i)) > 0.0).collect();
    Ok(group_indices(net.w(), &living, cos_tol))
}

pub(crate) fn group_indices(w: ArrayView2<f64>, members: &[usize], cos_tol: f64) -> Vec<Vec<usize>> {
    let n = members.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    let units: Vec<_> = members.iter().map(|&i| w.row(i).to_owned() / norm(w.row(i))).collect();
    for a in 0..n {
        for b in (a + 1)..n {
            if dot(units[a].view(), units[b].view()) >= 1.0 - cos_tol {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of: Vec<Option<usize>> = vec![None; n];
    for (a, &m) in members.iter().enumerate() {
        let r = find(&mut parent, a);
        match root_of[r] {
            Some(g) => groups[g].push(m),
            None => {
                root_of[r] = Some(groups.len());
                groups.push(vec![m]);
            }
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NeuronStatus {
    Dead,
    SmallLiving,
    Active,
}

/// Default amplitude threshold: a hundredth of the median amplitude of the
/// non-dead neurons, or `1e-3` when every neuron is dead.
pub fn default_small_tol(net: &Network, data: &Dataset) -> f64 {
    let mut amps: Vec<f64> = (0..net.hidden()).filter(|&i| !is_dead(net, data, i)).map(|i| amplitude(net, i)).collect();
    if amps.is_empty() {
        return 1e-3;
    }
    amps.sort_by(f64::total_cmp);
    let n = amps.len();
    let median = if n % 2 == 1 { amps[n / 2] } else { 0.5 * (amps[n / 2 - 1] + amps[n / 2]) };
    if median > 0.0 {
        1e-2 * median
    } else {
        1e-3
    }
}

pub fn amplitude(net: &Network, i: usize) -> f64 {
    let w = net.w_row(i);
    (dot(w, w) + net.h().column(i).iter().map(|v| v * v).sum::<f64>()).sqrt()
}

pub fn neuron_status(net: &Network, data: &Dataset, small_tol: f64) -> Vec<NeuronStatus> {
    (0..net.hidden())
        .map(|i| {
            if is_dead(net, data, i) {
                NeuronStatus::Dead
            } else if amplitude(net, i) < small_tol {
                NeuronStatus::SmallLiving
            } else {
                NeuronStatus::Active
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub eps_rate: f64,
    pub window: usize,
    pub cos_tol: f64,
    /// Defaults to [`default_small_tol`] of the final network, so one
    /// threshold applies to the whole run.
    pub small_tol: Option<f64>,
    /// Amplitude ratio across a plateau exit that counts as growth.
    pub growth: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { eps_rate: DEFAULT_EPS_RATE, window: DEFAULT_WINDOW, cos_tol: 1e-3, small_tol: None, growth: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeEvent {
    /// Last epoch of the plateau being left.
    pub plateau_end: usize,
    /// Epoch at which neuron status is read: the plateau midpoint.
    pub probed_at: usize,
    /// Epoch at which growth is measured: the start of the next plateau, or the end of training.
    pub measured_at: usize,
    /// Small living groups at the probe whose mean amplitude grew by the growth factor.
    pub growing_groups: Vec<Vec<usize>>,
    pub small_living: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeReport {
    pub plateaus: Vec<(usize, usize)>,
    pub escapes: Vec<EscapeEvent>,
    /// Whether the last plateau runs to the end of training.
    pub final_plateau: bool,
    /// Small living neurons at the end of training.
    pub final_small_living: usize,
    pub validated: bool,
    pub small_tol: f64,
}

/// Every plateau that ends before training does is an escape. Status is read
/// at the plateau midpoint, where the parameters sit near the stationary
/// point rather than already leaving it.
pub fn saddle_escape_report(trace: &TrainTrace, data: &Dataset, opts: ReportOptions) -> Result<EscapeReport> {
    let plateaus = detect_plateaus(&trace.losses, opts.eps_rate, opts.window)?;
    let last = trace.final_network();
    let small_tol = opts.small_tol.unwrap_or_else(|| default_small_tol(&last, data));
    let end = trace.epochs();
    let final_plateau = plateaus.last().is_some_and(|p| p.1 == end);
    let exits = if final_plateau { plateaus.len() - 1 } else { plateaus.len() };
    let mut escapes = Vec::with_capacity(exits);
    let mut validated = true;
    for p in 0..exits {
        let (start, stop) = plateaus[p];
        let probed_at = start + (stop - start) / 2;
        let measured_at = plateaus.get(p + 1).map_or(end, |q| q.0);
        let before = trace.network_at(probed_at);
        let after = trace.network_at(measured_at);
        let status = neuron_status(&before, data, small_tol);
        let small: Vec<usize> = (0..before.hidden())
            .filter(|&i| status[i] == NeuronStatus::SmallLiving && norm(before.w_row(i)) > 0.0)
            .collect();
        validated &= !small.is_empty();
        let mean_amp = |net: &Network, g: &[usize]| g.iter().map(|&i| amplitude(net, i)).sum::<f64>() / g.len() as f64;
        let growing_groups = group_indices(before.w(), &small, opts.cos_tol)
            .into_iter()
            .filter(|g| mean_amp(&after, g) >= opts.growth * mean_amp(&before, g))
            .collect();
        escapes.push(EscapeEvent { plateau_end: stop, probed_at, measured_at, growing_groups, small_living: small.len() });
    }
    let final_small_living =
        neuron_status(&last, data, small_tol).iter().filter(|&&s| s == NeuronStatus::SmallLiving).count();
    if final_plateau {
        validated &= final_small_living == 0;
    }
    Ok(EscapeReport { plateaus, escapes, final_plateau, final_small_living, validated, small_tol })
}

impl EscapeReport {
    pub fn events_json(&self) -> String {
        serde_json::json!({ "plateaus": self.plateaus, "escapes": self.escapes }).to_string()
    }
}

/// Counterclockwise angle of a 2-D vector against `(1, 0)`, in `[0, 2 pi)`.
pub fn angle_2d(w: &[f64]) -> f64 {
    w[1].atan2(w[0]).rem_euclid(std::f64::consts::TAU)
}

/// CSV with `epoch, loss`, then per neuron its norm, direction (angle for
/// `d = 2`, unit-vector components otherwise), output weights and balance.
pub fn trace_csv(trace: &TrainTrace) -> String {
    let w0 = &trace.w[0];
    let (ni, d) = w0.dim();
    let nj = trace.h[0].nrows();
    let mut out = String::from("epoch,loss");
    for i in 0..ni {
        write!(out, ",norm_{i}").unwrap();
        if d == 2 {
            write!(out, ",angle_{i}").unwrap();
        } else {
            for m in 0..d {
                write!(out, ",u_{i}_{m}").unwrap();
            }
        }
        for j in 0..nj {
            write!(out, ",h_{j}_{i}").unwrap();
        }
        write!(out, ",balance_{i}").unwrap();
    }
    out.push('\n');
    for (idx, &epoch) in trace.recorded.iter().enumerate() {
        let (w, h) = (&trace.w[idx], &trace.h[idx]);
        write!(out, "{epoch},{:.16e}", trace.losses[epoch]).unwrap();
        for i in 0..ni {
            let row = w.row(i);
            let n = norm(row);
            write!(out, ",{n:.16e}").unwrap();
            if d == 2 {
                write!(out, ",{:.16e}", angle_2d(&[row[0], row[1]])).unwrap();
            } else {
                for m in 0..d {
                    let u = if n > 0.0 { row[m] / n } else { 0.0 };
                    write!(out, ",{u:.16e}").unwrap();
                }
            }
            let mut hh = 0.0;
            for j in 0..nj {
                write!(out, ",{:.16e}", h[[j, i]]).unwrap();
                hh += h[[j, i]] * h[[j, i]];
            }
            write!(out, ",{:.16e}", n * n - hh).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Per-epoch loss series as `epoch,loss`.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::with_capacity(losses.len() * 32);
    out.push_str("epoch,loss\n");
    for (t, l) in losses.iter().enumerate() {
        writeln!(out, "{t},{l:.16e}").unwrap();
    }
    out
}

fn parse_field(field: &str, what: &'static str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse { what, reason: format!("'{field}': {e}") })
}

pub fn parse_loss_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("epoch,loss") {
        return Err(Error::Parse { what: "loss csv", reason: "missing 'epoch,loss' header".into() });
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (_, loss) = l
                .split_once(',')
                .ok_or_else(|| Error::Parse { what: "loss csv", reason: format!("malformed row '{l}'") })?;
            parse_field(loss, "loss csv")
        })
        .collect()
}

/// Rebuilds a trace from [`trace_csv`] output and the per-epoch losses.
/// Weights are recovered from norm and direction, so they match the
/// original to rounding.
pub fn parse_trace_csv(text: &str, losses: Vec<f64>, config: TrainConfig, d: usize, outputs: usize) -> Result<TrainTrace> {
    let bad = |reason: String| Error::Parse { what: "trace csv", reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let per_neuron = 1 + if d == 2 { 1 } else { d } + outputs + 1;
    let columns = header.split(',').count();
    if columns < 2 || (columns - 2) % per_neuron != 0 {
        return Err(bad(format!("{columns} columns do not fit d = {d}, outputs = {outputs}")));
    }
    let ni = (columns - 2) / per_neuron;
    let mut trace = TrainTrace {
        config,
        losses,
        recorded: Vec::new(),
        w: Vec::new(),
        h: Vec::new(),
        max_step_drift: vec![f64::NAN; ni],
    };
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(bad(format!("row has {} fields, header has {columns}", fields.len())));
        }
        let epoch: usize = fields[0].trim().parse().map_err(|e| bad(format!("epoch '{}': {e}", fields[0])))?;
        let mut w = Array2::zeros((ni, d));
        let mut h = Array2::zeros((outputs, ni));
        for i in 0..ni {
            let base = 2 + i * per_neuron;
            let n = parse_field(fields[base], "trace csv")?;
            if d == 2 {
                let a = parse_field(fields[base + 1], "trace csv")?;
                w[[i, 0]] = n * a.cos();
                w[[i, 1]] = n * a.sin();
            } else {
                for m in 0..d {
                    w[[i, m]] = n * parse_field(fields[base + 1 + m], "trace csv")?;
                }
            }
            let hb = base + 1 + if d == 2 { 1 } else { d };
            for j in 0..outputs {
                h[[j, i]] = parse_field(fields[hb + j], "trace csv")?;
            }
        }
        trace.recorded.push(epoch);
        trace.w.push(w);
        trace.h.push(h);
    }
    if trace.recorded.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(trace)
}
