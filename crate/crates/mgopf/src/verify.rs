//! Independent verification of operating points and exact feasible-region
//! sampling.
//!
//! This module is the referee for everything the relaxation-based solvers
//! produce: it knows nothing about semidefinite programs. Given a stacked
//! voltage vector it recomputes injected currents from the bus admittance
//! matrix, recovers the implied DG setpoints from the bus balances, and
//! reports how badly the nonconvex model's constraints are violated. A
//! relaxed solution is only accepted once this module says the recovered
//! voltages satisfy the original equations.
//!
//! It also contains brute-force samplers for the exact feasible flow and
//! injection regions of tiny fixed-magnitude networks (two buses / a
//! three-bus chain, two phases each). Those regions are nonconvex; the
//! samplers flag their Pareto-minimal points and a convex-hull oracle
//! checks that the Pareto front of the sampled set agrees with the Pareto
//! front of its convex hull — the geometric fact that makes the
//! semidefinite relaxation of such networks tight for monotone objectives.

use crate::netmodel::{BusId, Indexing, ModelError, Network};
use crate::{C64, CMat, CVec};

// ---------------------------------------------------------------------------
// Operating points
// ---------------------------------------------------------------------------

/// A steady-state operating point derived from a stacked voltage vector.
///
/// Everything is per-unit. Injected currents are defined as `i = Y v`, so
/// Ohm's law on the lines holds by construction and verification
/// concentrates on the bus balances and operating limits. DG setpoints are
/// *recovered* from the balances at DG buses: whatever active/reactive
/// power the balance requires beyond the local demand is attributed to the
/// unit.
#[derive(Clone, Debug)]
pub struct OperatingPoint {
    /// Stacked bus voltages (indexing order).
    pub v: CVec,
    /// Injected currents `i = Y v`.
    pub i: CVec,
    /// Injected complex powers `s_k = v_k * conj(i_k)` per stacked index.
    pub s: CVec,
    /// Recovered DG active output per phase, aligned with `net.dg`
    /// (entries indexed by [`crate::netmodel::Phase::index`]).
    pub dg_p: Vec<[f64; 3]>,
    /// Recovered DG reactive output per phase, aligned with `net.dg`.
    pub dg_q: Vec<[f64; 3]>,
    /// Active power drawn at the PCC (sum over its phases).
    pub p0: f64,
    /// Reactive power drawn at the PCC (sum over its phases).
    pub q0: f64,
    /// Total recovered DG active output.
    pub pg_total: f64,
    /// Total active losses, `Σ (P_{m→n} + P_{n→m})` over all segments.
    pub p_loss: f64,
}

impl OperatingPoint {
    /// Builds the operating point implied by a voltage vector.
    pub fn from_voltages(net: &Network, idx: &Indexing, v: CVec) -> OperatingPoint {
        assert_eq!(v.len(), idx.total(), "voltage vector dimension mismatch");
        let y = net.ybus(idx);
        let i = &y * &v;
        let s = CVec::from_fn(v.len(), |k, _| v[k] * i[k].conj());

        let mut dg_p = Vec::with_capacity(net.dg.len());
        let mut dg_q = Vec::with_capacity(net.dg.len());
        let mut pg_total = 0.0;
        for d in &net.dg {
            let bus = net.bus(d.bus).expect("validated");
            let mut p = [0.0; 3];
            let mut q = [0.0; 3];
            for phase in bus.phases.iter() {
                let k = idx.index_of(d.bus, phase);
                let vmag2 = v[k].norm_sqr();
                let pi = phase.index();
                p[pi] = s[k].re + bus.p_load[pi];
                q[pi] = s[k].im + bus.q_load[pi] - bus.y_cap[pi] * vmag2;
                pg_total += p[pi];
            }
            dg_p.push(p);
            dg_q.push(q);
        }

        let (mut p0, mut q0) = (0.0, 0.0);
        for k in idx.bus_span(net.pcc) {
            p0 += s[k].re;
            q0 += s[k].im;
        }

        let mut p_loss = 0.0;
        for l in &net.lines {
            let (fwd, rev) = line_flows(net, idx, l, &v);
            p_loss += fwd + rev;
        }

        OperatingPoint {
            v,
            i,
            s,
            dg_p,
            dg_q,
            p0,
            q0,
            pg_total,
            p_loss,
        }
    }
}

/// Active power entering a segment at each end: `(P_{m→n}, P_{n→m})`,
/// where the current used at each end includes that end's half of the
/// segment shunt (which contributes nothing to the active part).
pub fn line_flows(net: &Network, idx: &Indexing, line: &crate::netmodel::Line, v: &CVec) -> (f64, f64) {
    let fp = net.bus(line.from).expect("validated").phases;
    let tp = net.bus(line.to).expect("validated").phases;
    let vf = CVec::from_iterator(fp.len(), idx.bus_span(line.from).map(|k| v[k]));
    let vt = CVec::from_iterator(tp.len(), idx.bus_span(line.to).map(|k| v[k]));
    let i_f = net.line_current(line, &vf, fp, &vt, tp);
    let i_t = net.line_current(line, &vt, tp, &vf, fp);
    let vfl = crate::netmodel::select_phases(&vf, fp, line.phases);
    let vtl = crate::netmodel::select_phases(&vt, tp, line.phases);
    let fwd: f64 = (0..line.phases.len())
        .map(|r| (vfl[r] * i_f[r].conj()).re)
        .sum();
    let rev: f64 = (0..line.phases.len())
        .map(|r| (vtl[r] * i_t[r].conj()).re)
        .sum();
    (fwd, rev)
}

/// Series current magnitude per line phase (shunts excluded), plus neutral
/// current magnitudes if the segment kept a neutral model.
fn series_current_mags(
    net: &Network,
    idx: &Indexing,
    line: &crate::netmodel::Line,
    v: &CVec,
) -> (Vec<f64>, Vec<f64>) {
    let fp = net.bus(line.from).expect("validated").phases;
    let tp = net.bus(line.to).expect("validated").phases;
    let vf = CVec::from_iterator(fp.len(), idx.bus_span(line.from).map(|k| v[k]));
    let vt = CVec::from_iterator(tp.len(), idx.bus_span(line.to).map(|k| v[k]));
    let vfl = crate::netmodel::select_phases(&vf, fp, line.phases);
    let vtl = crate::netmodel::select_phases(&vt, tp, line.phases);
    let y = crate::netmodel::series_admittance(&line.z).expect("validated");
    let i_series = &y * (&vfl - &vtl);
    let phase_mags: Vec<f64> = i_series.iter().map(|c| c.norm()).collect();
    let neutral_mags = match &line.neutral {
        Some(nm) => (&nm.t * &i_series).iter().map(|c| c.norm()).collect(),
        None => Vec::new(),
    };
    (phase_mags, neutral_mags)
}

// ---------------------------------------------------------------------------
// Residual checking
// ---------------------------------------------------------------------------

/// Tolerances used when deciding whether an operating point passes.
#[derive(Copy, Clone, Debug)]
pub struct CheckTolerances {
    /// Maximum complex balance residual at load buses, per-unit.
    pub balance: f64,
    /// Maximum PCC voltage pinning error, per-unit.
    pub pcc: f64,
    /// Maximum violation of any inequality limit, per-unit.
    pub limits: f64,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        CheckTolerances {
            balance: 1e-6,
            pcc: 1e-6,
            limits: 1e-6,
        }
    }
}

/// Outcome of checking an operating point against the nonconvex model.
///
/// All violation entries are nonnegative distances (zero when satisfied).
#[derive(Clone, Debug)]
pub struct ResidualReport {
    /// `|v_k conj(i_k) - s_required,k|` per stacked index for load buses;
    /// zero at the PCC and at DG buses (their balances define the
    /// recovered quantities instead).
    pub balance_abs: Vec<f64>,
    /// Voltage-band violation per stacked index.
    pub voltage_violation: Vec<f64>,
    /// DG box violation per unit per phase, aligned with `net.dg`.
    pub dg_box_violation: Vec<[f64; 3]>,
    /// Worst ampacity violation per line (phase and neutral conductors).
    pub current_violation: Vec<f64>,
    /// Loss-cap violation per line.
    pub loss_cap_violation: Vec<f64>,
    /// Worst `|V_pcc^φ - v0^φ|`.
    pub pcc_voltage_error: f64,
}

impl ResidualReport {
    /// Largest balance residual.
    pub fn max_balance(&self) -> f64 {
        self.balance_abs.iter().copied().fold(0.0, f64::max)
    }

    /// Mean balance residual over load-bus entries (all entries count;
    /// definitionally-zero ones simply contribute zero).
    pub fn mean_balance(&self) -> f64 {
        if self.balance_abs.is_empty() {
            0.0
        } else {
            self.balance_abs.iter().sum::<f64>() / self.balance_abs.len() as f64
        }
    }

    /// Largest violation of any inequality limit.
    pub fn max_limit_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for &x in &self.voltage_violation {
            worst = worst.max(x);
        }
        for v in &self.dg_box_violation {
            for &x in v {
                worst = worst.max(x);
            }
        }
        for &x in &self.current_violation {
            worst = worst.max(x);
        }
        for &x in &self.loss_cap_violation {
            worst = worst.max(x);
        }
        worst
    }

    /// Whether the operating point satisfies the model within tolerances.
    pub fn passes(&self, tol: &CheckTolerances) -> bool {
        self.max_balance() <= tol.balance
            && self.pcc_voltage_error <= tol.pcc
            && self.max_limit_violation() <= tol.limits
    }

    /// Human-readable issue list for everything beyond the tolerances.
    pub fn issues(&self, net: &Network, idx: &Indexing, tol: &CheckTolerances) -> Vec<String> {
        let mut out = Vec::new();
        for (k, &r) in self.balance_abs.iter().enumerate() {
            if r > tol.balance {
                let (bus, phase) = idx.decompose(k);
                out.push(format!("balance residual {r:.3e} pu at bus {bus} phase {phase}"));
            }
        }
        if self.pcc_voltage_error > tol.pcc {
            out.push(format!(
                "PCC voltage deviates from its fixed value by {:.3e} pu",
                self.pcc_voltage_error
            ));
        }
        for (k, &x) in self.voltage_violation.iter().enumerate() {
            if x > tol.limits {
                let (bus, phase) = idx.decompose(k);
                out.push(format!("voltage band violated by {x:.3e} pu at bus {bus} phase {phase}"));
            }
        }
        for (u, v) in self.dg_box_violation.iter().enumerate() {
            for (pi, &x) in v.iter().enumerate() {
                if x > tol.limits {
                    out.push(format!(
                        "DG box violated by {x:.3e} pu at bus {} phase {}",
                        net.dg[u].bus,
                        crate::netmodel::Phase::ALL[pi]
                    ));
                }
            }
        }
        for (k, &x) in self.current_violation.iter().enumerate() {
            if x > tol.limits {
                out.push(format!(
                    "ampacity violated by {x:.3e} pu on line {}-{}",
                    net.lines[k].from, net.lines[k].to
                ));
            }
        }
        for (k, &x) in self.loss_cap_violation.iter().enumerate() {
            if x > tol.limits {
                out.push(format!(
                    "loss cap violated by {x:.3e} pu on line {}-{}",
                    net.lines[k].from, net.lines[k].to
                ));
            }
        }
        out
    }
}

/// Checks a voltage vector against the nonconvex steady-state model.
///
/// The injected currents are `i = Y v` (so the line equations hold by
/// construction); residuals measure the bus power balances at load buses,
/// box violations of the recovered DG setpoints, the PCC voltage pinning,
/// the voltage bands, ampacities, and per-line loss caps. This routine
/// never fails: it reports.
pub fn check_operating_point(net: &Network, idx: &Indexing, op: &OperatingPoint) -> ResidualReport {
    let n = idx.total();
    let mut balance_abs = vec![0.0; n];
    let mut voltage_violation = vec![0.0; n];

    let dg_bus = |id: BusId| net.dg_at(id).is_some();

    for bus in &net.buses {
        for phase in bus.phases.iter() {
            let k = idx.index_of(bus.id, phase);
            let vmag = op.v[k].norm();
            voltage_violation[k] = (bus.v_min - vmag).max(vmag - bus.v_max).max(0.0);
            if bus.id == net.pcc || dg_bus(bus.id) {
                continue;
            }
            let pi = phase.index();
            let required = C64::new(
                -bus.p_load[pi],
                -bus.q_load[pi] + bus.y_cap[pi] * op.v[k].norm_sqr(),
            );
            balance_abs[k] = (op.s[k] - required).norm();
        }
    }

    let mut dg_box_violation = vec![[0.0; 3]; net.dg.len()];
    for (u, d) in net.dg.iter().enumerate() {
        let bus = net.bus(d.bus).expect("validated");
        for phase in bus.phases.iter() {
            let pi = phase.index();
            let p = op.dg_p[u][pi];
            let q = op.dg_q[u][pi];
            let viol_p = (d.p_min - p).max(p - d.p_max).max(0.0);
            let viol_q = (d.q_min - q).max(q - d.q_max).max(0.0);
            dg_box_violation[u][pi] = viol_p.max(viol_q);
        }
    }

    let mut current_violation = vec![0.0f64; net.lines.len()];
    let mut loss_cap_violation = vec![0.0f64; net.lines.len()];
    for (k, l) in net.lines.iter().enumerate() {
        if l.i_max.is_some() || l.neutral.as_ref().is_some_and(|nm| nm.i_max.is_some()) {
            let (phase_mags, neutral_mags) = series_current_mags(net, idx, l, &op.v);
            if let Some(imax) = l.i_max {
                for m in phase_mags {
                    current_violation[k] = current_violation[k].max(m - imax).max(0.0);
                }
            }
            if let Some(nm) = &l.neutral {
                if let Some(imax) = nm.i_max {
                    for m in neutral_mags {
                        current_violation[k] = current_violation[k].max(m - imax).max(0.0);
                    }
                }
            }
        }
        if let Some(cap) = l.loss_cap {
            let (fwd, rev) = line_flows(net, idx, l, &op.v);
            loss_cap_violation[k] = (fwd + rev - cap).max(0.0);
        }
    }

    let pcc_phases = net.bus(net.pcc).expect("validated").phases;
    let mut pcc_voltage_error = 0.0f64;
    for (r, phase) in pcc_phases.iter().enumerate() {
        let k = idx.index_of(net.pcc, phase);
        pcc_voltage_error = pcc_voltage_error.max((op.v[k] - net.v0[r]).norm());
    }

    ResidualReport {
        balance_abs,
        voltage_violation,
        dg_box_violation,
        current_violation,
        loss_cap_violation,
        pcc_voltage_error,
    }
}

// ---------------------------------------------------------------------------
// Physical quantity reporting
// ---------------------------------------------------------------------------

/// Flow summary for one segment, in MW.
#[derive(Clone, Debug)]
pub struct LineFlowReport {
    /// `from` end bus id.
    pub from: BusId,
    /// `to` end bus id.
    pub to: BusId,
    /// Active power entering the segment at the `from` end, MW.
    pub p_fwd_mw: f64,
    /// Active power entering the segment at the `to` end, MW.
    pub p_rev_mw: f64,
    /// Active power dissipated on the segment, MW.
    pub loss_mw: f64,
}

/// Physical quantities implied by an operating point, in engineering units
/// (MW / Mvar / $), derived from the per-unit state via the network base.
#[derive(Clone, Debug)]
pub struct Quantities {
    /// Active power drawn at the PCC, MW (sum over phases).
    pub p0_mw: f64,
    /// Reactive power drawn at the PCC, Mvar.
    pub q0_mvar: f64,
    /// Total DG active output, MW.
    pub pg_mw: f64,
    /// Per-unit totals: `(bus, P_G MW, Q_G Mvar)` per DG unit.
    pub per_dg: Vec<(BusId, f64, f64)>,
    /// Total active demand, MW.
    pub p_load_mw: f64,
    /// Total active losses, MW.
    pub p_loss_mw: f64,
    /// Loss objective value (equals `p_loss_mw`).
    pub c1_mw: f64,
    /// Supply-cost objective `c0 * P0 + Σ cost_s * P_{G,s}` in $, when the
    /// PCC price is known.
    pub c2_dollars: Option<f64>,
    /// Smallest voltage magnitude, per-unit.
    pub v_mag_min: f64,
    /// Largest voltage magnitude, per-unit.
    pub v_mag_max: f64,
    /// Per-segment flows.
    pub line_flows: Vec<LineFlowReport>,
    /// `P0 + PG - P_load - P_loss` in MW; ~0 for a balanced point.
    pub energy_balance_mw: f64,
}

/// Computes the physical quantities implied by an operating point.
pub fn report_quantities(net: &Network, idx: &Indexing, op: &OperatingPoint) -> Quantities {
    let mw = net.base.s_va / 1e6;
    let (p_load_pu, _) = net.total_load();

    let per_dg: Vec<(BusId, f64, f64)> = net
        .dg
        .iter()
        .enumerate()
        .map(|(u, d)| {
            let p: f64 = op.dg_p[u].iter().sum();
            let q: f64 = op.dg_q[u].iter().sum();
            (d.bus, p * mw, q * mw)
        })
        .collect();

    let line_flows: Vec<LineFlowReport> = net
        .lines
        .iter()
        .map(|l| {
            let (fwd, rev) = line_flows(net, idx, l, &op.v);
            LineFlowReport {
                from: l.from,
                to: l.to,
                p_fwd_mw: fwd * mw,
                p_rev_mw: rev * mw,
                loss_mw: (fwd + rev) * mw,
            }
        })
        .collect();

    let c2_dollars = net.c0.map(|c0| {
        let dg_cost: f64 = net
            .dg
            .iter()
            .enumerate()
            .map(|(u, d)| d.cost * op.dg_p[u].iter().sum::<f64>() * mw)
            .sum();
        c0 * op.p0 * mw + dg_cost
    });

    let mags: Vec<f64> = op.v.iter().map(|c| c.norm()).collect();
    Quantities {
        p0_mw: op.p0 * mw,
        q0_mvar: op.q0 * mw,
        pg_mw: op.pg_total * mw,
        per_dg,
        p_load_mw: p_load_pu * mw,
        p_loss_mw: op.p_loss * mw,
        c1_mw: op.p_loss * mw,
        c2_dollars,
        v_mag_min: mags.iter().copied().fold(f64::INFINITY, f64::min),
        v_mag_max: mags.iter().copied().fold(0.0, f64::max),
        line_flows,
        energy_balance_mw: (op.p0 + op.pg_total - p_load_pu - op.p_loss) * mw,
    }
}

// ---------------------------------------------------------------------------
// Feasible-region sampling
// ---------------------------------------------------------------------------

/// An inclusive angle grid in degrees.
#[derive(Copy, Clone, Debug)]
pub struct AngleGrid {
    /// Lower endpoint, degrees.
    pub min_deg: f64,
    /// Upper endpoint, degrees.
    pub max_deg: f64,
    /// Number of sample points (≥ 1; a single point sits at `min_deg`).
    pub steps: usize,
}

impl AngleGrid {
    /// New grid; `steps` is clamped to at least one point.
    pub fn new(min_deg: f64, max_deg: f64, steps: usize) -> Self {
        AngleGrid {
            min_deg,
            max_deg,
            steps: steps.max(1),
        }
    }

    /// The sampled values in degrees.
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.min_deg];
        }
        let h = (self.max_deg - self.min_deg) / (self.steps - 1) as f64;
        (0..self.steps).map(|k| self.min_deg + h * k as f64).collect()
    }
}

/// A sampled feasible region with Pareto-minimal flags.
#[derive(Clone, Debug)]
pub struct RegionSample {
    /// Names of the sampled angles (degrees), one per angle column.
    pub angle_names: Vec<String>,
    /// Names of the resulting point coordinates.
    pub axis_names: Vec<String>,
    /// Angle tuples, one row per sample.
    pub angles: Vec<Vec<f64>>,
    /// Resulting points (flows or injections), one row per sample.
    pub points: Vec<Vec<f64>>,
    /// Componentwise Pareto-minimality flag per sample.
    pub pareto: Vec<bool>,
    /// Grid steps used per angle axis (for cell-size estimates).
    pub angle_steps: Vec<usize>,
}

impl RegionSample {
    /// Rough size of one "grid cell" in point space: per point axis, the
    /// axis range divided by the smallest non-trivial angle-grid step
    /// count. Used as the tolerance for hull-consistency checks.
    pub fn default_cell(&self) -> Vec<f64> {
        let denom = self
            .angle_steps
            .iter()
            .copied()
            .filter(|&s| s > 1)
            .min()
            .unwrap_or(2)
            .saturating_sub(1)
            .max(1) as f64;
        (0..self.axis_names.len())
            .map(|k| {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for p in &self.points {
                    lo = lo.min(p[k]);
                    hi = hi.max(p[k]);
                }
                if hi > lo {
                    (hi - lo) / denom
                } else {
                    1e-9
                }
            })
            .collect()
    }

    /// Restricts the sample to points whose `axis` coordinate lies within
    /// `tol` of `value`, drops that coordinate, and re-flags Pareto
    /// minimality on the remaining coordinates.
    pub fn slice_at(&self, axis: usize, value: f64, tol: f64) -> RegionSample {
        assert!(axis < self.axis_names.len(), "axis out of range");
        let mut angles = Vec::new();
        let mut points = Vec::new();
        for (a, p) in self.angles.iter().zip(self.points.iter()) {
            if (p[axis] - value).abs() <= tol {
                angles.push(a.clone());
                let mut q = p.clone();
                q.remove(axis);
                points.push(q);
            }
        }
        let pareto = pareto_min_flags(&points);
        let mut axis_names = self.axis_names.clone();
        axis_names.remove(axis);
        RegionSample {
            angle_names: self.angle_names.clone(),
            axis_names,
            angles,
            points,
            pareto,
            angle_steps: self.angle_steps.clone(),
        }
    }
}

/// Largest angle difference (degrees) across a line for which the
/// per-phase active flow stays monotone in the angle: the impedance angle
/// `atan(x/r)` of the line's self term. Beyond it, pushing the angle no
/// longer trades losses for transfer in the same direction, so feasible
/// regions sampled inside `±bound` keep their Pareto front on the convex
/// boundary. Injection-region sampling uses it as the default angle box.
pub fn decoupling_angle_bound_deg(z: &CMat) -> f64 {
    let z11 = z[(0, 0)];
    (z11.im / z11.re).atan().abs().to_degrees()
}

fn two_phase_voltage(v_mag: f64, theta_a_deg: f64, pp_deg: f64) -> CVec {
    let ta = theta_a_deg.to_radians();
    let tb = (theta_a_deg - pp_deg).to_radians();
    CVec::from_vec(vec![
        C64::new(v_mag * ta.cos(), v_mag * ta.sin()),
        C64::new(v_mag * tb.cos(), v_mag * tb.sin()),
    ])
}

/// Samples the exact feasible flow region `(P_{1→2}, P_{2→1})` of a single
/// two-phase line with fixed voltage magnitudes at both ends.
///
/// Angles sampled: the angle difference on phase `a` across the line
/// (`line_angle`), and each end's phase-`a`-to-phase-`b` angle (`pp1`,
/// `pp2`). Phase `a` of bus 1 is the reference. Flows are computed from
/// the exact nonconvex expressions; no shunts are modeled.
pub fn sample_line_flow_region(
    z: &CMat,
    v_mag: f64,
    line_angle: &AngleGrid,
    pp1: &AngleGrid,
    pp2: &AngleGrid,
) -> Result<RegionSample, ModelError> {
    assert_eq!(z.nrows(), 2, "two-phase line expected");
    assert_eq!(z.ncols(), 2, "two-phase line expected");
    let y = crate::netmodel::series_admittance(z)?;
    let mut angles = Vec::new();
    let mut points = Vec::new();
    for t12 in line_angle.values() {
        for a1 in pp1.values() {
            for a2 in pp2.values() {
                let v1 = two_phase_voltage(v_mag, 0.0, a1);
                let v2 = two_phase_voltage(v_mag, -t12, a2);
                let d12 = &v1 - &v2;
                let p12: f64 = (&y * &d12)
                    .iter()
                    .zip(v1.iter())
                    .map(|(i, v)| (v * i.conj()).re)
                    .sum();
                let d21 = &v2 - &v1;
                let p21: f64 = (&y * &d21)
                    .iter()
                    .zip(v2.iter())
                    .map(|(i, v)| (v * i.conj()).re)
                    .sum();
                angles.push(vec![t12, a1, a2]);
                points.push(vec![p12, p21]);
            }
        }
    }
    let pareto = pareto_min_flags(&points);
    Ok(RegionSample {
        angle_names: vec![
            "theta_12_a_deg".into(),
            "theta_1_ab_deg".into(),
            "theta_2_ab_deg".into(),
        ],
        axis_names: vec!["p_1_to_2".into(), "p_2_to_1".into()],
        angles,
        points,
        pareto,
        angle_steps: vec![line_angle.steps, pp1.steps, pp2.steps],
    })
}

/// Samples the exact feasible injection region `(P₁, P₂, P₃)` of a
/// three-bus, two-phase chain `1 - 2 - 3` with fixed voltage magnitudes,
/// where `P_n` is the total (both-phase) active power injected at bus `n`.
pub fn sample_injection_region(
    z12: &CMat,
    z23: &CMat,
    v_mag: f64,
    line12: &AngleGrid,
    line23: &AngleGrid,
    pp: [&AngleGrid; 3],
) -> Result<RegionSample, ModelError> {
    assert_eq!(z12.nrows(), 2, "two-phase chain expected");
    assert_eq!(z23.nrows(), 2, "two-phase chain expected");
    let y12 = crate::netmodel::series_admittance(z12)?;
    let y23 = crate::netmodel::series_admittance(z23)?;
    let mut angles = Vec::new();
    let mut points = Vec::new();
    for t12 in line12.values() {
        for t23 in line23.values() {
            for a1 in pp[0].values() {
                for a2 in pp[1].values() {
                    for a3 in pp[2].values() {
                        let v1 = two_phase_voltage(v_mag, 0.0, a1);
                        let v2 = two_phase_voltage(v_mag, -t12, a2);
                        let v3 = two_phase_voltage(v_mag, -t12 - t23, a3);
                        let i1 = &y12 * (&v1 - &v2);
                        let i2 = &y12 * (&v2 - &v1) + &y23 * (&v2 - &v3);
                        let i3 = &y23 * (&v3 - &v2);
                        let p = |v: &CVec, i: &CVec| -> f64 {
                            v.iter().zip(i.iter()).map(|(v, i)| (v * i.conj()).re).sum()
                        };
                        angles.push(vec![t12, t23, a1, a2, a3]);
                        points.push(vec![p(&v1, &i1), p(&v2, &i2), p(&v3, &i3)]);
                    }
                }
            }
        }
    }
    let pareto = pareto_min_flags(&points);
    Ok(RegionSample {
        angle_names: vec![
            "theta_12_a_deg".into(),
            "theta_23_a_deg".into(),
            "theta_1_ab_deg".into(),
            "theta_2_ab_deg".into(),
            "theta_3_ab_deg".into(),
        ],
        axis_names: vec!["p_1".into(), "p_2".into(), "p_3".into()],
        angles,
        points,
        pareto,
        angle_steps: vec![line12.steps, line23.steps, pp[0].steps, pp[1].steps, pp[2].steps],
    })
}

// ---------------------------------------------------------------------------
// Pareto minimality and convex-hull domination
// ---------------------------------------------------------------------------

/// Flags the componentwise Pareto-minimal points of a finite set.
///
/// `p` is dominated when some `q` satisfies `q ≤ p` in every coordinate
/// with at least one strict inequality. Exact comparisons are used, so the
/// result is deterministic and independent of input order; duplicate
/// minimal points are all flagged.
pub fn pareto_min_flags(points: &[Vec<f64>]) -> Vec<bool> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    // Lexicographic order: a dominator always sorts no later than its victim,
    // and every dominated point is dominated by some minimal point
    // (dominance is transitive), so scanning in order and testing against
    // the running minimal set is exhaustive.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(points[b].iter())
            .map(|(x, y)| x.partial_cmp(y).expect("non-finite region point"))
            .find(|c| !c.is_eq())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let dominates = |q: &[f64], p: &[f64]| -> bool {
        let mut strict = false;
        for (x, y) in q.iter().zip(p.iter()) {
            if x > y {
                return false;
            }
            if x < y {
                strict = true;
            }
        }
        strict
    };
    let mut flags = vec![false; n];
    let mut minimal: Vec<usize> = Vec::new();
    for &k in &order {
        if minimal.iter().any(|&m| dominates(&points[m], &points[k])) {
            continue;
        }
        flags[k] = true;
        minimal.push(k);
    }
    flags
}

/// Decides whether the convex hull of `points` contains a point that
/// dominates `target` by at least `margin` in every coordinate, i.e.
/// whether `{x ∈ hull : x ≤ target - margin}` is nonempty.
///
/// Solved exactly as a small phase-I simplex over the convex weights.
pub fn hull_contains_dominator(points: &[Vec<f64>], target: &[f64], margin: &[f64]) -> bool {
    let d = target.len();
    let n = points.len();
    if n == 0 {
        return false;
    }
    // Feasibility of: λ ≥ 0, Σλ = 1, Σ λ_i x_i + s = target - margin, s ≥ 0.
    // Tableau columns: n weights, d slacks, d+1 artificials, rhs.
    let rows = d + 1;
    let cols = n + d + rows;
    let mut t = vec![vec![0.0f64; cols + 1]; rows];
    for r in 0..d {
        let rhs = target[r] - margin[r];
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        for (i, p) in points.iter().enumerate() {
            t[r][i] = sign * p[r];
        }
        t[r][n + r] = sign; // slack
        t[r][cols] = sign * rhs;
    }
    for i in 0..n {
        t[d][i] = 1.0;
    }
    t[d][cols] = 1.0;
    let mut basis = vec![0usize; rows];
    for r in 0..rows {
        t[r][n + d + r] = 1.0;
        basis[r] = n + d + r;
    }
    // Phase-I objective: minimize the sum of artificials. Start from the
    // canonical form where the objective row is the negated sum of all
    // constraint rows over non-artificial columns.
    let mut obj = vec![0.0f64; cols + 1];
    for r in 0..rows {
        for j in 0..=cols {
            obj[j] -= t[r][j];
        }
    }
    for r in 0..rows {
        obj[n + d + r] = 0.0;
    }

    let eps = 1e-9;
    let max_pivots = 50 * (cols + rows);
    for _ in 0..max_pivots {
        // Bland's rule: smallest-index column with a negative reduced cost.
        let Some(enter) = (0..cols).find(|&j| obj[j] < -eps) else {
            break;
        };
        // Ratio test (Bland tie-break on basis index).
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for r in 0..rows {
            if t[r][enter] > eps {
                let ratio = t[r][cols] / t[r][enter];
                if ratio < best - eps
                    || (ratio < best + eps
                        && leave.is_some_and(|l| basis[r] < basis[l]))
                {
                    best = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(lr) = leave else {
            // Unbounded phase-I cannot happen (objective bounded below by 0);
            // bail out conservatively.
            break;
        };
        let piv = t[lr][enter];
        for j in 0..=cols {
            t[lr][j] /= piv;
        }
        for r in 0..rows {
            if r != lr && t[r][enter].abs() > 0.0 {
                let f = t[r][enter];
                for j in 0..=cols {
                    t[r][j] -= f * t[lr][j];
                }
            }
        }
        let f = obj[enter];
        if f.abs() > 0.0 {
            for j in 0..=cols {
                obj[j] -= f * t[lr][j];
            }
        }
        basis[lr] = enter;
    }
    // Feasible iff all artificials were driven to ~zero: the phase-I
    // objective value is -obj[cols].
    (-obj[cols]).abs() <= 1e-7
}

/// Result of comparing the sampled Pareto front with the Pareto front of
/// the samples' convex hull.
#[derive(Clone, Debug)]
pub struct HullCheck {
    /// True when no flagged Pareto point is dominated by the hull by more
    /// than one grid cell.
    pub consistent: bool,
    /// Number of Pareto-flagged points examined.
    pub pareto_count: usize,
    /// Flagged points that the hull dominates beyond tolerance.
    pub offenders: usize,
}

/// Checks that every Pareto-minimal sample is within one grid cell of the
/// Pareto front of the convex hull of all samples: the hull must not
/// contain any point dominating a flagged sample by more than `cell`.
pub fn hull_pareto_consistency(sample: &RegionSample, cell: &[f64]) -> HullCheck {
    // Every sampled point is dominated by (or equals) some Pareto-minimal
    // sample, so a convex combination that dominates a target can always be
    // rebuilt from Pareto-minimal points alone: restricting the hull to the
    // Pareto subset loses nothing and keeps the feasibility LPs small.
    let candidates: Vec<Vec<f64>> = sample
        .points
        .iter()
        .zip(sample.pareto.iter())
        .filter(|(_, &f)| f)
        .map(|(p, _)| p.clone())
        .collect();
    let mut offenders = 0;
    let mut pareto_count = 0;
    for (k, &flag) in sample.pareto.iter().enumerate() {
        if !flag {
            continue;
        }
        pareto_count += 1;
        if hull_contains_dominator(&candidates, &sample.points[k], cell) {
            offenders += 1;
        }
    }
    HullCheck {
        consistent: offenders == 0,
        pareto_count,
        offenders,
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{DgUnit, Phase};
    use crate::testutil::{backfill_loads, path_network};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn flat_no_load_profile_has_zero_residuals() {
        let net = path_network(4);
        let idx = net.indexing();
        let v = net.nominal_profile(&idx);
        let op = OperatingPoint::from_voltages(&net, &idx, v);
        let report = check_operating_point(&net, &idx, &op);
        assert!(report.max_balance() < 1e-12);
        assert!(report.pcc_voltage_error < 1e-12);
        assert!(report.max_limit_violation() == 0.0);
        assert!(report.passes(&CheckTolerances::default()));
        let q = report_quantities(&net, &idx, &op);
        assert!(q.p_loss_mw.abs() < 1e-12);
        assert!(q.p0_mw.abs() < 1e-12);
    }

    #[test]
    fn backfilled_point_passes_and_balances_energy() {
        let mut net = path_network(5);
        let idx = net.indexing();
        // A mildly stressed profile: sagging magnitudes, drifting angles.
        let mut v = net.nominal_profile(&idx);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for k in 0..v.len() {
            let mag: f64 = 1.0 - rng.gen_range(0.0..0.06);
            let rot: f64 = rng.gen_range(-0.05..0.05);
            v[k] *= C64::new(mag * rot.cos(), mag * rot.sin());
        }
        // Keep the PCC span pinned to v0.
        for (r, phase) in net.bus(net.pcc).unwrap().phases.iter().enumerate() {
            v[idx.index_of(net.pcc, phase)] = net.v0[r];
        }
        backfill_loads(&mut net, &v);
        let op = OperatingPoint::from_voltages(&net, &idx, v);
        let report = check_operating_point(&net, &idx, &op);
        assert!(report.max_balance() < 1e-12, "backfilled balances must be exact");
        assert!(report.passes(&CheckTolerances::default()));
        let q = report_quantities(&net, &idx, &op);
        assert!(
            q.energy_balance_mw.abs() < 1e-9,
            "P0 + PG - load - loss = {}",
            q.energy_balance_mw
        );
        assert!(q.p_loss_mw > 0.0, "a stressed profile must dissipate");
    }

    #[test]
    fn perturbation_localizes_to_adjacent_buses() {
        let mut net = path_network(5);
        let idx = net.indexing();
        let v0_profile = net.nominal_profile(&idx);
        backfill_loads(&mut net, &v0_profile);
        let mut v = v0_profile;
        // Perturb one phase of bus 1; only buses 0, 1, 2 see it.
        let k = idx.index_of(BusId(1), Phase::A);
        v[k] += c(0.1, 0.0);
        let op = OperatingPoint::from_voltages(&net, &idx, v);
        let report = check_operating_point(&net, &idx, &op);
        let worst_at = |b: usize| -> f64 {
            idx.bus_span(BusId(b))
                .map(|k| report.balance_abs[k])
                .fold(0.0, f64::max)
        };
        assert!(worst_at(1) > 1e-3, "perturbed bus must show a residual");
        assert!(worst_at(2) > 1e-6, "neighbor must show a residual");
        assert!(worst_at(3) < 1e-12, "non-adjacent bus must stay clean");
        assert!(worst_at(4) < 1e-12, "far bus must stay clean");
    }

    #[test]
    fn dg_recovery_and_box_checks() {
        let mut net = path_network(3);
        net.dg.push(DgUnit {
            bus: BusId(2),
            p_min: 0.0,
            p_max: 0.05,
            q_min: 0.0,
            q_max: 0.0,
            cost: 10.0,
        });
        let idx = net.indexing();
        let v = net.nominal_profile(&idx);
        // Flat profile, no loads: recovered DG output is exactly zero,
        // inside the box.
        let op = OperatingPoint::from_voltages(&net, &idx, v.clone());
        assert!(op.dg_p[0].iter().all(|&p| p.abs() < 1e-12));
        let report = check_operating_point(&net, &idx, &op);
        assert!(report.passes(&CheckTolerances::default()));

        // Now demand flows: make bus 2 export by lifting its voltage.
        let mut v2 = v;
        for k in idx.bus_span(BusId(2)) {
            v2[k] *= c(1.05, 0.0);
        }
        let op2 = OperatingPoint::from_voltages(&net, &idx, v2);
        let report2 = check_operating_point(&net, &idx, &op2);
        // The lifted bus exports real power well beyond p_max = 0.05 pu and
        // draws reactive flow, so the (unity-pf) box must flag violations.
        let viol = report2.dg_box_violation[0];
        assert!(viol[0] > 1e-4 || viol[1] > 1e-4, "box violation expected, got {viol:?}");
    }

    proptest! {
        /// Total injected active power equals total line losses for *any*
        /// voltage profile (conservation holds identically; only the bus
        /// balance equations depend on loads).
        #[test]
        fn injections_equal_losses_for_any_profile(seed in 0u64..100) {
            let net = path_network(4);
            let idx = net.indexing();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = CVec::from_fn(idx.total(), |_, _| {
                c(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2))
            });
            let op = OperatingPoint::from_voltages(&net, &idx, v);
            let total_injection: f64 = op.s.iter().map(|s| s.re).sum();
            prop_assert!(
                (total_injection - op.p_loss).abs() < 1e-10,
                "injections {total_injection} vs losses {}", op.p_loss
            );
        }
    }

    // -- region sampling ----------------------------------------------------

    fn fig_z() -> CMat {
        CMat::from_row_slice(
            2,
            2,
            &[
                c(0.0753, 0.1181),
                c(0.0156, 0.0502),
                c(0.0156, 0.0502),
                c(0.0744, 0.1211),
            ],
        )
    }

    #[test]
    fn single_point_grid_is_pareto() {
        let g1 = AngleGrid::new(30.0, 30.0, 1);
        let gp = AngleGrid::new(120.0, 120.0, 1);
        let s = sample_line_flow_region(&fig_z(), 1.0, &g1, &gp, &gp).unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.pareto, vec![true]);
    }

    #[test]
    fn diagonal_impedance_decouples_phases() {
        // With a diagonal Z the two phases do not interact: the flow is the
        // sum of two independent single-phase flows.
        let z = CMat::from_row_slice(2, 2, &[c(0.1, 0.3), c(0.0, 0.0), c(0.0, 0.0), c(0.1, 0.3)]);
        let g_line = AngleGrid::new(-60.0, 60.0, 7);
        let g_pp = AngleGrid::new(110.0, 130.0, 3);
        let s = sample_line_flow_region(&z, 1.0, &g_line, &g_pp, &g_pp).unwrap();
        let y = c(1.0, 0.0) / c(0.1, 0.3);
        for (ang, p) in s.angles.iter().zip(s.points.iter()) {
            let (t12, a1, a2) = (ang[0], ang[1], ang[2]);
            let flow1 = |th_s: f64, th_r: f64| -> f64 {
                let vs = C64::from_polar(1.0, th_s.to_radians());
                let vr = C64::from_polar(1.0, th_r.to_radians());
                (vs * (y * (vs - vr)).conj()).re
            };
            // Phase a: angles (0, -t12); phase b: (-a1, -t12 - a2).
            let expected = flow1(0.0, -t12) + flow1(-a1, -t12 - a2);
            prop_assert_close(p[0], expected);
        }

        fn prop_assert_close(a: f64, b: f64) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pareto_flags_are_order_independent_and_idempotent() {
        let g1 = AngleGrid::new(-180.0, 180.0, 19);
        let gp = AngleGrid::new(110.0, 130.0, 5);
        let s = sample_line_flow_region(&fig_z(), 1.0, &g1, &gp, &gp).unwrap();
        // Idempotent: restricting to the Pareto subset keeps every point flagged.
        let subset: Vec<Vec<f64>> = s
            .points
            .iter()
            .zip(s.pareto.iter())
            .filter(|(_, &f)| f)
            .map(|(p, _)| p.clone())
            .collect();
        assert!(!subset.is_empty());
        let again = pareto_min_flags(&subset);
        assert!(again.iter().all(|&f| f), "Pareto set must be stable");
        // Order-independent: reverse the points, flags follow the points.
        let mut rev = s.points.clone();
        rev.reverse();
        let rev_flags = pareto_min_flags(&rev);
        let mut expect = s.pareto.clone();
        expect.reverse();
        assert_eq!(rev_flags, expect);
    }

    #[test]
    fn hull_feasibility_oracle_on_known_cases() {
        let tri = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]];
        // (1,1) is dominated by (0,0) ∈ hull.
        assert!(hull_contains_dominator(&tri, &[1.0, 1.0], &[0.0, 0.0]));
        // Nothing in the hull is ≤ (-0.5, -0.5).
        assert!(!hull_contains_dominator(&tri, &[-0.5, -0.5], &[0.0, 0.0]));
        // The origin is a vertex: it cannot be dominated by margin 0.1.
        assert!(!hull_contains_dominator(&tri, &[0.0, 0.0], &[0.1, 0.1]));
        // Midpoint magic: {(2,0),(0,2)} hull contains (1,1).
        let seg = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        assert!(hull_contains_dominator(&seg, &[1.05, 1.05], &[0.0, 0.0]));
        assert!(!hull_contains_dominator(&seg, &[0.95, 0.95], &[0.0, 0.0]));
    }

    #[test]
    fn two_bus_pareto_front_is_hull_consistent() {
        let g1 = AngleGrid::new(-180.0, 180.0, 73);
        let gp = AngleGrid::new(110.0, 130.0, 11);
        let s = sample_line_flow_region(&fig_z(), 1.0, &g1, &gp, &gp).unwrap();
        assert!(s.pareto.iter().any(|&f| f));
        let check = hull_pareto_consistency(&s, &s.default_cell());
        assert!(
            check.consistent,
            "{} of {} Pareto points dominated by hull",
            check.offenders, check.pareto_count
        );
    }

    #[test]
    fn chain_injection_region_and_slice() {
        let z = fig_z();
        let bound = decoupling_angle_bound_deg(&z);
        assert!((bound - 57.48).abs() < 0.05, "impedance angle, got {bound}");
        assert!((bound - 58.0).abs() < 2.0, "decoupling bound ≈ 58°, got {bound}");
        let g_line = AngleGrid::new(-bound, bound, 13);
        let g_pp = AngleGrid::new(110.0, 130.0, 5);
        let s = sample_injection_region(&z, &z, 1.0, &g_line, &g_line, [&g_pp, &g_pp, &g_pp]).unwrap();
        assert_eq!(s.points[0].len(), 3);
        let check = hull_pareto_consistency(&s, &s.default_cell());
        assert!(
            check.consistent,
            "{} of {} Pareto points dominated by hull",
            check.offenders, check.pareto_count
        );
        // Slice at a P1 value that certainly intersects the cloud.
        let p1_values: Vec<f64> = s.points.iter().map(|p| p[0]).collect();
        let mid = 0.5 * (p1_values.iter().copied().fold(f64::INFINITY, f64::min)
            + p1_values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let cell = s.default_cell();
        let sl = s.slice_at(0, mid, cell[0]);
        assert!(!sl.points.is_empty(), "slice through the middle must be nonempty");
        assert_eq!(sl.axis_names, vec!["p_2".to_string(), "p_3".to_string()]);
        assert_eq!(sl.points.len(), sl.pareto.len());
        assert!(sl.pareto.iter().any(|&f| f));
    }
}
