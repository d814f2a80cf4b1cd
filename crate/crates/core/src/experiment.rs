//! Single runs and parameter sweeps, and the files they leave behind.
//!
//! A run writes `result.json` and `trace.jsonl`; a sweep writes `sweep.csv`
//! and `sweep_<axis>.svg`. Wall-clock figures only ever appear under the
//! `timings` key of `result.json`, so everything else is reproducible byte
//! for byte.
//!
//! Along a sweep axis each point also descends from the previous point's
//! solution of the same scheme (power upward, R2 downward, element count
//! upward with the new elements appended), in addition to the usual starts.
//! The previous solution is feasible at the next point on the power and R2
//! axes, so the per-scheme curves are monotone in the expected direction.

use crate::bcd::{run_scheme_from, BcdConfig, OptimizationResult, Scheme, Termination, WarmStart};
use crate::error::{Error, Result};
use crate::profile::{ElementCoefficients, StarRisProfile};
use crate::rate::BeamformerSet;
use crate::scenario::{ScenarioSpec, SweepAxis, SweepSpec};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub const RESULT_FILE: &str = "result.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const SWEEP_CSV: &str = "sweep.csv";

/// Key of `result.json` holding every wall-clock figure.
pub const TIMINGS_KEY: &str = "timings";

#[derive(Serialize)]
struct ResultView<'a> {
    scheme: Scheme,
    termination: Termination,
    converged: bool,
    iterations: usize,
    sum_rate: f64,
    initial_sum_rate: f64,
    users: &'a [crate::rate::UserRate],
    profiles: &'a [StarRisProfile],
    /// `[re, im]` per antenna, one list per stream.
    beams: Vec<Vec<[f64; 2]>>,
    starts: &'a [crate::bcd::StartSummary],
    infeasibility: &'a Option<crate::bcd::InfeasibilityReport>,
    trace: &'a [crate::bcd::IterationTrace],
    timings: &'a crate::bcd::RunTimings,
}

fn beam_view(beams: &BeamformerSet) -> Vec<Vec<[f64; 2]>> {
    beams
        .beams
        .iter()
        .map(|w| w.iter().map(|z| [z.re, z.im]).collect())
        .collect()
}

/// The document written to `result.json`.
pub fn result_json(result: &OptimizationResult) -> Result<Value> {
    let view = ResultView {
        scheme: result.scheme,
        termination: result.termination,
        converged: result.converged(),
        iterations: result.iterations(),
        sum_rate: result.report.sum_rate,
        initial_sum_rate: result.initial_sum_rate,
        users: &result.report.users,
        profiles: &result.profiles,
        beams: beam_view(&result.beams),
        starts: &result.starts,
        infeasibility: &result.infeasibility,
        trace: &result.trace,
        timings: &result.timings,
    };
    Ok(serde_json::to_value(view)?)
}

/// Drop the wall-clock section, leaving what must match across reruns.
pub fn without_timings(mut doc: Value) -> Value {
    if let Value::Object(map) = &mut doc {
        map.remove(TIMINGS_KEY);
    }
    doc
}

/// Write `result.json` and `trace.jsonl` into `dir`, creating it.
pub fn write_run(dir: &Path, result: &OptimizationResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(&result_json(result)?)?;
    text.push('\n');
    std::fs::write(dir.join(RESULT_FILE), text)?;
    let mut lines = String::new();
    for it in &result.trace {
        lines.push_str(&serde_json::to_string(it)?);
        lines.push('\n');
    }
    std::fs::write(dir.join(TRACE_FILE), lines)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub scheme: Scheme,
    pub trial: usize,
    /// `None` when the point failed.
    pub sum_rate: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `converged`, `max_iters`, `infeasible`, or `error: <message>`.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Ordered by axis value, then scheme as listed in the sweep, then trial.
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn rows_for(&self, scheme: Scheme, trial: usize) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.scheme == scheme && r.trial == trial).collect()
    }

    /// Mean sum rate over the successful trials of each point.
    pub fn mean_curve(&self, scheme: Scheme) -> Vec<(f64, Option<f64>)> {
        self.values
            .iter()
            .map(|&v| {
                let ok: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.scheme == scheme && r.axis_value == v)
                    .filter_map(|r| r.sum_rate)
                    .collect();
                let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
                (v, mean)
            })
            .collect()
    }
}

fn row(value: f64, scheme: Scheme, trial: usize, outcome: &Result<OptimizationResult>) -> SweepRow {
    match outcome {
        Ok(r) => SweepRow {
            axis_value: value,
            scheme,
            trial,
            sum_rate: (r.termination != Termination::Infeasible).then_some(r.report.sum_rate),
            converged: r.converged(),
            iterations: r.iterations(),
            status: r.termination.name().into(),
        },
        Err(e) => SweepRow {
            axis_value: value,
            scheme,
            trial,
            sum_rate: None,
            converged: false,
            iterations: 0,
            status: format!("error: {e}"),
        },
    }
}

/// Previous point's solution reshaped to `scenario`: surfaces keep their
/// elements, new elements get the scheme's amplitude (an even split for the
/// proposed scheme) and zero phases.
fn carry_over(result: &OptimizationResult, scenario: &ScenarioSpec, scheme: Scheme) -> WarmStart {
    let profiles = scenario
        .element_counts()
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let old = result.profiles.get(k).map(|p| p.elements.as_slice()).unwrap_or(&[]);
            StarRisProfile {
                elements: (0..n)
                    .map(|i| {
                        old.get(i).copied().unwrap_or_else(|| {
                            let beta = scheme.baseline().map_or(0.5, |b| b.beta_t(i));
                            ElementCoefficients::new(beta, 0.0, 0.0)
                        })
                    })
                    .collect(),
            }
        })
        .collect();
    WarmStart {
        label: "previous_point".into(),
        beams: result.beams.clone(),
        profiles,
    }
}

/// Axis positions in the order the chain visits them.
fn chain_order(axis: SweepAxis, n: usize) -> Vec<usize> {
    match axis {
        // higher thresholds shrink the feasible set
        SweepAxis::R2Threshold => (0..n).rev().collect(),
        SweepAxis::ElementsPerRis | SweepAxis::TransmitPowerDbm => (0..n).collect(),
    }
}

/// One trial: every axis value for every needed scheme.
fn run_chain(scenario: &ScenarioSpec, sweep: &SweepSpec, trial: usize) -> Vec<SweepRow> {
    let seed = sweep.seed_for(scenario.seed, trial);
    let wants_proposed = sweep.schemes.contains(&Scheme::Proposed);
    // The proposed scheme descends from every baseline's output.
    let baselines: Vec<Scheme> = Scheme::ALL
        .into_iter()
        .filter(|s| *s != Scheme::Proposed && (wants_proposed || sweep.schemes.contains(s)))
        .collect();
    let mut previous: HashMap<Scheme, OptimizationResult> = HashMap::new();
    let mut rows = Vec::new();

    for idx in chain_order(sweep.axis, sweep.values.len()) {
        let value = sweep.values[idx];
        let point = sweep.axis.apply(scenario, value).map(|mut s| {
            s.seed = seed;
            s
        });
        let point = match point {
            Ok(p) => p,
            Err(e) => {
                let msg = e.to_string();
                for &scheme in &sweep.schemes {
                    rows.push(row(value, scheme, trial, &Err(Error::Domain(msg.clone()))));
                }
                previous.clear();
                continue;
            }
        };
        let config = BcdConfig::from_scenario(&point);
        let carried = |scheme: Scheme, previous: &HashMap<Scheme, OptimizationResult>| -> Vec<WarmStart> {
            previous
                .get(&scheme)
                .filter(|r| r.termination != Termination::Infeasible)
                .map(|r| vec![carry_over(r, &point, scheme)])
                .unwrap_or_default()
        };

        let mut here: Vec<(Scheme, Result<OptimizationResult>)> = Vec::new();
        for &scheme in &baselines {
            let warm = carried(scheme, &previous);
            here.push((scheme, run_scheme_from(&point, &config, scheme, &warm)));
        }
        if wants_proposed {
            let mut warm: Vec<WarmStart> = here
                .iter()
                .filter_map(|(_, r)| r.as_ref().ok())
                .filter(|r| r.termination != Termination::Infeasible)
                .map(WarmStart::from_result)
                .collect();
            warm.extend(carried(Scheme::Proposed, &previous));
            here.push((Scheme::Proposed, run_scheme_from(&point, &config, Scheme::Proposed, &warm)));
        }

        for &scheme in &sweep.schemes {
            let outcome = &here.iter().find(|(s, _)| *s == scheme).expect("scheme ran").1;
            rows.push(row(value, scheme, trial, outcome));
        }
        previous.clear();
        for (scheme, outcome) in here {
            if let Ok(r) = outcome {
                previous.insert(scheme, r);
            }
        }
    }
    rows
}

/// Run every trial of a sweep. Trials run in parallel; a failed point is
/// recorded with its status and the sweep carries on.
pub fn run_sweep(scenario: &ScenarioSpec, sweep: &SweepSpec) -> Result<SweepOutcome> {
    scenario.validate()?;
    sweep.validate()?;
    let chains: Vec<Vec<SweepRow>> = (0..sweep.trials)
        .into_par_iter()
        .map(|t| run_chain(scenario, sweep, t))
        .collect();
    let value_pos = |v: f64| sweep.values.iter().position(|x| *x == v).expect("value on axis");
    let scheme_pos = |s: Scheme| sweep.schemes.iter().position(|x| *x == s).expect("scheme in sweep");
    let mut rows: Vec<SweepRow> = chains.into_iter().flatten().collect();
    rows.sort_by_key(|r| (value_pos(r.axis_value), scheme_pos(r.scheme), r.trial));
    Ok(SweepOutcome {
        axis: sweep.axis,
        values: sweep.values.clone(),
        schemes: sweep.schemes.clone(),
        rows,
    })
}

/// `v` with 12 significant digits in positional notation.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0.00000000000".into() } else { v.to_string() };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn sweep_csv(outcome: &SweepOutcome) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(["axis_value", "scheme", "trial", "sum_rate", "converged", "iterations", "status"])?;
    for r in &outcome.rows {
        w.write_record([
            format_sig12(r.axis_value),
            r.scheme.name().to_string(),
            r.trial.to_string(),
            r.sum_rate.map(format_sig12).unwrap_or_default(),
            r.converged.to_string(),
            r.iterations.to_string(),
            r.status.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn axis_label(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::ElementsPerRis => "elements per STAR-RIS",
        SweepAxis::TransmitPowerDbm => "transmit power (dBm)",
        SweepAxis::R2Threshold => "R2 threshold (bits/s/Hz), R1 = 2 R2",
    }
}

/// Line plot of the mean sum rate per scheme.
pub fn write_sweep_svg(path: &Path, outcome: &SweepOutcome) -> Result<()> {
    use plotters::prelude::*;

    let plot_err = |e: &dyn std::fmt::Display| Error::Io(std::io::Error::other(e.to_string()));
    let curves: Vec<(Scheme, Vec<(f64, f64)>)> = outcome
        .schemes
        .iter()
        .map(|&s| {
            let pts = outcome
                .mean_curve(s)
                .into_iter()
                .filter_map(|(x, y)| y.map(|y| (x, y)))
                .collect();
            (s, pts)
        })
        .collect();
    let xs = &outcome.values;
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let (x0, x1) = if x0 == x1 { (x0 - 1.0, x1 + 1.0) } else { (x0, x1) };
    let ys: Vec<f64> = curves.iter().flat_map(|(_, c)| c.iter().map(|p| p.1)).collect();
    let (mut y0, mut y1) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if ys.is_empty() {
        (y0, y1) = (0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.05).max(0.5);

    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(50)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc(axis_label(outcome.axis))
        .y_desc("sum rate (bits/s/Hz)")
        .draw()
        .map_err(|e| plot_err(&e))?;
    let palette = [BLUE, RED, GREEN, MAGENTA];
    for (i, (scheme, pts)) in curves.iter().enumerate() {
        let color = palette[i % palette.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(scheme.name())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| plot_err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

pub fn svg_file_name(axis: SweepAxis) -> String {
    format!("sweep_{}.svg", axis.name())
}

/// Write `sweep.csv` and the plot into `dir`; returns both paths.
pub fn write_sweep(dir: &Path, outcome: &SweepOutcome) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(SWEEP_CSV);
    std::fs::write(&csv_path, sweep_csv(outcome)?)?;
    let svg_path = dir.join(svg_file_name(outcome.axis));
    write_sweep_svg(&svg_path, outcome)?;
    Ok((csv_path, svg_path))
}
