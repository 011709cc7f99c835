//! Constrained lamp placement and attenuation tuning.
//!
//! The objective is the mean field over a set of target points. Each lamp may move
//! at most `R` meters from its anchor (`g = d² − R² ≤ 0`), and must keep at least a
//! fraction `Ω` of its brightness at distance `R` (`h = Ω(1 + c₁y + c₂y²) − 1 ≤ 0`
//! with `y = αR`). All lamps are optimized together as one stacked vector.

pub mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fieldmap::{FieldModel, Scenario, ScenarioError};
use crate::geo::{cells_in, GeoError, GeoPoint, GeoPolygon, LocalFrame, Meters};
use crate::lightmodel::{AttenuationParams, LightSource};
use solver::{IterRecord, Problem, SolverError, SolverOptions};

/// Largest number of evaluation points drawn from a polygon target.
pub const MAX_EVAL_POINTS: usize = 2000;
/// Target points closer than this to an initial lamp position are dropped.
pub const SOURCE_EXCLUSION_M: f64 = 1e-3;
/// Bounds on the tunable attenuation coefficients.
pub const COEFF_BOUNDS: (f64, f64) = (0.0, 10.0);

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("target yields no evaluation points")]
    EmptyTarget,
    #[error("scenario has no light sources")]
    NoSources,
    #[error("unknown protected area {0:?}")]
    UnknownArea(String),
    #[error("invalid optimization spec: {0}")]
    InvalidSpec(String),
    #[error("initial point is infeasible (violation {max_violation:.3e}) and could not be restored")]
    Infeasible { max_violation: f64 },
    #[error("solver failure: {0}")]
    Solver(SolverError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Placement,
    TuneC1,
    TuneC2,
    Joint,
}

impl Mode {
    fn moves(self) -> bool {
        matches!(self, Mode::Placement | Mode::Joint)
    }

    fn tunes_c1(self) -> bool {
        matches!(self, Mode::TuneC1 | Mode::Joint)
    }

    fn tunes_c2(self) -> bool {
        matches!(self, Mode::TuneC2 | Mode::Joint)
    }

    fn tunes(self) -> bool {
        self.tunes_c1() || self.tunes_c2()
    }

    fn vars_per_source(self) -> usize {
        match self {
            Mode::Placement => 2,
            Mode::TuneC1 | Mode::TuneC2 => 1,
            Mode::Joint => 4,
        }
    }
}

/// Where the objective is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// A protected area of the scenario, by name.
    Area(String),
    Polygon(GeoPolygon),
    Points(Vec<GeoPoint>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSpec {
    pub mode: Mode,
    #[serde(rename = "slack_R_m", alias = "slack_r_m", default = "default_slack")]
    pub slack_r_m: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    pub target: Target,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_slack() -> f64 {
    50.0
}

fn default_omega() -> f64 {
    0.2
}

fn default_max_iters() -> usize {
    200
}

fn default_tolerance() -> f64 {
    1e-8
}

impl OptimizationSpec {
    pub fn new(mode: Mode, target: Target) -> Self {
        Self {
            mode,
            slack_r_m: default_slack(),
            omega: default_omega(),
            target,
            max_iters: default_max_iters(),
            tolerance: default_tolerance(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(OptimizeError::InvalidSpec(format!("omega must be in (0, 1), got {}", self.omega)));
        }
        if !(self.slack_r_m > 0.0 && self.slack_r_m.is_finite()) {
            return Err(OptimizeError::InvalidSpec(format!("slack_R_m must be positive, got {}", self.slack_r_m)));
        }
        if self.max_iters == 0 {
            return Err(OptimizeError::InvalidSpec("max_iters must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(OptimizeError::InvalidSpec(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        match &self.target {
            Target::Points(p) if p.is_empty() => Err(OptimizeError::EmptyTarget),
            _ => Ok(()),
        }
    }
}

/// Lamp state on one side of an optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceState {
    pub lat: f64,
    pub lon: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SourceState {
    fn of(s: &LightSource) -> Self {
        Self { lat: s.position.lat(), lon: s.position.lon(), c1: s.params.c1(), c2: s.params.c2() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub id: String,
    pub before: SourceState,
    pub after: SourceState,
    /// `d² − R²` in m²; present when positions are free.
    pub g_residual: Option<f64>,
    /// `Ω(1 + c₁y + c₂y²) − 1`; present when coefficients are free.
    pub h_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub mode: Mode,
    pub sources: Vec<LightSource>,
    pub rows: Vec<SourceRow>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub max_g_residual: Option<f64>,
    pub max_h_residual: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity: f64,
    pub evaluation_points: usize,
    pub trace: Vec<IterRecord>,
}

impl OptimizationResult {
    /// The scenario with the optimized lamps substituted.
    pub fn apply(&self, scenario: &Scenario) -> Result<Scenario, ScenarioError> {
        let mut out = scenario.clone();
        out.set_sources(self.sources.clone())?;
        Ok(out)
    }
}

/// Placement residual `d²(p, p₀) − R²`.
pub fn g_constraint(p: &GeoPoint, p0: &GeoPoint, r_m: f64, frame: &LocalFrame) -> f64 {
    let d = frame.project_unchecked(p).dist(&frame.project_unchecked(p0));
    d * d - r_m * r_m
}

/// Brightness-floor residual `Ω(1 + c₁y + c₂y²) − 1`.
pub fn h_constraint(c1: f64, c2: f64, omega: f64, y: f64) -> f64 {
    omega * (1.0 + c1 * y + c2 * y * y) - 1.0
}

/// Evaluation points for a target, with lamp-coincident points removed.
pub fn evaluation_points(scenario: &Scenario, target: &Target) -> Result<Vec<GeoPoint>, OptimizeError> {
    let raw = match target {
        Target::Points(p) => p.clone(),
        Target::Area(name) => {
            let poly = scenario.area(name).ok_or_else(|| OptimizeError::UnknownArea(name.clone()))?;
            polygon_points(scenario, poly)?
        }
        Target::Polygon(poly) => polygon_points(scenario, poly)?,
    };
    let frame = scenario.frame();
    let lamps: Vec<Meters> = scenario.sources().iter().map(|s| frame.project_unchecked(&s.position)).collect();
    let pts: Vec<GeoPoint> = raw
        .into_iter()
        .filter(|p| {
            let q = frame.project_unchecked(p);
            lamps.iter().all(|l| l.dist(&q) >= SOURCE_EXCLUSION_M)
        })
        .collect();
    if pts.is_empty() {
        return Err(OptimizeError::EmptyTarget);
    }
    Ok(pts)
}

fn polygon_points(scenario: &Scenario, poly: &GeoPolygon) -> Result<Vec<GeoPoint>, OptimizeError> {
    let grid = scenario.grid_spec()?;
    let cells = cells_in(poly, &grid);
    let k = cells.len().div_ceil(MAX_EVAL_POINTS).max(1);
    Ok(cells.into_iter().step_by(k).map(|i| grid.index_center(i)).collect())
}

/// Mean field over the target's evaluation points.
pub fn objective(scenario: &Scenario, target: &Target) -> Result<f64, OptimizeError> {
    if scenario.sources().is_empty() {
        return Err(OptimizeError::NoSources);
    }
    let pts = evaluation_points(scenario, target)?;
    let model = scenario.field_model();
    let frame = scenario.frame();
    Ok(mean_field(&model, &pts.iter().map(|p| frame.project_unchecked(p)).collect::<Vec<_>>()))
}

fn mean_field(model: &FieldModel, pts: &[Meters]) -> f64 {
    pts.iter().map(|q| model.eval(*q)).sum::<f64>() / pts.len() as f64
}

struct LampProblem {
    mode: Mode,
    anchors: Vec<Meters>,
    params: Vec<AttenuationParams>,
    points: Vec<Meters>,
    r: f64,
    omega: f64,
}

impl LampProblem {
    /// Positions and coefficients encoded by `x`.
    fn decode(&self, x: &[f64]) -> Vec<(Meters, f64, f64)> {
        let k = self.mode.vars_per_source();
        self.anchors
            .iter()
            .zip(&self.params)
            .enumerate()
            .map(|(i, (a, p))| {
                let v = &x[i * k..(i + 1) * k];
                match self.mode {
                    Mode::Placement => (Meters::new(a.x + v[0], a.y + v[1]), p.c1(), p.c2()),
                    Mode::TuneC1 => (*a, v[0], p.c2()),
                    Mode::TuneC2 => (*a, p.c1(), v[0]),
                    Mode::Joint => (Meters::new(a.x + v[0], a.y + v[1]), v[2], v[3]),
                }
            })
            .collect()
    }

    fn initial(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| match self.mode {
                Mode::Placement => vec![0.0, 0.0],
                Mode::TuneC1 => vec![p.c1()],
                Mode::TuneC2 => vec![p.c2()],
                Mode::Joint => vec![0.0, 0.0, p.c1(), p.c2()],
            })
            .collect()
    }

    fn y(&self, i: usize) -> f64 {
        self.params[i].alpha() * self.r
    }
}

impl Problem for LampProblem {
    fn dim(&self) -> usize {
        self.anchors.len() * self.mode.vars_per_source()
    }

    fn num_constraints(&self) -> usize {
        let per = usize::from(self.mode.moves()) + usize::from(self.mode.tunes());
        self.anchors.len() * per
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let lamps = self
            .decode(x)
            .into_iter()
            .zip(&self.params)
            .map(|((m, c1, c2), p)| (m, AttenuationParams::raw(p.i0(), c1.max(0.0), c2.max(0.0), p.alpha())))
            .collect();
        mean_field(&FieldModel::new(lamps), &self.points)
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        let mut j = 0;
        for (i, (m, c1, c2)) in self.decode(x).into_iter().enumerate() {
            if self.mode.moves() {
                let d2 = (m.x - self.anchors[i].x).powi(2) + (m.y - self.anchors[i].y).powi(2);
                // normalized so all residuals are O(1)
                out[j] = d2 / (self.r * self.r) - 1.0;
                j += 1;
            }
            if self.mode.tunes() {
                out[j] = h_constraint(c1, c2, self.omega, self.y(i));
                j += 1;
            }
        }
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        let per: Vec<(f64, f64)> = match self.mode {
            Mode::Placement => vec![(-self.r, self.r); 2],
            Mode::TuneC1 | Mode::TuneC2 => vec![COEFF_BOUNDS],
            Mode::Joint => vec![(-self.r, self.r), (-self.r, self.r), COEFF_BOUNDS, COEFF_BOUNDS],
        };
        per.iter().copied().cycle().take(self.dim()).collect()
    }

    fn scale(&self) -> Vec<f64> {
        let per: Vec<f64> = match self.mode {
            Mode::Placement => vec![self.r; 2],
            Mode::TuneC1 | Mode::TuneC2 => vec![1.0],
            Mode::Joint => vec![self.r, self.r, 1.0, 1.0],
        };
        per.iter().copied().cycle().take(self.dim()).collect()
    }
}

/// Pulls a lamp state exactly onto the feasible set.
fn make_feasible(mode: Mode, offset: Meters, c1: f64, c2: f64, r: f64, omega: f64, y: f64) -> (Meters, f64, f64) {
    let mut offset = offset;
    let d = offset.norm();
    // a hair inside the disk absorbs projection round-off
    let rmax = r * (1.0 - 1e-9);
    if d > rmax {
        offset = Meters::new(offset.x * rmax / d, offset.y * rmax / d);
    }
    let (lo, hi) = COEFF_BOUNDS;
    let (mut c1, mut c2) = (c1.clamp(lo, hi), c2.clamp(lo, hi));
    if mode.tunes() && h_constraint(c1, c2, omega, y) > 0.0 {
        let budget = 1.0 / omega - 1.0;
        match mode {
            Mode::TuneC1 => c1 = ((budget - c2 * y * y) / y).max(0.0),
            Mode::TuneC2 => c2 = ((budget - c1 * y) / (y * y)).max(0.0),
            _ => {
                let s = budget / (c1 * y + c2 * y * y);
                c1 *= s;
                c2 *= s;
            }
        }
    }
    (offset, c1, c2)
}

/// Runs the optimization described by `spec` on `scenario`.
pub fn solve(scenario: &Scenario, spec: &OptimizationSpec) -> Result<OptimizationResult, OptimizeError> {
    spec.validate()?;
    if scenario.sources().is_empty() {
        return Err(OptimizeError::NoSources);
    }
    let frame = scenario.frame();
    let points: Vec<Meters> = evaluation_points(scenario, &spec.target)?.iter().map(|p| frame.project_unchecked(p)).collect();
    let problem = LampProblem {
        mode: spec.mode,
        anchors: scenario.sources().iter().map(|s| frame.project_unchecked(&s.position)).collect(),
        params: scenario.sources().iter().map(|s| s.params).collect(),
        points,
        r: spec.slack_r_m,
        omega: spec.omega,
    };
    let x0 = problem.initial();
    let objective_before = problem.objective(&x0);
    let opts = SolverOptions { max_iters: spec.max_iters, tolerance: spec.tolerance, ..SolverOptions::default() };
    let outcome = solver::minimize(&problem, &x0, &opts).map_err(|e| match e {
        SolverError::Infeasible { max_violation } => OptimizeError::Infeasible { max_violation },
        other => OptimizeError::Solver(other),
    })?;

    let decoded = problem.decode(&outcome.x);
    let mut sources = Vec::with_capacity(decoded.len());
    let mut rows = Vec::with_capacity(decoded.len());
    for (i, ((m, c1, c2), src)) in decoded.into_iter().zip(scenario.sources()).enumerate() {
        let anchor = problem.anchors[i];
        let (off, c1, c2) = make_feasible(
            spec.mode,
            Meters::new(m.x - anchor.x, m.y - anchor.y),
            c1,
            c2,
            spec.slack_r_m,
            spec.omega,
            problem.y(i),
        );
        let mut out = src.clone();
        if spec.mode.moves() {
            out.position = frame.unproject(Meters::new(anchor.x + off.x, anchor.y + off.y))?;
        }
        if spec.mode.tunes_c1() || spec.mode.tunes_c2() {
            let p = src.params;
            out.set_params(AttenuationParams::raw(p.i0(), c1, c2, p.alpha()));
        }
        rows.push(SourceRow {
            id: src.id.clone(),
            before: SourceState::of(src),
            after: SourceState::of(&out),
            g_residual: spec.mode.moves().then(|| g_constraint(&out.position, &src.position, spec.slack_r_m, frame)),
            h_residual: spec.mode.tunes().then(|| h_constraint(out.params.c1(), out.params.c2(), spec.omega, problem.y(i))),
        });
        sources.push(out);
    }

    let final_x = encode(&problem, scenario, &sources);
    let mut objective_after = problem.objective(&final_x);
    let initially_feasible = {
        let mut c = vec![0.0; problem.num_constraints()];
        problem.constraints(&x0, &mut c);
        c.iter().all(|v| *v <= 0.0)
    };
    if initially_feasible && objective_after > objective_before {
        // never hand back something worse than the feasible starting point
        sources = scenario.sources().to_vec();
        for row in &mut rows {
            row.after = row.before;
        }
        objective_after = objective_before;
    }

    let max_of = |f: fn(&SourceRow) -> Option<f64>| rows.iter().filter_map(f).reduce(f64::max);
    Ok(OptimizationResult {
        mode: spec.mode,
        max_g_residual: max_of(|r| r.g_residual),
        max_h_residual: max_of(|r| r.h_residual),
        sources,
        rows,
        objective_before,
        objective_after,
        iterations: outcome.iterations,
        converged: outcome.converged(),
        stationarity: outcome.stationarity,
        evaluation_points: problem.points.len(),
        trace: outcome.trace,
    })
}

fn encode(problem: &LampProblem, scenario: &Scenario, sources: &[LightSource]) -> Vec<f64> {
    let frame = scenario.frame();
    sources
        .iter()
        .zip(&problem.anchors)
        .flat_map(|(s, a)| {
            let m = frame.project_unchecked(&s.position);
            let (dx, dy) = (m.x - a.x, m.y - a.y);
            match problem.mode {
                Mode::Placement => vec![dx, dy],
                Mode::TuneC1 => vec![s.params.c1()],
                Mode::TuneC2 => vec![s.params.c2()],
                Mode::Joint => vec![dx, dy, s.params.c1(), s.params.c2()],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldmap::{field_at, BBox};
    use crate::lightmodel::attenuate;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn scenario(sources: Vec<LightSource>) -> Scenario {
        Scenario::builder("opt", BBox::new(pt(29.99, -82.01), pt(30.01, -81.99)).unwrap()).sources(sources).build().unwrap()
    }

    fn lamp(id: &str, p: GeoPoint, c1: f64, c2: f64) -> LightSource {
        LightSource::new(id, p, AttenuationParams::new(16.0, c1, c2, 0.1).unwrap())
    }

    /// A point `dx` meters east and `dy` north of `origin`.
    fn offset(s: &Scenario, origin: GeoPoint, dx: f64, dy: f64) -> GeoPoint {
        let m = s.frame().project_unchecked(&origin);
        s.frame().unproject(Meters::new(m.x + dx, m.y + dy)).unwrap()
    }

    #[test]
    fn constraint_examples() {
        let s = scenario(vec![]);
        let p0 = pt(30.0, -82.0);
        assert_eq!(g_constraint(&p0, &p0, 50.0, s.frame()), -2500.0);
        let p60 = offset(&s, p0, 60.0, 0.0);
        assert!((g_constraint(&p60, &p0, 50.0, s.frame()) - 1100.0).abs() < 1e-6);
        let p50 = offset(&s, p0, 0.0, 50.0);
        assert!(g_constraint(&p50, &p0, 50.0, s.frame()).abs() < 1e-6);
        assert!(h_constraint(0.65, 0.03, 0.2, 5.0).abs() < 1e-12);
        assert!(h_constraint(0.03, 0.154, 0.2, 5.0).abs() < 1e-12);
        assert!((h_constraint(0.0, 0.0, 0.2, 5.0) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn h_sign_matches_brightness_floor() {
        for (c1, c2) in [(0.1, 0.03), (0.65, 0.03), (1.0, 0.03), (0.0, 0.5)] {
            let p = AttenuationParams::new(16.0, c1, c2, 0.1).unwrap();
            let bright_enough = attenuate(50.0, &p).unwrap() >= 0.2 * 16.0 - 1e-12;
            assert_eq!(h_constraint(c1, c2, 0.2, 5.0) <= 1e-12, bright_enough, "{c1} {c2}");
        }
    }

    #[test]
    fn single_point_objective_is_field_value() {
        let s = scenario(vec![lamp("a", pt(30.0, -82.0), 0.0, 0.03)]);
        let q = offset(&s, pt(30.0, -82.0), 30.0, 40.0);
        let v = objective(&s, &Target::Points(vec![q])).unwrap();
        assert!((v - field_at(&s, &q).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn three_points_two_sources_match_hand_mean() {
        let a = pt(30.0, -82.0);
        let s0 = scenario(vec![]);
        let b = offset(&s0, a, 100.0, 0.0);
        let s = scenario(vec![lamp("a", a, 0.2, 0.03), lamp("b", b, 0.5, 0.1)]);
        let qs: Vec<GeoPoint> = [(20.0, 10.0), (50.0, -30.0), (80.0, 5.0)].iter().map(|(x, y)| offset(&s, a, *x, *y)).collect();
        // independent evaluation: inverse-square weighted mean of the two lamp values
        let hand: f64 = [(20.0, 10.0), (50.0, -30.0), (80.0, 5.0)]
            .iter()
            .map(|(x, y)| {
                let d1 = f64::hypot(*x, *y);
                let d2 = f64::hypot(x - 100.0, *y);
                let l1 = 16.0 / (1.0 + 0.2 * 0.1 * d1 + 0.03 * (0.1 * d1).powi(2));
                let l2 = 16.0 / (1.0 + 0.5 * 0.1 * d2 + 0.1 * (0.1 * d2).powi(2));
                let (w1, w2) = (1.0 / (d1 * d1), 1.0 / (d2 * d2));
                (w1 * l1 + w2 * l2) / (w1 + w2)
            })
            .sum::<f64>()
            / 3.0;
        let v = objective(&s, &Target::Points(qs)).unwrap();
        assert!((v - hand).abs() < 1e-6 * hand, "{v} vs {hand}");
    }

    #[test]
    fn doubling_c1_lowers_objective() {
        let a = pt(30.0, -82.0);
        let s0 = scenario(vec![]);
        let b = offset(&s0, a, 150.0, 40.0);
        let tgt = Target::Polygon(GeoPolygon::rectangle(offset(&s0, a, 20.0, 20.0), offset(&s0, a, 120.0, 90.0)).unwrap());
        let s1 = scenario(vec![lamp("a", a, 0.2, 0.03), lamp("b", b, 0.4, 0.05)]);
        let s2 = scenario(vec![lamp("a", a, 0.4, 0.03), lamp("b", b, 0.8, 0.05)]);
        assert!(objective(&s2, &tgt).unwrap() < objective(&s1, &tgt).unwrap());
    }

    #[test]
    fn empty_target_errors() {
        let a = pt(30.0, -82.0);
        let s = scenario(vec![lamp("a", a, 0.2, 0.03)]);
        assert!(matches!(objective(&s, &Target::Points(vec![a])), Err(OptimizeError::EmptyTarget)));
        assert!(matches!(objective(&s, &Target::Area("nope".into())), Err(OptimizeError::UnknownArea(_))));
    }

    #[test]
    fn polygon_targets_are_decimated() {
        let s = scenario(vec![lamp("a", pt(30.0, -82.0), 0.2, 0.03)]);
        let big = Target::Polygon(GeoPolygon::rectangle(pt(29.995, -82.005), pt(30.005, -81.995)).unwrap());
        let n = evaluation_points(&s, &big).unwrap().len();
        assert!(n <= MAX_EVAL_POINTS && n > MAX_EVAL_POINTS / 2, "{n}");
        assert_eq!(evaluation_points(&s, &big).unwrap(), evaluation_points(&s, &big).unwrap());
    }

    fn tune(mode: Mode, c1: f64, c2: f64) -> OptimizationResult {
        let a = pt(30.0, -82.0);
        let s0 = scenario(vec![]);
        let tgt = Target::Points(vec![offset(&s0, a, 120.0, 0.0), offset(&s0, a, 0.0, -200.0)]);
        let s = scenario(vec![lamp("a", a, c1, c2), lamp("b", offset(&s0, a, 60.0, 60.0), c1, c2)]);
        solve(&s, &OptimizationSpec::new(mode, tgt)).unwrap()
    }

    #[test]
    fn tune_c1_reaches_floor() {
        let r = tune(Mode::TuneC1, 0.0, 0.03);
        assert!(r.converged);
        for s in &r.sources {
            assert!((s.params.c1() - 0.65).abs() < 1e-3, "{}", s.params.c1());
            assert_eq!(s.params.c2(), 0.03);
        }
        assert!(r.max_h_residual.unwrap().abs() < 1e-4);
        assert!(r.objective_after < r.objective_before);
    }

    #[test]
    fn tune_c2_reaches_floor() {
        let r = tune(Mode::TuneC2, 0.03, 0.0);
        for s in &r.sources {
            assert!((s.params.c2() - 0.154).abs() < 1e-3, "{}", s.params.c2());
            assert_eq!(s.params.c1(), 0.03);
        }
    }

    #[test]
    fn tune_mode_keeps_positions() {
        let a = pt(30.0, -82.0);
        let r = tune(Mode::TuneC1, 0.1, 0.03);
        assert_eq!(r.sources[0].position, a);
        assert_eq!(r.rows[0].before.lat, r.rows[0].after.lat);
        assert_eq!(r.rows[0].before.c2, r.rows[0].after.c2);
        assert!(r.rows[0].g_residual.is_none());
    }

    #[test]
    fn infeasible_fixed_coefficient() {
        // c2 alone already exceeds the floor budget, and c1 cannot go negative
        let a = pt(30.0, -82.0);
        let s = scenario(vec![lamp("a", a, 0.9, 0.6)]);
        let s0 = scenario(vec![]);
        let spec = OptimizationSpec::new(Mode::TuneC1, Target::Points(vec![offset(&s0, a, 100.0, 0.0)]));
        assert!(matches!(solve(&s, &spec), Err(OptimizeError::Infeasible { .. })));
    }

    #[test]
    fn infeasible_start_is_restored_when_possible() {
        let r = tune(Mode::TuneC1, 2.0, 0.03);
        for s in &r.sources {
            assert!((s.params.c1() - 0.65).abs() < 1e-3);
        }
    }

    #[test]
    fn placement_moves_away_from_point() {
        let a = pt(30.0, -82.0);
        let s0 = scenario(vec![]);
        let target = offset(&s0, a, 200.0, 0.0);
        let s = scenario(vec![lamp("a", a, 0.0, 0.03)]);
        let r = solve(&s, &OptimizationSpec::new(Mode::Placement, Target::Points(vec![target]))).unwrap();
        let m = s.frame().project_unchecked(&r.sources[0].position);
        let a_m = s.frame().project_unchecked(&a);
        assert!((m.x - a_m.x + 50.0).abs() < 0.5 && (m.y - a_m.y).abs() < 0.5, "{m:?}");
        assert!(r.max_g_residual.unwrap() <= 1e-6);
        let expect = attenuate(250.0, &s.sources()[0].params).unwrap();
        assert!((r.objective_after - expect).abs() < 1e-4);
    }

    #[test]
    fn joint_mode_is_feasible_and_improves() {
        let a = pt(30.0, -82.0);
        let s0 = scenario(vec![]);
        let b = offset(&s0, a, 80.0, 0.0);
        let s = scenario(vec![lamp("a", a, 0.0, 0.03), lamp("b", b, 0.1, 0.03)]);
        let tgt = Target::Polygon(GeoPolygon::rectangle(offset(&s0, a, 20.0, 30.0), offset(&s0, a, 60.0, 90.0)).unwrap());
        let r = solve(&s, &OptimizationSpec::new(Mode::Joint, tgt)).unwrap();
        assert!(r.max_g_residual.unwrap() <= 1e-6);
        assert!(r.max_h_residual.unwrap() <= 1e-6);
        assert!(r.objective_after < r.objective_before);
    }

    #[test]
    fn deterministic() {
        let a = tune(Mode::TuneC1, 0.0, 0.03);
        let b = tune(Mode::TuneC1, 0.0, 0.03);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn spec_validation_and_json() {
        let mut spec = OptimizationSpec::new(Mode::TuneC2, Target::Area("lake".into()));
        spec.omega = 1.0;
        assert!(matches!(spec.validate(), Err(OptimizeError::InvalidSpec(_))));
        let parsed: OptimizationSpec =
            serde_json::from_str(r#"{"mode":"tune_c1","slack_R_m":50,"omega":0.2,"target":{"points":[{"lat":30.0,"lon":-82.0}]}}"#).unwrap();
        assert_eq!(parsed.mode, Mode::TuneC1);
        assert_eq!(parsed.max_iters, 200);
        let back: OptimizationSpec = serde_json::from_str(&serde_json::to_string(&parsed).unwrap()).unwrap();
        assert_eq!(back, parsed);
    }

    #[test]
    fn max_iters_gives_unconverged_feasible_result() {
        let a = pt(30.0, -82.0);
        let s0 = scenario(vec![]);
        let s = scenario(vec![lamp("a", a, 0.0, 0.03)]);
        let mut spec = OptimizationSpec::new(Mode::Joint, Target::Points(vec![offset(&s0, a, 200.0, 0.0)]));
        spec.max_iters = 1;
        let r = solve(&s, &spec).unwrap();
        assert!(!r.converged);
        assert!(r.max_g_residual.unwrap() <= 1e-6 && r.max_h_residual.unwrap() <= 1e-6);
    }
}
