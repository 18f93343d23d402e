//! Plain-text problem descriptions.
//!
//! ```text
//! # minimum-time double integrator
//! name double_integrator
//! kind ocp                  # or: invariant
//! dims 2 1                  # states, controls
//! box t 0 3.5
//! box u1 -1 1
//! box x1 -2 2
//! box x2 -2 2
//! initial_time 0
//! final_time free           # or a number
//! initial_state 1 1
//! final_state 0 0
//! dynamics x1
//! term 1 0 0 0 1            # coefficient, then exponents of (t, u..., x...)
//! dynamics x2
//! term 1 0 1 0 0
//! cost
//! term 1 0 0 0 0
//! constraint                # g(t, u, x) >= 0, repeatable
//! term ...
//! reference_control 0 -1    # optional piecewise-constant schedule
//! reference_duration 3.449
//! ```
//!
//! Invariant problems use `kind invariant`, `dims n 0`, state boxes only,
//! `initial_state`, `horizon` and optionally `burn_in`; their `term` lines
//! still carry a leading time exponent, which must be zero.

use std::path::Path;

use crate::error::{Error, Result};
use crate::moments::{BoxDomain, Coord, Interval, MultiIndex};
use crate::oracle::{ControlSchedule, FinalTime, InvariantProblem, OcpBuilder, OcpProblem, DEFAULT_BURN_IN_FRACTION};
use crate::poly::Polynomial;

#[derive(Debug, Clone)]
pub enum ProblemSpec {
    Ocp {
        problem: OcpProblem,
        reference: Option<ControlSchedule>,
    },
    Invariant(InvariantProblem),
}

impl ProblemSpec {
    pub fn name(&self) -> &str {
        match self {
            ProblemSpec::Ocp { problem, .. } => &problem.name,
            ProblemSpec::Invariant(p) => &p.name,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Dynamics(usize),
    Cost,
    Constraint(usize),
}

struct Line<'a> {
    number: usize,
    text: &'a str,
    tokens: Vec<(usize, &'a str)>,
}

impl<'a> Line<'a> {
    fn err(&self, token: usize, message: impl Into<String>) -> Error {
        let column = self.tokens.get(token).map_or(self.text.len() + 1, |t| t.0 + 1);
        Error::Parse {
            line: self.number,
            column,
            message: message.into(),
        }
    }

    fn arity(&self, n: usize) -> Result<()> {
        if self.tokens.len() != n + 1 {
            return Err(self.err(
                self.tokens.len().min(n + 1),
                format!(
                    "`{}` expects {n} argument(s), got {}",
                    self.tokens[0].1,
                    self.tokens.len() - 1
                ),
            ));
        }
        Ok(())
    }

    fn num(&self, i: usize) -> Result<f64> {
        let tok = self.tokens.get(i).ok_or_else(|| self.err(i, "missing number"))?.1;
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(i, format!("expected a number, got `{tok}`")))
    }

    fn uint(&self, i: usize) -> Result<usize> {
        let tok = self.tokens.get(i).ok_or_else(|| self.err(i, "missing integer"))?.1;
        tok.parse::<usize>()
            .map_err(|_| self.err(i, format!("expected a nonnegative integer, got `{tok}`")))
    }

    fn nums_from(&self, i: usize) -> Result<Vec<f64>> {
        (i..self.tokens.len()).map(|k| self.num(k)).collect()
    }
}

fn tokenize(number: usize, raw: &str) -> Line<'_> {
    let text = raw.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                tokens.push((s, &text[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push((s, &text[s..]));
    }
    Line { number, text, tokens }
}

pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let mut name = String::from("unnamed");
    let mut kind = "ocp".to_string();
    let mut dims: Option<(usize, usize)> = None;
    let mut boxes: Vec<(Coord, Interval, usize)> = Vec::new();
    let mut t_initial = 0.0;
    let mut final_time = None;
    let mut x_initial = None;
    let mut x_final = None;
    let mut dynamics: Vec<Option<Polynomial>> = Vec::new();
    let mut cost: Option<Polynomial> = None;
    let mut constraints: Vec<Polynomial> = Vec::new();
    let mut schedule: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut ref_duration = None;
    let mut horizon = None;
    let mut burn_in = None;
    let mut section = Section::None;
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line = tokenize(i + 1, raw);
        last_line = i + 1;
        let Some(&(_, key)) = line.tokens.first() else {
            continue;
        };
        let need_dims = |line: &Line| dims.ok_or_else(|| line.err(0, "`dims` must come first"));
        match key {
            "name" => {
                line.arity(1)?;
                name = line.tokens[1].1.to_string();
            }
            "kind" => {
                line.arity(1)?;
                kind = line.tokens[1].1.to_string();
                if kind != "ocp" && kind != "invariant" {
                    return Err(line.err(1, "kind must be `ocp` or `invariant`"));
                }
            }
            "dims" => {
                line.arity(2)?;
                let (n, m) = (line.uint(1)?, line.uint(2)?);
                if n == 0 {
                    return Err(line.err(1, "need at least one state"));
                }
                dims = Some((n, m));
                dynamics = vec![None; n];
            }
            "box" => {
                line.arity(3)?;
                let (n, m) = need_dims(&line)?;
                let coord = Coord::parse(line.tokens[1].1)
                    .filter(|c| match c {
                        Coord::Time => true,
                        Coord::Control(k) => *k < m,
                        Coord::State(j) => *j < n,
                    })
                    .ok_or_else(|| line.err(1, format!("unknown coordinate `{}`", line.tokens[1].1)))?;
                let (lo, hi) = (line.num(2)?, line.num(3)?);
                if !(lo < hi) {
                    return Err(line.err(2, "box needs lo < hi"));
                }
                if boxes.iter().any(|b| b.0 == coord) {
                    return Err(line.err(1, format!("duplicate box for {coord}")));
                }
                boxes.push((coord, Interval::new(lo, hi), line.number));
            }
            "initial_time" => {
                line.arity(1)?;
                t_initial = line.num(1)?;
            }
            "final_time" => {
                line.arity(1)?;
                final_time = Some(if line.tokens[1].1 == "free" {
                    FinalTime::Free
                } else {
                    FinalTime::Fixed(line.num(1)?)
                });
            }
            "initial_state" | "final_state" => {
                let (n, _) = need_dims(&line)?;
                line.arity(n)?;
                let v = line.nums_from(1)?;
                if key == "initial_state" {
                    x_initial = Some(v);
                } else {
                    x_final = Some(v);
                }
            }
            "dynamics" => {
                line.arity(1)?;
                let (n, _) = need_dims(&line)?;
                match Coord::parse(line.tokens[1].1) {
                    Some(Coord::State(j)) if j < n => {
                        if dynamics[j].is_some() {
                            return Err(line.err(1, format!("duplicate dynamics for x{}", j + 1)));
                        }
                        dynamics[j] = Some(Polynomial::zero(0));
                        section = Section::Dynamics(j);
                    }
                    _ => return Err(line.err(1, "dynamics must name a state, e.g. `x1`")),
                }
            }
            "cost" => {
                line.arity(0)?;
                cost = Some(Polynomial::zero(0));
                section = Section::Cost;
            }
            "constraint" => {
                line.arity(0)?;
                constraints.push(Polynomial::zero(0));
                section = Section::Constraint(constraints.len() - 1);
            }
            "term" => {
                let (n, m) = need_dims(&line)?;
                let q = 1 + m + n;
                line.arity(1 + q)?;
                let coef = line.num(1)?;
                let exps = (2..2 + q)
                    .map(|k| line.uint(k).map(|e| e as u32))
                    .collect::<Result<Vec<u32>>>()?;
                let alpha = MultiIndex::new(exps);
                let target = match section {
                    Section::None => return Err(line.err(0, "`term` outside dynamics/cost/constraint")),
                    Section::Dynamics(j) => dynamics[j].as_mut().unwrap(),
                    Section::Cost => cost.as_mut().unwrap(),
                    Section::Constraint(c) => &mut constraints[c],
                };
                if target.dim() == 0 {
                    *target = Polynomial::zero(q);
                }
                target.push(coef, alpha);
            }
            "reference_control" => {
                let (_, m) = need_dims(&line)?;
                line.arity(1 + m)?;
                let t = line.num(1)?;
                if let Some(prev) = schedule.last() {
                    if !(t > prev.0) {
                        return Err(line.err(1, "reference_control times must increase"));
                    }
                }
                schedule.push((t, line.nums_from(2)?));
            }
            "reference_duration" => {
                line.arity(1)?;
                ref_duration = Some(line.num(1)?);
            }
            "horizon" => {
                line.arity(1)?;
                horizon = Some(line.num(1)?);
            }
            "burn_in" => {
                line.arity(1)?;
                burn_in = Some(line.num(1)?);
            }
            other => return Err(line.err(0, format!("unknown key `{other}`"))),
        }
    }

    let eof = |msg: &str| Error::Parse {
        line: last_line.max(1),
        column: 1,
        message: msg.to_string(),
    };
    let (n, m) = dims.ok_or_else(|| eof("missing `dims`"))?;
    let q = 1 + m + n;
    let fix = |p: Polynomial| if p.dim() == 0 { Polynomial::zero(q) } else { p };
    let dynamics: Vec<Polynomial> = dynamics
        .into_iter()
        .enumerate()
        .map(|(j, p)| {
            p.map(fix)
                .ok_or_else(|| eof(&format!("missing dynamics for x{}", j + 1)))
        })
        .collect::<Result<_>>()?;
    let find_box = |c: Coord| -> Result<Interval> {
        boxes
            .iter()
            .find(|b| b.0 == c)
            .map(|b| b.1)
            .ok_or_else(|| eof(&format!("missing box for {c}")))
    };
    let x_box = (0..n).map(|j| find_box(Coord::State(j))).collect::<Result<Vec<_>>>()?;
    let x_initial = x_initial.ok_or_else(|| eof("missing `initial_state`"))?;

    if kind == "invariant" {
        if m != 0 {
            return Err(eof("invariant problems have no controls"));
        }
        let positions: Vec<usize> = (1..q).collect();
        let mut state_dynamics = Vec::with_capacity(n);
        for (j, p) in dynamics.iter().enumerate() {
            if !p.uses_only(&positions) {
                return Err(eof(&format!("dynamics for x{} depend on time", j + 1)));
            }
            let mut s = Polynomial::zero(n);
            for (c, a) in p.terms() {
                s.push(*c, a.project(&positions));
            }
            state_dynamics.push(s);
        }
        let horizon = horizon.ok_or_else(|| eof("missing `horizon`"))?;
        return Ok(ProblemSpec::Invariant(InvariantProblem {
            name,
            dynamics: state_dynamics,
            x_box: BoxDomain::new(x_box)?,
            x0: x_initial,
            horizon,
            burn_in: burn_in.unwrap_or(DEFAULT_BURN_IN_FRACTION * horizon),
        }));
    }

    let problem = OcpBuilder {
        name,
        n,
        m,
        dynamics,
        running_cost: cost.map(fix).unwrap_or_else(|| Polynomial::zero(q)),
        t_initial,
        final_time: final_time.ok_or_else(|| eof("missing `final_time`"))?,
        x_initial,
        x_final: x_final.ok_or_else(|| eof("missing `final_state`"))?,
        t_box: find_box(Coord::Time)?,
        u_box: (0..m).map(|k| find_box(Coord::Control(k))).collect::<Result<_>>()?,
        x_box,
        constraints: constraints.into_iter().map(fix).collect(),
    }
    .build()?;
    let reference = if schedule.is_empty() {
        None
    } else {
        let duration = match (ref_duration, problem.final_time()) {
            (Some(d), _) => d,
            (None, FinalTime::Fixed(tf)) => tf - problem.t_initial(),
            (None, FinalTime::Free) => return Err(eof("free-time reference needs `reference_duration`")),
        };
        Some(ControlSchedule {
            pieces: schedule,
            duration,
        })
    };
    Ok(ProblemSpec::Ocp { problem, reference })
}

pub fn load_problem(path: &Path) -> Result<ProblemSpec> {
    parse_problem(&std::fs::read_to_string(path)?)
}
