//! Text moment files.
//!
//! ```text
//! dims 2 1
//! degree 8
//! box t 0 3.5
//! box u1 -1 1
//! box x1 -2 2
//! box x2 -2 2
//! source oracle
//! y 0 0 0 0 3.4494897427831779e0
//! y 1 0 0 0 5.9495...e0
//! ```
//!
//! One `box` line per coordinate in canonical order, then one `y` line per
//! moment carrying the full multi-index and a 17-significant-digit value.
//! State-only moment vectors add `time 0`. Optional `order` and `problem`
//! keys record provenance; unknown header keys are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::moments::{BoxDomain, Coord, Interval, Layout, MomentVector, MultiIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct MomentFile {
    pub moments: MomentVector,
    /// `oracle`, `external-sdp`, ...
    pub source: String,
    pub relaxation_order: Option<u32>,
    pub problem: Option<String>,
}

impl MomentFile {
    pub fn from_oracle(moments: MomentVector, problem: &str) -> Self {
        MomentFile {
            moments,
            source: "oracle".into(),
            relaxation_order: None,
            problem: Some(problem.to_string()),
        }
    }

    pub fn to_text(&self) -> String {
        let y = &self.moments;
        let layout = y.layout();
        let mut s = String::new();
        writeln!(s, "dims {} {}", layout.states, layout.controls).unwrap();
        if !layout.time {
            writeln!(s, "time 0").unwrap();
        }
        writeln!(s, "degree {}", y.degree()).unwrap();
        for (p, iv) in y.domain().intervals().iter().enumerate() {
            writeln!(s, "box {} {:?} {:?}", layout.coord(p), iv.lo, iv.hi).unwrap();
        }
        writeln!(s, "source {}", self.source).unwrap();
        if let Some(r) = self.relaxation_order {
            writeln!(s, "order {r}").unwrap();
        }
        if let Some(p) = &self.problem {
            writeln!(s, "problem {p}").unwrap();
        }
        for (alpha, v) in y.iter() {
            s.push('y');
            for e in alpha.entries() {
                write!(s, " {e}").unwrap();
            }
            writeln!(s, " {v:.16e}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dims = None;
        let mut time = true;
        let mut degree = None;
        let mut boxes: Vec<(Coord, Interval)> = Vec::new();
        let mut source = None;
        let mut order = None;
        let mut problem = None;
        let mut entries = BTreeMap::new();

        for (i, raw) in text.lines().enumerate() {
            let number = i + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            let Some(&key) = toks.first() else {
                continue;
            };
            if key.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                line: number,
                column: 1,
                message: msg,
            };
            let int = |k: usize| -> Result<u32> {
                toks.get(k)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(format!("bad integer in `{raw}`")))
            };
            let real = |k: usize| -> Result<f64> {
                toks.get(k)
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| err(format!("bad number in `{raw}`")))
            };
            match key {
                "dims" => dims = Some((int(1)? as usize, int(2)? as usize)),
                "time" => time = int(1)? != 0,
                "degree" => {
                    let d = int(1)?;
                    if d % 2 != 0 {
                        return Err(Error::OddDegree(d));
                    }
                    degree = Some(d);
                }
                "box" => {
                    let c = toks
                        .get(1)
                        .and_then(|t| Coord::parse(t))
                        .ok_or_else(|| err(format!("bad coordinate in `{raw}`")))?;
                    boxes.push((c, Interval::new(real(2)?, real(3)?)));
                }
                "source" => source = toks.get(1).map(|s| s.to_string()),
                "order" => order = Some(int(1)?),
                "problem" => problem = toks.get(1).map(|s| s.to_string()),
                "y" => {
                    let (n, m) = dims.ok_or_else(|| err("`dims` must precede moments".into()))?;
                    let q = usize::from(time) + m + n;
                    if toks.len() != q + 2 {
                        return Err(Error::DimensionMismatch {
                            expected: q,
                            got: toks.len().saturating_sub(2),
                        });
                    }
                    let alpha = MultiIndex::new((1..=q).map(int).collect::<Result<_>>()?);
                    let v = real(q + 1)?;
                    if let Some(d) = degree {
                        if alpha.degree() > d {
                            return Err(err(format!("moment {alpha} exceeds degree {d}")));
                        }
                    }
                    if entries.insert(alpha.clone(), v).is_some() {
                        return Err(Error::DuplicateMoment(alpha));
                    }
                }
                _ => {}
            }
        }

        let missing = |what: &str| Error::Parse {
            line: 0,
            column: 0,
            message: format!("missing `{what}` header"),
        };
        let (n, m) = dims.ok_or_else(|| missing("dims"))?;
        let degree = degree.ok_or_else(|| missing("degree"))?;
        let layout = Layout {
            time,
            controls: m,
            states: n,
        };
        let intervals = layout
            .coords()
            .into_iter()
            .map(|c| {
                boxes
                    .iter()
                    .find(|b| b.0 == c)
                    .map(|b| b.1)
                    .ok_or_else(|| missing(&format!("box {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let domain = BoxDomain::new(intervals)?;
        let zero = MultiIndex::zero(layout.dim());
        if !entries.contains_key(&zero) {
            return Err(Error::MissingMoment(zero));
        }
        if let Some(gap) = crate::moments::enumerate_indices(layout.dim(), degree)
            .into_iter()
            .find(|a| !entries.contains_key(a))
        {
            return Err(Error::MissingMoment(gap));
        }
        Ok(MomentFile {
            moments: MomentVector::new(layout, degree, domain, entries)?,
            source: source.unwrap_or_else(|| "unknown".into()),
            relaxation_order: order,
            problem,
        })
    }
}

pub fn save_moments(file: &MomentFile, path: &Path) -> Result<()> {
    std::fs::write(path, file.to_text())?;
    Ok(())
}

pub fn load_moments(path: &Path) -> Result<MomentFile> {
    MomentFile::parse(&std::fs::read_to_string(path)?)
}
