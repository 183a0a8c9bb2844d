//! Block and pigeonhole resampling of grouped observations.
//!
//! Block resampling draws `K` levels of one factor with replacement and
//! copies every row of each drawn level, in source order. The pigeonhole
//! scheme draws levels of two crossed factors independently; a row whose
//! levels were drawn `a` and `b` times appears `a * b` times.
//!
//! Levels drawn more than once get distinct labels (`S3#1`, `S3#2`, ...) so a
//! refit treats each copy as its own block. Levels drawn once keep their
//! original label.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroupingFactor, ObservationTable};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMode {
    #[default]
    SingleFactorBlock,
    PigeonholeTwoWay,
}

/// Everything needed to reproduce one resample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub mode: ResampleMode,
    pub factors: Vec<String>,
    pub seed: u64,
    pub replicate_index: u64,
}

impl ResamplePlan {
    pub fn block(factor: impl Into<String>, seed: u64, replicate_index: u64) -> Self {
        Self {
            mode: ResampleMode::SingleFactorBlock,
            factors: vec![factor.into()],
            seed,
            replicate_index,
        }
    }

    pub fn pigeonhole(
        first: impl Into<String>,
        second: impl Into<String>,
        seed: u64,
        replicate_index: u64,
    ) -> Self {
        Self {
            mode: ResampleMode::PigeonholeTwoWay,
            factors: vec![first.into(), second.into()],
            seed,
            replicate_index,
        }
    }

    /// Dispatches on the plan's mode.
    pub fn apply(&self, table: &ObservationTable) -> Result<ResampledTable> {
        match (self.mode, self.factors.as_slice()) {
            (ResampleMode::SingleFactorBlock, [f]) => block_resample(table, f, self),
            (ResampleMode::PigeonholeTwoWay, [a, b]) => pigeonhole_resample(table, a, b, self),
            (mode, fs) => Err(Error::InvalidConfig(format!(
                "{mode:?} resampling needs {} factor(s), got {}",
                if mode == ResampleMode::SingleFactorBlock { 1 } else { 2 },
                fs.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowOrigin {
    pub source: usize,
    /// Number of copies of `source` in the resample.
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampledTable {
    pub table: ObservationTable,
    pub provenance: Vec<RowOrigin>,
}

/// Factor with the largest level entropy among `candidates`; earlier
/// candidates win ties.
pub fn select_bootstrap_factor<S: AsRef<str>>(table: &ObservationTable, candidates: &[S]) -> Result<String> {
    let mut best: Option<(&str, f64)> = None;
    for name in candidates {
        let name = name.as_ref();
        let f = table
            .factor(name)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown factor `{name}`")))?;
        let h = f.entropy();
        match best {
            Some((_, bh)) if h <= bh + 1e-12 => {}
            _ => best = Some((name, h)),
        }
    }
    best.map(|(n, _)| n.to_string())
        .ok_or_else(|| Error::InvalidConfig("no candidate factors".into()))
}

fn draw_counts<R: Rng>(rng: &mut R, levels: usize) -> (Vec<usize>, Vec<usize>) {
    let draws: Vec<usize> = (0..levels).map(|_| rng.random_range(0..levels)).collect();
    let mut counts = vec![0; levels];
    for &d in &draws {
        counts[d] += 1;
    }
    (draws, counts)
}

fn copy_label(original: &str, copy: usize, multiplicity: usize) -> String {
    if multiplicity == 1 {
        original.to_string()
    } else {
        format!("{original}#{copy}")
    }
}

/// Carries an untouched factor along the resampled rows, dropping levels
/// that no longer occur.
fn carry_factor(f: &GroupingFactor, sources: &[usize]) -> GroupingFactor {
    let mut remap = vec![usize::MAX; f.n_levels()];
    for &s in sources {
        remap[f.level_of(s)] = 0;
    }
    let mut levels = Vec::new();
    for (l, slot) in remap.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = levels.len();
            levels.push(f.levels()[l].clone());
        }
    }
    let assignment = sources.iter().map(|&s| remap[f.level_of(s)]).collect();
    GroupingFactor::new(f.name(), levels, assignment).expect("every kept level has rows")
}

/// Interns labels into a factor, in first-appearance order.
struct LabelBuilder {
    levels: Vec<String>,
    assignment: Vec<usize>,
}

impl LabelBuilder {
    fn new() -> Self {
        Self {
            levels: Vec::new(),
            assignment: Vec::new(),
        }
    }

    fn finish(self, name: &str) -> GroupingFactor {
        GroupingFactor::new(name, self.levels, self.assignment).expect("labels are distinct and used")
    }
}

fn assemble(
    table: &ObservationTable,
    sources: &[usize],
    replaced: Vec<GroupingFactor>,
) -> Result<ResampledTable> {
    let p = table.x().ncols();
    let x_src = table.x();
    let x = DMatrix::from_fn(sources.len(), p, |r, j| x_src[(sources[r], j)]);
    let y = sources.iter().map(|&s| table.y()[s]).collect();
    let factors = table
        .factors()
        .iter()
        .map(|f| match replaced.iter().find(|r| r.name() == f.name()) {
            Some(r) => r.clone(),
            None => carry_factor(f, sources),
        })
        .collect();
    let mut mult = vec![0usize; table.n()];
    for &s in sources {
        mult[s] += 1;
    }
    let provenance = sources
        .iter()
        .map(|&s| RowOrigin {
            source: s,
            multiplicity: mult[s],
        })
        .collect();
    Ok(ResampledTable {
        table: ObservationTable::new(y, table.columns().to_vec(), x, factors)?,
        provenance,
    })
}

/// Resamples whole levels of `factor` with replacement.
pub fn block_resample(table: &ObservationTable, factor: &str, plan: &ResamplePlan) -> Result<ResampledTable> {
    let f = table
        .factor(factor)
        .ok_or_else(|| Error::InvalidSpec(format!("unknown factor `{factor}`")))?;
    let k = f.n_levels();
    let mut rows_of = vec![Vec::new(); k];
    for (row, &l) in f.assignment().iter().enumerate() {
        rows_of[l].push(row);
    }
    let mut rng = stream_rng(plan.seed, plan.replicate_index);
    let (draws, counts) = draw_counts(&mut rng, k);

    let mut seen = vec![0usize; k];
    let mut sources = Vec::with_capacity(table.n());
    let mut labels = LabelBuilder::new();
    for &d in &draws {
        seen[d] += 1;
        labels.levels.push(copy_label(&f.levels()[d], seen[d], counts[d]));
        let level = labels.levels.len() - 1;
        for &row in &rows_of[d] {
            sources.push(row);
            labels.assignment.push(level);
        }
    }
    assemble(table, &sources, vec![labels.finish(factor)])
}

/// Two-way pigeonhole resample over crossed factors `first` and `second`.
#[allow(clippy::needless_range_loop)]
pub fn pigeonhole_resample(
    table: &ObservationTable,
    first: &str,
    second: &str,
    plan: &ResamplePlan,
) -> Result<ResampledTable> {
    if first == second {
        return Err(Error::InvalidConfig("pigeonhole factors must differ".into()));
    }
    let fa = table
        .factor(first)
        .ok_or_else(|| Error::InvalidSpec(format!("unknown factor `{first}`")))?;
    let fb = table
        .factor(second)
        .ok_or_else(|| Error::InvalidSpec(format!("unknown factor `{second}`")))?;
    let mut rng = stream_rng(plan.seed, plan.replicate_index);
    let (_, ca) = draw_counts(&mut rng, fa.n_levels());
    let (_, cb) = draw_counts(&mut rng, fb.n_levels());

    // Label index per (level, copy), assigned lazily in output order.
    let mut ids_a: Vec<Vec<usize>> = ca.iter().map(|&c| vec![usize::MAX; c]).collect();
    let mut ids_b: Vec<Vec<usize>> = cb.iter().map(|&c| vec![usize::MAX; c]).collect();
    let mut la = LabelBuilder::new();
    let mut lb = LabelBuilder::new();
    let mut sources = Vec::new();
    for row in 0..table.n() {
        let a = fa.level_of(row);
        let b = fb.level_of(row);
        for r in 0..ca[a] {
            for s in 0..cb[b] {
                if ids_a[a][r] == usize::MAX {
                    ids_a[a][r] = la.levels.len();
                    la.levels.push(copy_label(&fa.levels()[a], r + 1, ca[a]));
                }
                if ids_b[b][s] == usize::MAX {
                    ids_b[b][s] = lb.levels.len();
                    lb.levels.push(copy_label(&fb.levels()[b], s + 1, cb[b]));
                }
                sources.push(row);
                la.assignment.push(ids_a[a][r]);
                lb.assignment.push(ids_b[b][s]);
            }
        }
    }
    if sources.is_empty() {
        return Err(Error::InvalidData("pigeonhole resample selected no rows".into()));
    }
    assemble(table, &sources, vec![la.finish(first), lb.finish(second)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grouped(levels: &[&str]) -> ObservationTable {
        let n = levels.len();
        let y = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let x1 = (0..n).map(|i| i as f64).collect();
        ObservationTable::with_intercept(
            y,
            vec![("x1".into(), x1)],
            vec![GroupingFactor::from_labels("s", levels)],
        )
        .unwrap()
    }

    #[test]
    fn entropy_selection() {
        // A: 50/50, B: 90/10
        let a: Vec<&str> = (0..10).map(|i| if i < 5 { "a1" } else { "a2" }).collect();
        let b: Vec<&str> = (0..10).map(|i| if i < 9 { "b1" } else { "b2" }).collect();
        let t = ObservationTable::with_intercept(
            vec![0.5; 10],
            vec![],
            vec![GroupingFactor::from_labels("A", &a), GroupingFactor::from_labels("B", &b)],
        )
        .unwrap();
        let ha = t.factor("A").unwrap().entropy();
        let hb = t.factor("B").unwrap().entropy();
        assert!((ha - 2f64.ln()).abs() < 1e-12);
        assert!((hb - 0.325083).abs() < 1e-6);
        assert_eq!(select_bootstrap_factor(&t, &["A", "B"]).unwrap(), "A");
        assert_eq!(select_bootstrap_factor(&t, &["B", "A"]).unwrap(), "A");
        assert_eq!(select_bootstrap_factor(&t, &["B"]).unwrap(), "B");
    }

    #[test]
    fn entropy_prefers_more_levels_and_breaks_ties_by_order() {
        let four: Vec<String> = (0..8).map(|i| format!("l{}", i % 4)).collect();
        let two: Vec<String> = (0..8).map(|i| format!("m{}", i % 2)).collect();
        let two_b: Vec<String> = (0..8).map(|i| format!("k{}", i / 4)).collect();
        let t = ObservationTable::with_intercept(
            vec![0.5; 8],
            vec![],
            vec![
                GroupingFactor::from_labels("A", &four),
                GroupingFactor::from_labels("B", &two),
                GroupingFactor::from_labels("C", &two_b),
            ],
        )
        .unwrap();
        assert_eq!(select_bootstrap_factor(&t, &["B", "A"]).unwrap(), "A");
        assert_eq!(select_bootstrap_factor(&t, &["B", "C"]).unwrap(), "B");
        assert_eq!(select_bootstrap_factor(&t, &["C", "B"]).unwrap(), "C");
    }

    #[test]
    fn single_level_is_identity() {
        let t = grouped(&["only", "only", "only"]);
        let r = block_resample(&t, "s", &ResamplePlan::block("s", 1, 0)).unwrap();
        assert_eq!(r.table, t);
    }

    #[test]
    fn duplicated_level_relabels() {
        let t = grouped(&["S1", "S1", "S2", "S3", "S3"]);
        // Find a replicate whose draw duplicates one level.
        for rep in 0..200 {
            let r = block_resample(&t, "s", &ResamplePlan::block("s", 5, rep)).unwrap();
            let f = r.table.factor("s").unwrap();
            assert_eq!(f.n_levels(), 3);
            if let Some(dup) = f.levels().iter().find(|l| l.ends_with("#2")) {
                let base = dup.trim_end_matches("#2");
                assert!(f.levels().contains(&format!("{base}#1")));
                return;
            }
        }
        panic!("no duplicated draw in 200 replicates");
    }

    #[test]
    fn two_levels_enumeration() {
        // K = 2: draws (1,1) duplicate level-1 rows and drop level 2.
        let t = grouped(&["L1", "L1", "L2"]);
        let mut saw_dup = false;
        for rep in 0..100 {
            let r = block_resample(&t, "s", &ResamplePlan::block("s", 3, rep)).unwrap();
            let f = r.table.factor("s").unwrap();
            if f.levels() == ["L1#1", "L1#2"] {
                assert_eq!(r.provenance.iter().map(|o| o.source).collect::<Vec<_>>(), vec![0, 1, 0, 1]);
                assert!(r.provenance.iter().all(|o| o.multiplicity == 2));
                saw_dup = true;
            }
            // Rows of each drawn copy keep their source order.
            for level in 0..f.n_levels() {
                let src: Vec<usize> = (0..r.table.n())
                    .filter(|&i| f.level_of(i) == level)
                    .map(|i| r.provenance[i].source)
                    .collect();
                assert!(src.windows(2).all(|w| w[0] < w[1]));
            }
        }
        assert!(saw_dup);
    }

    #[test]
    fn pigeonhole_product_counts() {
        // 5 rows of (p1, i1), plus other pairs.
        let mut pa = vec!["p1"; 5];
        let mut ib = vec!["i1"; 5];
        pa.extend(["p2", "p2", "p3"]);
        ib.extend(["i2", "i1", "i3"]);
        let t = ObservationTable::with_intercept(
            vec![0.5; 8],
            vec![],
            vec![GroupingFactor::from_labels("p", &pa), GroupingFactor::from_labels("i", &ib)],
        )
        .unwrap();
        for rep in 0..500 {
            let plan = ResamplePlan::pigeonhole("p", "i", 11, rep);
            let mut rng = stream_rng(11, rep);
            let (_, ca) = draw_counts(&mut rng, 3);
            let (_, cb) = draw_counts(&mut rng, 3);
            let r = match pigeonhole_resample(&t, "p", "i", &plan) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let copies = r.provenance.iter().filter(|o| o.source == 0).count();
            assert_eq!(copies, ca[0] * cb[0]);
            if ca[0] == 2 && cb[0] == 3 {
                let pair_rows = r.provenance.iter().filter(|o| o.source < 5).count();
                assert_eq!(pair_rows, 30);
            }
        }
    }

    #[test]
    fn pigeonhole_identity_when_all_drawn_once() {
        let t = ObservationTable::with_intercept(
            vec![0.1, 0.2, 0.3, 0.4],
            vec![],
            vec![
                GroupingFactor::from_labels("a", &["a1", "a2", "a1", "a2"]),
                GroupingFactor::from_labels("b", &["b1", "b1", "b2", "b2"]),
            ],
        )
        .unwrap();
        let mut found = false;
        for rep in 0..200 {
            let mut rng = stream_rng(2, rep);
            let (_, ca) = draw_counts(&mut rng, 2);
            let (_, cb) = draw_counts(&mut rng, 2);
            if ca == [1, 1] && cb == [1, 1] {
                let r = pigeonhole_resample(&t, "a", "b", &ResamplePlan::pigeonhole("a", "b", 2, rep)).unwrap();
                assert_eq!(r.table, t);
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn plan_is_deterministic() {
        let labels: Vec<String> = (0..30).map(|i| format!("s{}", i % 6)).collect();
        let refs: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
        let t = grouped(&refs);
        let plan = ResamplePlan::block("s", 99, 4);
        assert_eq!(plan.apply(&t).unwrap(), plan.apply(&t).unwrap());
    }

    #[test]
    fn relabeling_commutes() {
        let a: Vec<String> = (0..12).map(|i| format!("s{}", i % 4)).collect();
        let b: Vec<String> = (0..12).map(|i| format!("renamed{}", i % 4)).collect();
        let ta = grouped(&a.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        let tb = grouped(&b.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        for rep in 0..20 {
            let ra = block_resample(&ta, "s", &ResamplePlan::block("s", 8, rep)).unwrap();
            let rb = block_resample(&tb, "s", &ResamplePlan::block("s", 8, rep)).unwrap();
            assert_eq!(ra.provenance, rb.provenance);
            assert_eq!(
                ra.table.factor("s").unwrap().assignment(),
                rb.table.factor("s").unwrap().assignment()
            );
        }
    }
}
